//! Differentiable operations. Each builder appends one node to the graph;
//! [`backward_node`] routes a node's output gradient to its inputs.

pub mod conv;
pub(crate) mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

use rand::Rng;

use super::graph::{accumulate, Activation, Graph, Node, Op, Var};
use super::scalar::Float;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn same_shape<T: Float>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

fn zip_map<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl<T: Float> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        same_shape(self, a, b, "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a.id, b.id)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        same_shape(self, a, b, "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a.id, b.id)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x).map(|v| v * c);
        Ok(self.push(v, Op::Scale(x.id, c)))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x).map(|v| match kind {
            Activation::Swish => v * sigmoid(v),
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::LeakyRelu(slope) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::lit(slope)
                }
            }
        });
        Ok(self.push(v, Op::Act(kind, x.id)))
    }

    pub fn swish(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Swish, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Tanh, x)
    }

    /// Inverted dropout; the identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        self.check(x)?;
        if !self.is_training() || p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout probability {p} must be < 1")));
        }
        let n = self.value(x).len();
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng().gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let v = Tensor::from_parts(
            self.shape(x).to_vec(),
            self.value(x).data().iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        );
        Ok(self.push(v, Op::Dropout { x: x.id, mask }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x.id)))
    }

    /// Swaps the last two axes of a 3-D tensor: `[B, A, C] -> [B, C, A]`.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let &[b, a, c] = t.shape() else {
            return Err(Error::Shape(format!("transpose12 needs 3-D input, got {:?}", t.shape())));
        };
        let v = Tensor::from_parts(vec![b, c, a], transpose_last2(t.data(), b, a, c));
        Ok(self.push(v, Op::Transpose12(x.id)))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let d = *t.shape().last().unwrap();
        if start + len > d {
            return Err(Error::Shape(format!("slice {start}..{} of axis length {d}", start + len)));
        }
        let rows = t.len() / d;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.data()[r * d + start..r * d + start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.push(Tensor::from_parts(shape, out), Op::SliceLast { x: x.id, start }))
    }

    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        for &x in xs {
            self.check(x)?;
        }
        let lead: Vec<usize> = self.shape(xs[0]).split_last().unwrap().1.to_vec();
        let widths: Vec<usize> = xs.iter().map(|&x| *self.shape(x).last().unwrap()).collect();
        for &x in xs {
            if self.shape(x).split_last().unwrap().1 != lead.as_slice() {
                return Err(Error::Shape("concat_last: leading dimensions differ".into()));
            }
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ids = xs.iter().map(|x| x.id).collect();
        Ok(self.push(Tensor::from_parts(shape, out), Op::ConcatLast(ids)))
    }

    /// Step `t` of a `[B, T, D]` sequence as `[B, D]`.
    pub fn select_time(&mut self, x: Var, t: usize) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let &[b, steps, d] = v.shape() else {
            return Err(Error::Shape(format!("select_time needs [B,T,D], got {:?}", v.shape())));
        };
        if t >= steps {
            return Err(Error::Shape(format!("time index {t} out of {steps}")));
        }
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            let base = (bi * steps + t) * d;
            out.extend_from_slice(&v.data()[base..base + d]);
        }
        Ok(self.push(Tensor::from_parts(vec![b, d], out), Op::SelectTime { x: x.id, t }))
    }

    /// Stacks `[B, D]` steps into `[B, T, D]`.
    pub fn stack_time(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("stack of zero steps".into()));
        }
        for &x in xs {
            self.check(x)?;
            if self.shape(x) != self.shape(xs[0]) || self.shape(x).len() != 2 {
                return Err(Error::Shape("stack_time needs equal [B, D] steps".into()));
            }
        }
        let (b, d) = (self.shape(xs[0])[0], self.shape(xs[0])[1]);
        let steps = xs.len();
        let mut out = vec![T::zero(); b * steps * d];
        for (t, &x) in xs.iter().enumerate() {
            let src = self.value(x).data();
            for bi in 0..b {
                out[(bi * steps + t) * d..(bi * steps + t + 1) * d]
                    .copy_from_slice(&src[bi * d..(bi + 1) * d]);
            }
        }
        let ids = xs.iter().map(|x| x.id).collect();
        Ok(self.push(Tensor::from_parts(vec![b, steps, d], out), Op::StackTime(ids)))
    }

    /// Softmax over the last axis, stabilized by subtracting the row maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = softmax_rows(self.value(x));
        Ok(self.push(v, Op::Softmax(x.id)))
    }

    /// `s[b] = sum_t alpha[b, t] * h[b, t, :]`.
    pub fn weighted_time_sum(&mut self, alpha: Var, h: Var) -> Result<Var> {
        self.check(alpha)?;
        self.check(h)?;
        let (a, hv) = (self.value(alpha), self.value(h));
        let &[b, steps, d] = hv.shape() else {
            return Err(Error::Shape(format!("weighted_time_sum needs [B,T,D], got {:?}", hv.shape())));
        };
        if a.shape() != [b, steps] {
            return Err(Error::Shape(format!(
                "weights {:?} do not match sequence {:?}",
                a.shape(),
                hv.shape()
            )));
        }
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            for t in 0..steps {
                let w = a.data()[bi * steps + t];
                let row = &hv.data()[(bi * steps + t) * d..(bi * steps + t + 1) * d];
                for (o, &v) in out[bi * d..(bi + 1) * d].iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, d], out),
            Op::WeightedTimeSum {
                alpha: alpha.id,
                h: h.id,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x.id)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum::<T>() / T::lit(t.len() as f64);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x.id)))
    }

    /// `sum_b x[b, index[b]]` over a `[B, C]` tensor.
    pub fn gather_sum(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let &[b, c] = t.shape() else {
            return Err(Error::Shape(format!("gather_sum needs [B,C], got {:?}", t.shape())));
        };
        if index.len() != b || index.iter().any(|&i| i >= c) {
            return Err(Error::Usage("gather_sum index out of range".into()));
        }
        let s = index.iter().enumerate().map(|(bi, &i)| t.data()[bi * c + i]).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::GatherSum {
                x: x.id,
                index: index.to_vec(),
            },
        ))
    }
}

pub(crate) fn transpose_last2<T: Float>(src: &[T], b: usize, a: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for bi in 0..b {
        let base = bi * a * c;
        for i in 0..a {
            for j in 0..c {
                out[base + j * a + i] = src[base + i * c + j];
            }
        }
    }
    out
}

pub fn softmax_rows<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    let d = *t.shape().last().unwrap();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(d) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

pub(crate) fn backward_node<T: Float>(
    nodes: &[Node<T>],
    id: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g);
            accumulate(nodes, grads, *b, g);
        }
        Op::Mul(a, b) => {
            if nodes[*a].needs_grad {
                let ga: Vec<T> = g.iter().zip(val(*b).data()).map(|(&g, &y)| g * y).collect();
                accumulate(nodes, grads, *a, &ga);
            }
            if nodes[*b].needs_grad {
                let gb: Vec<T> = g.iter().zip(val(*a).data()).map(|(&g, &x)| g * x).collect();
                accumulate(nodes, grads, *b, &gb);
            }
        }
        Op::Scale(x, c) => {
            let gx: Vec<T> = g.iter().map(|&v| v * *c).collect();
            accumulate(nodes, grads, *x, &gx);
        }
        Op::Act(kind, x) => {
            let xin = val(*x).data();
            let y = node.value.data();
            let gx: Vec<T> = (0..g.len())
                .map(|i| {
                    let d = match kind {
                        Activation::Swish => {
                            let s = sigmoid(xin[i]);
                            s * (T::one() + xin[i] * (T::one() - s))
                        }
                        Activation::Relu => {
                            if xin[i] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Activation::Sigmoid => y[i] * (T::one() - y[i]),
                        Activation::Tanh => T::one() - y[i] * y[i],
                        Activation::LeakyRelu(slope) => {
                            if xin[i] > T::zero() {
                                T::one()
                            } else {
                                T::lit(*slope)
                            }
                        }
                    };
                    g[i] * d
                })
                .collect();
            accumulate(nodes, grads, *x, &gx);
        }
        Op::Linear { x, w, b } => linear::backward(nodes, grads, g, *x, *w, *b),
        Op::Conv1d {
            x,
            w,
            b,
            stride,
            padding,
        } => conv::backward(nodes, grads, g, *x, *w, *b, *stride, *padding),
        Op::BatchNorm {
            x,
            gamma,
            beta,
            saved,
        } => norm::backward(nodes, grads, g, *x, *gamma, *beta, saved),
        Op::MaxPool { x, argmax } => pool::scatter_argmax(nodes, grads, g, *x, argmax),
        Op::AdaptivePool { x, mode, argmax } => {
            pool::adaptive_backward(nodes, grads, g, *x, *mode, argmax, node.value.shape())
        }
        Op::Dropout { x, mask } => {
            let gx: Vec<T> = g.iter().zip(mask).map(|(&g, &m)| g * m).collect();
            accumulate(nodes, grads, *x, &gx);
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, g),
        Op::Transpose12(x) => {
            // Output is [B, C, A]; transposing back gives [B, A, C].
            let s = node.value.shape();
            let gx = transpose_last2(g, s[0], s[1], s[2]);
            accumulate(nodes, grads, *x, &gx);
        }
        Op::SliceLast { x, start } => {
            if nodes[*x].needs_grad {
                let d = *val(*x).shape().last().unwrap();
                let len = *node.value.shape().last().unwrap();
                let mut gx = vec![T::zero(); val(*x).len()];
                for (r, chunk) in g.chunks(len).enumerate() {
                    gx[r * d + start..r * d + start + len].copy_from_slice(chunk);
                }
                accumulate(nodes, grads, *x, &gx);
            }
        }
        Op::ConcatLast(xs) => {
            let total = *node.value.shape().last().unwrap();
            let rows = node.value.len() / total;
            let mut offset = 0;
            for &x in xs {
                let w = *val(x).shape().last().unwrap();
                if nodes[x].needs_grad {
                    let mut gx = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gx.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(nodes, grads, x, &gx);
                }
                offset += w;
            }
        }
        Op::SelectTime { x, t } => {
            if nodes[*x].needs_grad {
                let s = val(*x).shape();
                let (b, steps, d) = (s[0], s[1], s[2]);
                let mut gx = vec![T::zero(); b * steps * d];
                for bi in 0..b {
                    let base = (bi * steps + t) * d;
                    gx[base..base + d].copy_from_slice(&g[bi * d..(bi + 1) * d]);
                }
                accumulate(nodes, grads, *x, &gx);
            }
        }
        Op::StackTime(xs) => {
            let s = node.value.shape();
            let (b, steps, d) = (s[0], s[1], s[2]);
            for (t, &x) in xs.iter().enumerate() {
                if nodes[x].needs_grad {
                    let mut gx = Vec::with_capacity(b * d);
                    for bi in 0..b {
                        let base = (bi * steps + t) * d;
                        gx.extend_from_slice(&g[base..base + d]);
                    }
                    accumulate(nodes, grads, x, &gx);
                }
            }
        }
        Op::Softmax(x) => {
            let y = node.value.data();
            let d = *node.value.shape().last().unwrap();
            let mut gx = vec![T::zero(); y.len()];
            for r in 0..y.len() / d {
                let yr = &y[r * d..(r + 1) * d];
                let gr = &g[r * d..(r + 1) * d];
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..d {
                    gx[r * d + j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(nodes, grads, *x, &gx);
        }
        Op::WeightedTimeSum { alpha, h } => {
            let (a, hv) = (val(*alpha), val(*h));
            let s = hv.shape();
            let (b, steps, d) = (s[0], s[1], s[2]);
            if nodes[*alpha].needs_grad {
                let mut ga = vec![T::zero(); b * steps];
                for bi in 0..b {
                    for t in 0..steps {
                        let row = &hv.data()[(bi * steps + t) * d..(bi * steps + t + 1) * d];
                        ga[bi * steps + t] =
                            row.iter().zip(&g[bi * d..(bi + 1) * d]).map(|(&x, &y)| x * y).sum();
                    }
                }
                accumulate(nodes, grads, *alpha, &ga);
            }
            if nodes[*h].needs_grad {
                let mut gh = vec![T::zero(); b * steps * d];
                for bi in 0..b {
                    for t in 0..steps {
                        let w = a.data()[bi * steps + t];
                        for k in 0..d {
                            gh[(bi * steps + t) * d + k] = w * g[bi * d + k];
                        }
                    }
                }
                accumulate(nodes, grads, *h, &gh);
            }
        }
        Op::Sum(x) => {
            let gx = vec![g[0]; val(*x).len()];
            accumulate(nodes, grads, *x, &gx);
        }
        Op::Mean(x) => {
            let n = val(*x).len();
            let gx = vec![g[0] / T::lit(n as f64); n];
            accumulate(nodes, grads, *x, &gx);
        }
        Op::GatherSum { x, index } => {
            let c = val(*x).shape()[1];
            let mut gx = vec![T::zero(); val(*x).len()];
            for (bi, &i) in index.iter().enumerate() {
                gx[bi * c + i] = g[0];
            }
            accumulate(nodes, grads, *x, &gx);
        }
        Op::FocalLoss {
            probs,
            targets,
            alpha,
            gamma,
        } => loss::focal_backward(nodes, grads, g[0], *probs, targets, *alpha, *gamma),
        Op::BceWithLogits { logits, targets } => {
            loss::bce_backward(nodes, grads, g[0], *logits, targets)
        }
    }
}
