use crate::error::{Error, Result};
use crate::tensor::graph::{accumulate, Graph, Node, Op, PoolMode, Var};
use crate::tensor::scalar::Float;
use crate::tensor::tensor::Tensor;

pub fn pool_out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > len {
        return None;
    }
    Some((len - kernel) / stride + 1)
}

/// Bin `i` of `out_len` over a length-`len` axis: `[floor(i*len/out), floor((i+1)*len/out))`.
pub fn adaptive_bin(i: usize, len: usize, out_len: usize) -> (usize, usize) {
    (i * len / out_len, (i + 1) * len / out_len)
}

fn dims3(shape: &[usize], op: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, c, l] => Ok((b, c, l)),
        _ => Err(Error::Shape(format!("{op} needs [B,C,L], got {shape:?}"))),
    }
}

impl<T: Float> Graph<T> {
    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let (b, c, len) = dims3(xv.shape(), "max_pool1d")?;
        let out_len = pool_out_len(len, kernel, stride)
            .ok_or_else(|| Error::Shape(format!("max_pool1d: kernel {kernel} exceeds length {len}")))?;
        let data = xv.data();
        let mut out = Vec::with_capacity(b * c * out_len);
        let mut argmax = Vec::with_capacity(b * c * out_len);
        for row in 0..b * c {
            for o in 0..out_len {
                let start = row * len + o * stride;
                let mut best = start;
                for i in start + 1..start + kernel {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, c, out_len], out),
            Op::MaxPool { x: x.id, argmax },
        ))
    }

    pub fn adaptive_pool1d(&mut self, x: Var, mode: PoolMode, out_len: usize) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let (b, c, len) = dims3(xv.shape(), "adaptive_pool1d")?;
        if out_len == 0 || out_len > len {
            return Err(Error::Shape(format!(
                "adaptive_pool1d: output length {out_len} must lie in 1..={len}"
            )));
        }
        let data = xv.data();
        let mut out = Vec::with_capacity(b * c * out_len);
        let mut argmax = Vec::new();
        for row in 0..b * c {
            for i in 0..out_len {
                let (s, e) = adaptive_bin(i, len, out_len);
                let window = &data[row * len + s..row * len + e];
                match mode {
                    PoolMode::Avg => {
                        out.push(window.iter().copied().sum::<T>() / T::lit((e - s) as f64));
                    }
                    PoolMode::Max => {
                        let mut best = 0;
                        for (j, v) in window.iter().enumerate() {
                            if *v > window[best] {
                                best = j;
                            }
                        }
                        out.push(window[best]);
                        argmax.push(row * len + s + best);
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, c, out_len], out),
            Op::AdaptivePool {
                x: x.id,
                mode,
                argmax,
            },
        ))
    }
}

pub(super) fn scatter_argmax<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    argmax: &[usize],
) {
    if !nodes[x].needs_grad {
        return;
    }
    let mut gx = vec![T::zero(); nodes[x].value.len()];
    for (&i, &v) in argmax.iter().zip(g) {
        gx[i] += v;
    }
    accumulate(nodes, grads, x, &gx);
}

pub(super) fn adaptive_backward<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    mode: PoolMode,
    argmax: &[usize],
    out_shape: &[usize],
) {
    match mode {
        PoolMode::Max => scatter_argmax(nodes, grads, g, x, argmax),
        PoolMode::Avg => {
            if !nodes[x].needs_grad {
                return;
            }
            let len = nodes[x].value.dim(2);
            let out_len = out_shape[2];
            let mut gx = vec![T::zero(); nodes[x].value.len()];
            for (row, gr) in g.chunks(out_len).enumerate() {
                for (i, &v) in gr.iter().enumerate() {
                    let (s, e) = adaptive_bin(i, len, out_len);
                    let share = v / T::lit((e - s) as f64);
                    for slot in &mut gx[row * len + s..row * len + e] {
                        *slot += share;
                    }
                }
            }
            accumulate(nodes, grads, x, &gx);
        }
    }
}
