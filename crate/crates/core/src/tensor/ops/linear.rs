use crate::error::{Error, Result};
use crate::tensor::graph::{accumulate, Graph, Node, Op, Var};
use crate::tensor::linalg::gemm;
use crate::tensor::scalar::Float;
use crate::tensor::tensor::Tensor;

impl<T: Float> Graph<T> {
    /// `y = x W^T + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (xs, ws) = (self.shape(x), self.shape(w));
        let (&[n, d_in], &[d_out, w_in]) = (xs, ws) else {
            return Err(Error::Shape(format!("linear needs 2-D input and weight, got {xs:?} and {ws:?}")));
        };
        if d_in != w_in {
            return Err(Error::Shape(format!("linear: input width {d_in} vs weight {ws:?}")));
        }
        let mut out = vec![T::zero(); n * d_out];
        if let Some(b) = b {
            self.check(b)?;
            let bv = self.value(b);
            if bv.shape() != [d_out] {
                return Err(Error::Shape(format!("linear: bias {:?} vs {d_out} outputs", bv.shape())));
            }
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            n,
            d_in,
            d_out,
            T::one(),
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            T::one(),
            &mut out,
        );
        Ok(self.push(
            Tensor::from_parts(vec![n, d_out], out),
            Op::Linear {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
        ))
    }
}

pub(super) fn backward<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    w: usize,
    b: Option<usize>,
) {
    let (xv, wv) = (&nodes[x].value, &nodes[w].value);
    let (n, d_in) = (xv.shape()[0], xv.shape()[1]);
    let d_out = wv.shape()[0];
    if nodes[x].needs_grad {
        let mut gx = vec![T::zero(); n * d_in];
        gemm(n, d_out, d_in, T::one(), g, false, wv.data(), false, T::zero(), &mut gx);
        accumulate(nodes, grads, x, &gx);
    }
    if nodes[w].needs_grad {
        let mut gw = vec![T::zero(); d_out * d_in];
        gemm(d_out, n, d_in, T::one(), g, true, xv.data(), false, T::zero(), &mut gw);
        accumulate(nodes, grads, w, &gw);
    }
    if let Some(b) = b {
        if nodes[b].needs_grad {
            let mut gb = vec![T::zero(); d_out];
            for row in g.chunks(d_out) {
                for (a, &v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
            accumulate(nodes, grads, b, &gb);
        }
    }
}
