//! 1-D cross-correlation (no kernel flip) via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::graph::{accumulate, Graph, Node, Op, Var};
use crate::tensor::linalg::gemm;
use crate::tensor::scalar::Float;
use crate::tensor::tensor::Tensor;

pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds one `[C, L]` sample into `[C*K, L_out]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Float>(x: &[T], c: usize, len: usize, k: usize, stride: usize, pad: usize, out_len: usize, cols: &mut [T]) {
    for ci in 0..c {
        for ki in 0..k {
            let row = &mut cols[(ci * k + ki) * out_len..(ci * k + ki + 1) * out_len];
            for (o, slot) in row.iter_mut().enumerate() {
                let pos = (o * stride + ki) as isize - pad as isize;
                *slot = if pos >= 0 && (pos as usize) < len {
                    x[ci * len + pos as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(cols: &[T], c: usize, len: usize, k: usize, stride: usize, pad: usize, out_len: usize, x: &mut [T]) {
    for ci in 0..c {
        for ki in 0..k {
            let row = &cols[(ci * k + ki) * out_len..(ci * k + ki + 1) * out_len];
            for (o, &v) in row.iter().enumerate() {
                let pos = (o * stride + ki) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    x[ci * len + pos as usize] += v;
                }
            }
        }
    }
}

impl<T: Float> Graph<T> {
    /// `x: [B, C_in, L]`, `w: [C_out, C_in, K]`, `b: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[batch, c_in, len], &[c_out, w_in, k]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(Error::Shape(format!("conv1d needs [B,C,L] input and [O,C,K] weight, got {xs:?}, {ws:?}")));
        };
        if c_in != w_in {
            return Err(Error::Shape(format!("conv1d: input has {c_in} channels, weight expects {w_in}")));
        }
        let out_len = conv_out_len(len, k, stride, padding).ok_or_else(|| {
            Error::Shape(format!("conv1d: kernel {k} does not fit length {len} with padding {padding}"))
        })?;
        let bias = match b {
            Some(b) => {
                self.check(b)?;
                if self.shape(b) != [c_out] {
                    return Err(Error::Shape(format!("conv1d: bias {:?} vs {c_out} channels", self.shape(b))));
                }
                Some(self.value(b).data().to_vec())
            }
            None => None,
        };

        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); batch * c_out * out_len];
        let mut cols = vec![T::zero(); c_in * k * out_len];
        for bi in 0..batch {
            im2col(&xv[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, k, stride, padding, out_len, &mut cols);
            let y = &mut out[bi * c_out * out_len..(bi + 1) * c_out * out_len];
            if let Some(bias) = &bias {
                for (co, row) in y.chunks_mut(out_len).enumerate() {
                    row.fill(bias[co]);
                }
            }
            gemm(c_out, c_in * k, out_len, T::one(), wv, false, &cols, false, T::one(), y);
        }
        Ok(self.push(
            Tensor::from_parts(vec![batch, c_out, out_len], out),
            Op::Conv1d {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
                stride,
                padding,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    w: usize,
    b: Option<usize>,
    stride: usize,
    padding: usize,
) {
    let (xv, wv) = (&nodes[x].value, &nodes[w].value);
    let (batch, c_in, len) = (xv.dim(0), xv.dim(1), xv.dim(2));
    let (c_out, k) = (wv.dim(0), wv.dim(2));
    let out_len = g.len() / (batch * c_out);
    let ck = c_in * k;

    let need_x = nodes[x].needs_grad;
    let need_w = nodes[w].needs_grad;
    let mut gx = if need_x { vec![T::zero(); xv.len()] } else { Vec::new() };
    let mut gw = if need_w { vec![T::zero(); wv.len()] } else { Vec::new() };
    let mut cols = vec![T::zero(); ck * out_len];
    for bi in 0..batch {
        let gy = &g[bi * c_out * out_len..(bi + 1) * c_out * out_len];
        if need_w {
            im2col(&xv.data()[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, k, stride, padding, out_len, &mut cols);
            gemm(c_out, out_len, ck, T::one(), gy, false, &cols, true, T::one(), &mut gw);
        }
        if need_x {
            gemm(ck, c_out, out_len, T::one(), wv.data(), true, gy, false, T::zero(), &mut cols);
            col2im(&cols, c_in, len, k, stride, padding, out_len, &mut gx[bi * c_in * len..(bi + 1) * c_in * len]);
        }
    }
    if need_x {
        accumulate(nodes, grads, x, &gx);
    }
    if need_w {
        accumulate(nodes, grads, w, &gw);
    }
    if let Some(b) = b {
        if nodes[b].needs_grad {
            let mut gb = vec![T::zero(); c_out];
            for (i, row) in g.chunks(out_len).enumerate() {
                gb[i % c_out] += row.iter().copied().sum::<T>();
            }
            accumulate(nodes, grads, b, &gb);
        }
    }
}
