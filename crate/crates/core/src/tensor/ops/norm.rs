//! Batch normalization over `[B, C, L]` (or `[B, C]`) inputs, per channel.

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::graph::{accumulate, Graph, Node, Op, Var};
use crate::tensor::scalar::Float;
use crate::tensor::tensor::Tensor;

pub(crate) struct BnSaved<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    training: bool,
}

/// Running statistics after one train-mode batch.
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

fn layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [b, c, l] => Some((b, c, l)),
        [b, c] => Some((b, c, 1)),
        _ => None,
    }
}

impl<T: Float> Graph<T> {
    /// Train mode normalizes with batch statistics and returns updated
    /// running statistics; eval mode uses the supplied running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        momentum: f64,
        eps: f64,
    ) -> Result<(Var, Option<RunningStats<T>>)> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let xv = self.value(x);
        let (b, c, l) = layout(xv.shape())
            .ok_or_else(|| Error::Shape(format!("batch_norm1d needs [B,C,L] or [B,C], got {:?}", xv.shape())))?;
        for (what, t) in [
            ("scale", self.value(gamma)),
            ("shift", self.value(beta)),
            ("running mean", running_mean),
            ("running var", running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::Shape(format!("batch_norm1d: {what} {:?} vs {c} channels", t.shape())));
            }
        }
        let training = self.is_training();
        let n = b * l;
        if training && n < 2 {
            warn!("batch_norm1d: a single value per channel has no batch variance");
            return Err(Error::Numerical(
                "batch statistics need at least 2 values per channel in train mode".into(),
            ));
        }
        let eps_t = T::lit(eps);
        let data = xv.data();
        let at = |bi: usize, ci: usize, li: usize| (bi * c + ci) * l + li;

        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if training {
            let nt = T::lit(n as f64);
            for ci in 0..c {
                let mut s = T::zero();
                for bi in 0..b {
                    for li in 0..l {
                        s += data[at(bi, ci, li)];
                    }
                }
                let m = s / nt;
                let mut v = T::zero();
                for bi in 0..b {
                    for li in 0..l {
                        let d = data[at(bi, ci, li)] - m;
                        v += d * d;
                    }
                }
                mean[ci] = m;
                var[ci] = v / nt;
            }
        } else {
            mean.copy_from_slice(running_mean.data());
            var.copy_from_slice(running_var.data());
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();

        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for bi in 0..b {
            for ci in 0..c {
                for li in 0..l {
                    let i = at(bi, ci, li);
                    xhat[i] = (data[i] - mean[ci]) * inv_std[ci];
                    out[i] = gv[ci] * xhat[i] + bv[ci];
                }
            }
        }

        let stats = training.then(|| {
            let m = T::lit(momentum);
            let unbias = T::lit(n as f64 / (n as f64 - 1.0));
            RunningStats {
                mean: Tensor::from_parts(
                    vec![c],
                    (0..c)
                        .map(|ci| (T::one() - m) * running_mean.data()[ci] + m * mean[ci])
                        .collect(),
                ),
                var: Tensor::from_parts(
                    vec![c],
                    (0..c)
                        .map(|ci| (T::one() - m) * running_var.data()[ci] + m * var[ci] * unbias)
                        .collect(),
                ),
            }
        });

        let shape = xv.shape().to_vec();
        let var_out = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                saved: BnSaved {
                    xhat,
                    inv_std,
                    training,
                },
            },
        );
        Ok((var_out, stats))
    }
}

pub(super) fn backward<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    gamma: usize,
    beta: usize,
    saved: &BnSaved<T>,
) {
    let (b, c, l) = layout(nodes[x].value.shape()).expect("validated in forward");
    let at = |bi: usize, ci: usize, li: usize| (bi * c + ci) * l + li;
    let gv = nodes[gamma].value.data();
    let xhat = &saved.xhat;

    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            for li in 0..l {
                let i = at(bi, ci, li);
                sum_g[ci] += g[i];
                sum_gx[ci] += g[i] * xhat[i];
            }
        }
    }
    accumulate(nodes, grads, gamma, &sum_gx);
    accumulate(nodes, grads, beta, &sum_g);

    if nodes[x].needs_grad {
        let mut gx = vec![T::zero(); g.len()];
        let nt = T::lit((b * l) as f64);
        for bi in 0..b {
            for ci in 0..c {
                let k = gv[ci] * saved.inv_std[ci];
                for li in 0..l {
                    let i = at(bi, ci, li);
                    gx[i] = if saved.training {
                        k * (g[i] - sum_g[ci] / nt - xhat[i] * sum_gx[ci] / nt)
                    } else {
                        k * g[i]
                    };
                }
            }
        }
        accumulate(nodes, grads, x, &gx);
    }
}
