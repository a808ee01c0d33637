use super::sigmoid;
use crate::error::{Error, Result};
use crate::tensor::graph::{accumulate, Graph, Node, Op, Var};
use crate::tensor::scalar::Float;
use crate::tensor::tensor::Tensor;

/// Lower clamp applied to `p_t` before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Focal loss of one sample with true-class probability `p`.
pub fn focal_term<T: Float>(p: T, alpha: T, gamma: T) -> T {
    let p = p.max(T::lit(PROB_FLOOR));
    -alpha * (T::one() - p).max(T::zero()).powf(gamma) * p.ln()
}

fn focal_derivative<T: Float>(p: T, alpha: T, gamma: T) -> T {
    if p < T::lit(PROB_FLOOR) {
        return T::zero();
    }
    let q = (T::one() - p).max(T::zero());
    let modulated = q.powf(gamma) / p;
    let focus = if gamma == T::zero() || q == T::zero() {
        T::zero()
    } else {
        gamma * q.powf(gamma - T::one()) * p.ln()
    };
    -alpha * (modulated - focus)
}

impl<T: Float> Graph<T> {
    /// Mean focal loss of `[B, C]` class probabilities against class ids.
    pub fn focal_loss(&mut self, probs: Var, targets: &[usize], alpha: T, gamma: T) -> Result<Var> {
        self.check(probs)?;
        let p = self.value(probs);
        let &[b, c] = p.shape() else {
            return Err(Error::Shape(format!("focal_loss needs [B,C], got {:?}", p.shape())));
        };
        if targets.len() != b {
            return Err(Error::Shape(format!("{} targets for a batch of {b}", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Usage(format!("target class {t} outside 0..{c}")));
        }
        if b == 0 {
            return Err(Error::Shape("focal_loss of an empty batch".into()));
        }
        let total: T = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| focal_term(p.data()[i * c + t], alpha, gamma))
            .sum();
        let loss = total / T::lit(b as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::FocalLoss {
                probs: probs.id,
                targets: targets.to_vec(),
                alpha,
                gamma,
            },
        ))
    }

    /// Mean binary cross-entropy of raw logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        self.check(logits)?;
        let x = self.value(logits);
        if x.len() != targets.len() || x.is_empty() {
            return Err(Error::Shape(format!(
                "{} targets for {} logits",
                targets.len(),
                x.len()
            )));
        }
        let total: T = x
            .data()
            .iter()
            .zip(targets)
            .map(|(&v, &y)| v.max(T::zero()) - v * y + (T::one() + (-v.abs()).exp()).ln())
            .sum();
        let loss = total / T::lit(x.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits: logits.id,
                targets: targets.to_vec(),
            },
        ))
    }
}

pub(super) fn focal_backward<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g0: T,
    probs: usize,
    targets: &[usize],
    alpha: T,
    gamma: T,
) {
    if !nodes[probs].needs_grad {
        return;
    }
    let p = &nodes[probs].value;
    let c = p.shape()[1];
    let scale = g0 / T::lit(targets.len() as f64);
    let mut gp = vec![T::zero(); p.len()];
    for (i, &t) in targets.iter().enumerate() {
        gp[i * c + t] = scale * focal_derivative(p.data()[i * c + t], alpha, gamma);
    }
    accumulate(nodes, grads, probs, &gp);
}

pub(super) fn bce_backward<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g0: T,
    logits: usize,
    targets: &[T],
) {
    let x = &nodes[logits].value;
    let scale = g0 / T::lit(x.len() as f64);
    let gx: Vec<T> = x
        .data()
        .iter()
        .zip(targets)
        .map(|(&v, &y)| scale * (sigmoid(v) - y))
        .collect();
    accumulate(nodes, grads, logits, &gx);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::graph::Mode;

    #[test]
    fn focal_examples() {
        assert_eq!(focal_term(1.0f64, 1.0, 2.0), 0.0);
        let v = focal_term(0.5f64, 1.0, 2.0);
        assert!((v - 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((focal_term(0.3f64, 1.0, 0.0) + 0.3f64.ln()).abs() < 1e-15);
        assert!(focal_term(0.0f64, 1.0, 2.0).is_finite());
    }

    #[test]
    fn focal_rejects_bad_target() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let p = g.variable(Tensor::full(&[2, 5], 0.2));
        assert!(matches!(g.focal_loss(p, &[0, 5], 1.0, 2.0), Err(Error::Usage(_))));
    }

    #[test]
    fn focal_gradient_matches_difference() {
        for &(p, gamma) in &[(0.3, 2.0), (0.9, 2.0), (0.5, 0.0), (0.7, 0.5), (1.0, 2.0)] {
            let h = 1e-6;
            let lo: f64 = if p == 1.0 { p - 2.0 * h } else { p - h };
            let hi: f64 = if p == 1.0 { p } else { p + h };
            let num = (focal_term(hi, 1.0, gamma) - focal_term(lo, 1.0, gamma)) / (hi - lo);
            let ana = focal_derivative(p, 1.0, gamma);
            assert!((num - ana).abs() < 1e-4 * (1.0 + ana.abs()), "p={p} g={gamma}: {num} vs {ana}");
        }
    }

    #[test]
    fn bce_matches_direct_formula() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.variable(Tensor::new(&[3], vec![0.3, -2.0, 40.0]).unwrap());
        let l = g.bce_with_logits(x, &[1.0, 0.0, 1.0]).unwrap();
        let direct = [(0.3f64, 1.0f64), (-2.0, 0.0), (40.0, 1.0)]
            .iter()
            .map(|&(v, y)| {
                // -ln(sigmoid(v)) = ln(1 + e^-v); -ln(1 - sigmoid(v)) = ln(1 + e^v)
                y * (-v).exp().ln_1p() + (1.0 - y) * v.exp().ln_1p()
            })
            .sum::<f64>()
            / 3.0;
        assert!((g.value(l).data()[0] - direct).abs() < 1e-12);
        let grads = g.backward(l).unwrap();
        let gx = grads.wrt(x);
        assert!((gx.data()[0] - (sigmoid(0.3f64) - 1.0) / 3.0).abs() < 1e-12);
    }
}
