//! Gradient-weighted class activation maps over the final feature maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub target: usize,
    /// Length equals the input length; min 0 and max 1 unless `constant`.
    pub values: Vec<f64>,
    /// The raw map had no spread and was reported as all zeros.
    pub constant: bool,
}

/// `ReLU(sum_k alpha_k A_k)` with `alpha_k` the time-averaged gradient of
/// channel `k`. Both inputs are `[C, T]` row-major.
pub fn cam_raw(features: &[f64], gradients: &[f64], channels: usize) -> Vec<f64> {
    let t = features.len() / channels;
    let mut cam = vec![0.0; t];
    for k in 0..channels {
        let a = &features[k * t..(k + 1) * t];
        let alpha = gradients[k * t..(k + 1) * t].iter().sum::<f64>() / t as f64;
        for (c, &v) in cam.iter_mut().zip(a) {
            *c += alpha * v;
        }
    }
    cam.iter().map(|&v| v.max(0.0)).collect()
}

/// Linear interpolation with half-sample alignment: output sample `i`
/// reads source position `(i + 0.5) * T / len - 0.5`, clamped to the ends.
pub fn upsample_linear(src: &[f64], len: usize) -> Vec<f64> {
    let t = src.len();
    if t == 1 {
        return vec![src[0]; len];
    }
    let scale = t as f64 / len as f64;
    (0..len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (t - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(t - 1);
            src[lo] + (src[hi] - src[lo]) * (pos - lo as f64)
        })
        .collect()
}

/// Min-max scaling to [0, 1]; a map without spread becomes all zeros.
pub fn min_max(values: &[f64]) -> (Vec<f64>, bool) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return (vec![0.0; values.len()], true);
    }
    (values.iter().map(|v| (v - lo) / (hi - lo)).collect(), false)
}

/// Saliency maps for each row of `beats` (`[n, L]` or `[n, 1, L]`), toward
/// `targets` or the predicted class when `None`.
pub fn grad_cam<T: Float>(model: &Model<T>, beats: &Tensor<T>, targets: Option<&[usize]>) -> Result<Vec<SaliencyMap>> {
    let len = model.descriptor.input_len;
    let n = beats.len() / len.max(1);
    if n * len != beats.len() || n == 0 {
        return Err(Error::Shape(format!(
            "grad_cam expects [n, {len}] beats, got {:?}",
            beats.shape()
        )));
    }
    if model.descriptor.channels.is_empty() {
        return Err(Error::Usage("Grad-CAM needs at least one convolutional layer".into()));
    }
    if let Some(t) = targets {
        if t.len() != n || t.iter().any(|&c| c >= model.descriptor.n_classes) {
            return Err(Error::Usage(format!("grad_cam targets {t:?} do not match {n} beats")));
        }
    }
    let batch = beats.clone().reshaped(&[n, 1, len])?;
    let act = model.capture_activations(&batch, targets)?;
    let shape = act.features.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Usage(format!("feature maps {shape:?} are not [B, C, T]")));
    }
    let (c, t) = (shape[1], shape[2]);
    let feats: Vec<f64> = act.features.cast::<f64>().into_data();
    let grads: Vec<f64> = act.gradients.cast::<f64>().into_data();
    Ok((0..n)
        .map(|i| {
            let span = i * c * t..(i + 1) * c * t;
            let raw = cam_raw(&feats[span.clone()], &grads[span], c);
            let (values, constant) = min_max(&upsample_linear(&raw, len));
            SaliencyMap {
                target: act.targets[i],
                values,
                constant,
            }
        })
        .collect())
}
