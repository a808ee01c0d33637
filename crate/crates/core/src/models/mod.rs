//! The four beat classifiers behind one forward interface.

pub mod checkpoint;
mod descriptor;

use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use descriptor::{
    Architecture, ModelDescriptor, CNP_KERNEL, CNP_PADDING, RES_KERNEL, STEM_KERNEL, STEM_PADDING, STEM_STRIDE,
};

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, Mode, ParamStore, PoolMode, Tensor, Var};

/// A descriptor and the parameters it determines.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Float = f32> {
    pub descriptor: ModelDescriptor,
    pub params: ParamStore<T>,
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[B, n_classes]`.
    pub logits: Var,
    /// Final convolutional feature maps `[B, C, L']`.
    pub features: Var,
    /// Attention weights `[B, T]` for `cnn_lstm_attn`.
    pub attention: Option<Var>,
}

/// Feature maps of the final convolutional block together with the
/// gradient of the summed target-class logits with respect to them.
#[derive(Debug, Clone)]
pub struct Activations<T: Float = f32> {
    pub features: Tensor<T>,
    pub gradients: Tensor<T>,
    pub logits: Tensor<T>,
    pub targets: Vec<usize>,
}

/// Builds a model with freshly initialized parameters.
pub fn build(descriptor: &ModelDescriptor, seed: u64) -> Result<Model> {
    build_with(descriptor, seed)
}

pub fn build_with<T: Float>(descriptor: &ModelDescriptor, seed: u64) -> Result<Model<T>> {
    descriptor.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let d = descriptor;
    let head_in = match d.architecture {
        Architecture::Resnet1d => {
            p.add_conv(&mut rng, "stem.conv", 1, d.stem_channels, STEM_KERNEL)?;
            p.add_batch_norm("stem.bn", d.stem_channels)?;
            let mut c_in = d.stem_channels;
            for (s, &c) in d.channels.iter().enumerate() {
                for b in 0..d.blocks_per_stage {
                    let pre = format!("s{s}.b{b}");
                    let stride = if b == 0 { 2 } else { 1 };
                    p.add_conv(&mut rng, &format!("{pre}.conv1"), c_in, c, RES_KERNEL)?;
                    p.add_batch_norm(&format!("{pre}.bn1"), c)?;
                    p.add_conv(&mut rng, &format!("{pre}.conv2"), c, c, RES_KERNEL)?;
                    p.add_batch_norm(&format!("{pre}.bn2"), c)?;
                    if c_in != c || stride != 1 {
                        p.add_conv(&mut rng, &format!("{pre}.shortcut"), c_in, c, 1)?;
                    }
                    c_in = c;
                }
            }
            c_in
        }
        arch => {
            let mut c_in = 1;
            for (i, &c) in d.channels.iter().enumerate() {
                let pre = format!("b{i}");
                p.add_conv(&mut rng, &format!("{pre}.conv1"), c_in, c, CNP_KERNEL)?;
                p.add_batch_norm(&format!("{pre}.bn1"), c)?;
                p.add_conv(&mut rng, &format!("{pre}.conv2"), c, c, CNP_KERNEL)?;
                p.add_batch_norm(&format!("{pre}.bn2"), c)?;
                if c_in != c {
                    p.add_conv(&mut rng, &format!("{pre}.skip"), c_in, c, 1)?;
                }
                c_in = c;
            }
            if arch.is_recurrent() {
                p.add_bilstm(&mut rng, "rnn", c_in, d.lstm_hidden, d.lstm_layers)?;
                if arch == Architecture::CnnLstmAttn {
                    p.add_attention(&mut rng, "att", 2 * d.lstm_hidden, d.attention_dim)?;
                }
                2 * d.lstm_hidden
            } else {
                c_in
            }
        }
    };
    p.add_dense(&mut rng, "head", head_in, d.n_classes)?;
    Ok(Model {
        descriptor: descriptor.clone(),
        params: p,
    })
}

/// Trainable scalar count implied by a descriptor.
pub fn param_count(descriptor: &ModelDescriptor) -> Result<usize> {
    Ok(build_with::<f32>(descriptor, 0)?.params.param_count())
}

impl<T: Float> Model<T> {
    pub fn architecture(&self) -> Architecture {
        self.descriptor.architecture
    }

    /// Two Swish-activated conv/norm layers, a skip from the block input
    /// (1x1 conv when channels change) and a stride-2 max pool.
    fn conv_norm_pool(&self, g: &mut Graph<T>, pre: &str, x: Var) -> Result<Var> {
        let p = &self.params;
        let h = g.conv(p, &format!("{pre}.conv1"), x, 1, CNP_PADDING)?;
        let h = g.batch_norm(p, &format!("{pre}.bn1"), h)?;
        let h = g.swish(h)?;
        let h = g.conv(p, &format!("{pre}.conv2"), h, 1, CNP_PADDING)?;
        let h = g.batch_norm(p, &format!("{pre}.bn2"), h)?;
        let h = g.swish(h)?;
        let skip_name = format!("{pre}.skip");
        let skip = if p.param(&format!("{skip_name}.weight")).is_some() {
            g.conv(p, &skip_name, x, 1, 0)?
        } else {
            x
        };
        let sum = g.add(h, skip)?;
        g.max_pool1d(sum, 2, 2)
    }

    /// `y = F(x) + shortcut(x)` where `F` is two ReLU-activated conv/norm
    /// layers and the shortcut is a strided 1x1 conv when shapes change.
    pub fn residual_block(&self, g: &mut Graph<T>, pre: &str, x: Var, stride: usize) -> Result<Var> {
        let p = &self.params;
        let h = g.conv(p, &format!("{pre}.conv1"), x, stride, 1)?;
        let h = g.batch_norm(p, &format!("{pre}.bn1"), h)?;
        let h = g.relu(h)?;
        let h = g.conv(p, &format!("{pre}.conv2"), h, 1, 1)?;
        let h = g.batch_norm(p, &format!("{pre}.bn2"), h)?;
        let h = g.relu(h)?;
        let sc_name = format!("{pre}.shortcut");
        let shortcut = if p.param(&format!("{sc_name}.weight")).is_some() {
            g.conv(p, &sc_name, x, stride, 0)?
        } else {
            x
        };
        g.add(h, shortcut)
    }

    /// Logits for a `[B, 1, L]` batch. Graph mode selects batch statistics
    /// and dropout.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<ForwardOutput> {
        let d = &self.descriptor;
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != 1 || shape[2] != d.input_len {
            return Err(Error::Shape(format!(
                "expected input [B, 1, {}], got {shape:?}",
                d.input_len
            )));
        }
        let p = &self.params;
        let mut attention = None;
        let (features, pooled) = match d.architecture {
            Architecture::Resnet1d => {
                let h = g.conv(p, "stem.conv", x, STEM_STRIDE, STEM_PADDING)?;
                let h = g.batch_norm(p, "stem.bn", h)?;
                let h = g.relu(h)?;
                let mut h = g.max_pool1d(h, 2, 2)?;
                for s in 0..d.channels.len() {
                    for b in 0..d.blocks_per_stage {
                        let stride = if b == 0 { 2 } else { 1 };
                        h = self.residual_block(g, &format!("s{s}.b{b}"), h, stride)?;
                    }
                }
                (h, g.adaptive_pool1d(h, PoolMode::Avg, 1)?)
            }
            arch => {
                let mut h = x;
                for i in 0..d.channels.len() {
                    h = self.conv_norm_pool(g, &format!("b{i}"), h)?;
                }
                let features = h;
                if arch.is_recurrent() {
                    let seq = g.transpose12(features)?;
                    let out = g.bilstm(p, "rnn", seq, d.lstm_layers, d.lstm_dropout)?;
                    if arch == Architecture::CnnLstmAttn {
                        let (ctx, alpha) = g.attention_pool(p, "att", out.sequence)?;
                        attention = Some(alpha);
                        (features, ctx)
                    } else {
                        let channels_first = g.transpose12(out.sequence)?;
                        (features, g.adaptive_pool1d(channels_first, PoolMode::Avg, 1)?)
                    }
                } else {
                    (features, g.adaptive_pool1d(features, PoolMode::Avg, 1)?)
                }
            }
        };
        let b = shape[0];
        let width = g.value(pooled).len() / b;
        let flat = g.reshape(pooled, &[b, width])?;
        let logits = g.dense(p, "head", flat)?;
        Ok(ForwardOutput {
            logits,
            features,
            attention,
        })
    }

    /// Eval-mode logits for `[B, 1, L]` (or `[B, L]`) input, processed in
    /// chunks of `chunk` rows.
    pub fn predict(&self, batch: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        let (b, len) = match *batch.shape() {
            [b, 1, l] | [b, l] => (b, l),
            _ => return Err(Error::Shape(format!("cannot predict on shape {:?}", batch.shape()))),
        };
        let chunk = chunk.max(1);
        let k = self.descriptor.n_classes;
        let mut out = Vec::with_capacity(b * k);
        for start in (0..b).step_by(chunk) {
            let n = chunk.min(b - start);
            let data = batch.data()[start * len..(start + n) * len].to_vec();
            let mut g = Graph::new(Mode::Eval);
            let x = g.constant(Tensor::new(&[n, 1, len], data)?);
            let y = self.forward(&mut g, x)?;
            out.extend_from_slice(g.value(y.logits).data());
        }
        Tensor::new(&[b, k], out)
    }

    /// Runs an eval-mode pass and back-propagates the sum of the target
    /// logits (the predicted class when `targets` is `None`) to the final
    /// convolutional feature maps, captured through a gradient hook.
    pub fn capture_activations(&self, batch: &Tensor<T>, targets: Option<&[usize]>) -> Result<Activations<T>> {
        let mut g = Graph::new(Mode::Eval);
        let x = g.variable(batch.clone());
        let out = self.forward(&mut g, x)?;
        let logits = g.value(out.logits).clone();
        let targets: Vec<usize> = match targets {
            Some(t) => t.to_vec(),
            None => (0..logits.dim(0)).map(|i| argmax(logits.row(i))).collect(),
        };
        let captured: Arc<Mutex<Option<Tensor<T>>>> = Arc::new(Mutex::new(None));
        let slot = Arc::clone(&captured);
        g.register_hook(out.features, move |grad| {
            *slot.lock().unwrap() = Some(grad.clone());
        });
        let score = g.gather_sum(out.logits, &targets)?;
        g.backward(score)?;
        let gradients = captured
            .lock()
            .unwrap()
            .take()
            .ok_or_else(|| Error::Usage("feature gradient hook did not fire".into()))?;
        Ok(Activations {
            features: g.value(out.features).clone(),
            gradients,
            logits,
            targets,
        })
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            descriptor: self.descriptor.clone(),
            params: self.params.cast(),
        }
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
