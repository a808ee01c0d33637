//! Shared test helpers: a central-difference gradient checker.
#![allow(dead_code)]

use ecgkit::tensor::{Graph, Mode, ParamStore, Tensor, Var};
use ecgkit::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-2;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values spaced at least `gap` apart so that max-type ops and relu kinks
/// stay clear of the finite-difference step.
pub fn spaced_tensor(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0 + 0.3) * gap).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape, levels).unwrap()
}

pub struct Report {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// Compares analytic and central-difference gradients of
/// Loss, input gradients and named parameter gradients of one evaluation.
type Evaluated = (f64, Vec<Tensor<f64>>, Vec<(String, Tensor<f64>)>);

/// `loss = sum(f(inputs) * r)` with a fixed random `r`, for every input
/// element and every parameter of `store`.
pub fn check<F>(mode: Mode, inputs: &[Tensor<f64>], store: &ParamStore<f64>, seed: u64, f: F) -> Result<Report>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let weights = std::cell::RefCell::new(None::<Tensor<f64>>);
    let eval = |inputs: &[Tensor<f64>], store: &ParamStore<f64>, grads: bool| -> Result<Evaluated> {
        let mut g = Graph::<f64>::with_seed(mode, seed);
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, store, &vars)?;
        let shape = g.shape(out).to_vec();
        let r = weights
            .borrow_mut()
            .get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                random_tensor(&mut rng, &shape, -1.0, 1.0)
            })
            .clone();
        let rv = g.constant(r);
        let prod = g.mul(out, rv)?;
        let loss = g.sum(prod)?;
        let value = g.value(loss).data()[0];
        if !grads {
            return Ok((value, vec![], vec![]));
        }
        let gr = g.backward(loss)?;
        let gin = vars.iter().map(|&v| gr.wrt(v)).collect();
        let gp = store
            .params()
            .map(|(k, t)| (k.to_string(), gr.param(k).unwrap_or_else(|| Tensor::zeros(t.shape()))))
            .collect();
        Ok((value, gin, gp))
    };

    let (_, g_inputs, g_params) = eval(inputs, store, true)?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let n = (eval(&plus, store, false)?.0 - eval(&minus, store, false)?.0) / (2.0 * STEP);
            worst = worst.max(rel_err(g_inputs[i].data()[j], n));
            checked += 1;
        }
    }
    for (name, ga) in &g_params {
        let len = store.param(name).unwrap().len();
        for j in 0..len {
            let mut plus = store.clone();
            plus.param_mut(name).unwrap().data_mut()[j] += STEP;
            let mut minus = store.clone();
            minus.param_mut(name).unwrap().data_mut()[j] -= STEP;
            let n = (eval(inputs, &plus, false)?.0 - eval(inputs, &minus, false)?.0) / (2.0 * STEP);
            worst = worst.max(rel_err(ga.data()[j], n));
            checked += 1;
        }
    }
    Ok(Report {
        max_rel_err: worst,
        checked,
    })
}

/// Every differentiable operation covered by the gradient-check suite.
pub const OPS: &[&str] = &[
    "add", "mul", "scale", "swish", "relu", "sigmoid", "tanh", "leaky_relu", "dense", "conv1d",
    "conv1d_strided", "batch_norm_train", "batch_norm_eval", "max_pool1d", "adaptive_avg",
    "adaptive_max", "dropout", "reshape", "transpose12", "slice_concat", "select_stack", "softmax",
    "weighted_time_sum", "sum", "mean", "gather_sum", "focal_loss", "bce_with_logits", "lstm_step",
    "bilstm", "attention_pool",
];

/// Gradient check of operation `op` on a random shape (at most 4x3x8) drawn from `seed`.
pub fn gradcheck_op(op: &str, seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.gen_range(1..=4);
    let c = rng.gen_range(1..=3);
    let l = rng.gen_range(3..=8);
    let shape = [b, c, l];
    let empty = ParamStore::<f64>::new();
    let x = random_tensor(&mut rng, &shape, -1.5, 1.5);
    let y = random_tensor(&mut rng, &shape, -1.5, 1.5);
    let spaced = spaced_tensor(&mut rng, &shape, 0.05);
    let unary = |x: Tensor<f64>, f: fn(&mut Graph<f64>, Var) -> Result<Var>| {
        check(Mode::Train, &[x], &empty, seed, move |g, _, v| f(g, v[0]))
    };
    match op {
        "add" => check(Mode::Train, &[x, y], &empty, seed, |g, _, v| g.add(v[0], v[1])),
        "mul" => check(Mode::Train, &[x, y], &empty, seed, |g, _, v| g.mul(v[0], v[1])),
        "scale" => check(Mode::Train, &[x], &empty, seed, |g, _, v| g.scale(v[0], -1.7)),
        "swish" => unary(x, |g, v| g.swish(v)),
        "relu" => unary(spaced, |g, v| g.relu(v)),
        "sigmoid" => unary(x, |g, v| g.sigmoid(v)),
        "tanh" => unary(x, |g, v| g.tanh(v)),
        "leaky_relu" => unary(spaced, |g, v| g.activation(ecgkit::tensor::Activation::LeakyRelu(0.2), v)),
        "dense" => {
            let mut s = ParamStore::new();
            s.add_dense(&mut rng, "d", l, 4)?;
            let x2 = random_tensor(&mut rng, &[b * c, l], -1.0, 1.0);
            check(Mode::Train, &[x2], &s, seed, |g, s, v| g.dense(s, "d", v[0]))
        }
        "conv1d" | "conv1d_strided" => {
            let k = rng.gen_range(1..=3.min(l));
            let (stride, pad) = if op == "conv1d" { (1, k / 2) } else { (2, 1) };
            let mut s = ParamStore::new();
            s.add_conv(&mut rng, "c", c, 2, k)?;
            check(Mode::Train, &[x], &s, seed, move |g, s, v| g.conv(s, "c", v[0], stride, pad))
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let mut s = ParamStore::new();
            s.add_batch_norm("bn", c)?;
            for (name, t) in s.clone().params() {
                let perturbed = random_tensor(&mut rng, t.shape(), 0.5, 1.5);
                s.param_mut(name).unwrap().data_mut().copy_from_slice(perturbed.data());
            }
            let mean = random_tensor(&mut rng, &[c], -0.5, 0.5);
            let var = random_tensor(&mut rng, &[c], 0.5, 2.0);
            s.set_buffer("bn.running_mean", mean)?;
            s.set_buffer("bn.running_var", var)?;
            let mode = if op == "batch_norm_train" { Mode::Train } else { Mode::Eval };
            // Train-mode statistics need at least two values per channel.
            let x = if b * l < 2 { random_tensor(&mut rng, &[2, c, l], -1.5, 1.5) } else { x };
            check(mode, &[x], &s, seed, |g, s, v| g.batch_norm(s, "bn", v[0]))
        }
        "max_pool1d" => {
            let k = rng.gen_range(1..=3);
            let stride = rng.gen_range(1..=2);
            check(Mode::Train, &[spaced], &empty, seed, move |g, _, v| g.max_pool1d(v[0], k, stride))
        }
        "adaptive_avg" | "adaptive_max" => {
            let out = rng.gen_range(1..=l);
            let mode = if op == "adaptive_avg" {
                ecgkit::tensor::PoolMode::Avg
            } else {
                ecgkit::tensor::PoolMode::Max
            };
            check(Mode::Train, &[spaced], &empty, seed, move |g, _, v| g.adaptive_pool1d(v[0], mode, out))
        }
        "dropout" => check(Mode::Train, &[x], &empty, seed, |g, _, v| g.dropout(v[0], 0.3)),
        "reshape" => check(Mode::Train, &[x], &empty, seed, move |g, _, v| g.reshape(v[0], &[b * c, l])),
        "transpose12" => unary(x, |g, v| g.transpose12(v)),
        "slice_concat" => check(Mode::Train, &[x, y], &empty, seed, move |g, _, v| {
            let a = g.slice_last(v[0], 1, l - 1)?;
            let z = g.slice_last(v[1], 0, 2)?;
            g.concat_last(&[z, a, v[1]])
        }),
        "select_stack" => check(Mode::Train, &[x], &empty, seed, move |g, _, v| {
            let steps: Vec<Var> = (0..c).rev().map(|t| g.select_time(v[0], t)).collect::<Result<_>>()?;
            g.stack_time(&steps)
        }),
        "softmax" => unary(x, |g, v| g.softmax(v)),
        "weighted_time_sum" => {
            let alpha = random_tensor(&mut rng, &[b, c], 0.0, 1.0);
            check(Mode::Train, &[alpha, x], &empty, seed, |g, _, v| g.weighted_time_sum(v[0], v[1]))
        }
        "sum" => unary(x, |g, v| g.sum(v)),
        "mean" => unary(x, |g, v| g.mean(v)),
        "gather_sum" => {
            let idx: Vec<usize> = (0..b * c).map(|_| rng.gen_range(0..l)).collect();
            let x2 = random_tensor(&mut rng, &[b * c, l], -1.0, 1.0);
            check(Mode::Train, &[x2], &empty, seed, move |g, _, v| g.gather_sum(v[0], &idx))
        }
        "focal_loss" => {
            let classes = 5;
            let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
            let logits = random_tensor(&mut rng, &[b, classes], -2.0, 2.0);
            let gamma = [0.0, 0.5, 2.0][rng.gen_range(0..3)];
            check(Mode::Train, &[logits], &empty, seed, move |g, _, v| {
                let p = g.softmax(v[0])?;
                g.focal_loss(p, &targets, 1.0, gamma)
            })
        }
        "bce_with_logits" => {
            let targets: Vec<f64> = (0..b * c).map(|_| rng.gen_range(0..=1) as f64).collect();
            let logits = random_tensor(&mut rng, &[b * c], -3.0, 3.0);
            check(Mode::Train, &[logits], &empty, seed, move |g, _, v| g.bce_with_logits(v[0], &targets))
        }
        "lstm_step" => {
            let hidden = rng.gen_range(1..=3);
            let mut s = ParamStore::new();
            s.add_lstm(&mut rng, "cell", l, hidden)?;
            let xt = random_tensor(&mut rng, &[b, l], -1.0, 1.0);
            let h = random_tensor(&mut rng, &[b, hidden], -1.0, 1.0);
            let cs = random_tensor(&mut rng, &[b, hidden], -1.0, 1.0);
            check(Mode::Train, &[xt, h, cs], &s, seed, |g, s, v| {
                let st = g.lstm_step(s, "cell", v[0], ecgkit::tensor::LstmState { h: v[1], c: v[2] })?;
                g.concat_last(&[st.h, st.c])
            })
        }
        "bilstm" => {
            let hidden = rng.gen_range(1..=3);
            let mut s = ParamStore::new();
            s.add_bilstm(&mut rng, "rnn", l, hidden, 2)?;
            check(Mode::Train, &[x], &s, seed, |g, s, v| Ok(g.bilstm(s, "rnn", v[0], 2, 0.2)?.sequence))
        }
        "attention_pool" => {
            let mut s = ParamStore::new();
            s.add_attention(&mut rng, "att", l, 3)?;
            check(Mode::Train, &[x], &s, seed, |g, s, v| {
                let (ctx, alpha) = g.attention_pool(s, "att", v[0])?;
                let a = g.sum(alpha)?;
                let cs = g.sum(ctx)?;
                let both = g.add(a, cs)?;
                let w = g.reshape(alpha, &[g.shape(alpha).iter().product()])?;
                let sq = g.mul(w, w)?;
                let q = g.sum(sq)?;
                g.add(both, q)
            })
        }
        other => panic!("unknown op {other}"),
    }
}

use ecgkit::ingest::{BeatDataset, BeatRecord, BeatSource, SplitTag};

/// Two linearly separable classes centred like R-peak windows: label 0 is
/// a narrow spike, label 1 a broad wave. Amplitudes and positions jitter
/// and values stay in `[0, 1]`. Every fifth beat of each class is tagged
/// `val`, the rest `train`.
pub fn toy_dataset(per_class: usize, len: usize, seed: u64) -> BeatDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beats = Vec::new();
    for label in 0..2usize {
        for i in 0..per_class {
            let center = len as f64 / 2.0 + rng.gen_range(-3.0..3.0);
            let width = if label == 0 { 3.0 } else { len as f64 / 8.0 };
            let amp = rng.gen_range(0.6..0.9);
            let samples = (0..len)
                .map(|t| {
                    let d = (t as f64 - center) / width;
                    (0.05 + amp * (-0.5 * d * d).exp() + rng.gen_range(0.0..0.03)).clamp(0.0, 1.0) as f32
                })
                .collect();
            beats.push(BeatRecord {
                samples,
                label,
                source: BeatSource::Synthetic,
                split: if i % 5 == 0 { SplitTag::Val } else { SplitTag::Train },
            });
        }
    }
    BeatDataset::new(beats, len, seed)
}

pub const PULSE_AT: usize = 90;

/// Noise-only beats (label 0) against beats carrying one narrow pulse at
/// `PULSE_AT` (label 1). Returns a train/val dataset and `n_test` held-out
/// pulse beats as an `[n_test, len]` tensor.
pub fn pulse_task(per_class: usize, n_test: usize, len: usize, seed: u64) -> (BeatDataset, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beat = |label: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
        let amp = rng.gen_range(0.5..0.8);
        (0..len)
            .map(|t| {
                let d = (t as f64 - PULSE_AT as f64) / 2.0;
                let pulse = if label == 1 { amp * (-0.5 * d * d).exp() } else { 0.0 };
                (0.2 + pulse + rng.gen_range(-0.05..0.05)) as f32
            })
            .collect()
    };
    let mut beats = Vec::new();
    for label in 0..2usize {
        for i in 0..per_class {
            beats.push(BeatRecord {
                samples: beat(label, &mut rng),
                label,
                source: BeatSource::Synthetic,
                split: if i % 5 == 0 { SplitTag::Val } else { SplitTag::Train },
            });
        }
    }
    let test: Vec<f32> = (0..n_test).flat_map(|_| beat(1, &mut rng)).collect();
    (BeatDataset::new(beats, len, seed), Tensor::new(&[n_test, len], test).unwrap())
}
