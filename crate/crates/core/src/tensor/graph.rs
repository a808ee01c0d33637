//! Reverse-mode tape.
//!
//! Every operation appends a node holding its output value and whatever the
//! backward pass needs. Nodes are created in dependency order, so walking
//! the node list backwards is a valid reverse topological order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::params::ParamStore;
use super::scalar::Float;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) id: usize,
    graph: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Swish,
    Relu,
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Act(Activation, usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        saved: ops::norm::BnSaved<T>,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    AdaptivePool {
        x: usize,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    Reshape(usize),
    Transpose12(usize),
    SliceLast {
        x: usize,
        start: usize,
    },
    ConcatLast(Vec<usize>),
    SelectTime {
        x: usize,
        t: usize,
    },
    StackTime(Vec<usize>),
    Softmax(usize),
    WeightedTimeSum {
        alpha: usize,
        h: usize,
    },
    Sum(usize),
    Mean(usize),
    GatherSum {
        x: usize,
        index: Vec<usize>,
    },
    FocalLoss {
        probs: usize,
        targets: Vec<usize>,
        alpha: T,
        gamma: T,
    },
    BceWithLogits {
        logits: usize,
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Act(_, x)
            | Op::MaxPool { x, .. }
            | Op::AdaptivePool { x, .. }
            | Op::Dropout { x, .. }
            | Op::Reshape(x)
            | Op::Transpose12(x)
            | Op::SliceLast { x, .. }
            | Op::SelectTime { x, .. }
            | Op::Softmax(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::GatherSum { x, .. }
            | Op::FocalLoss { probs: x, .. }
            | Op::BceWithLogits { logits: x, .. } => vec![*x],
            Op::Linear { x, w, b } | Op::Conv1d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatLast(v) | Op::StackTime(v) => v.clone(),
            Op::WeightedTimeSum { alpha, h } => vec![*alpha, *h],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

type Hook<T> = Box<dyn FnMut(&Tensor<T>) + Send>;

/// A tape of operations recorded during one forward pass.
pub struct Graph<T: Float = f32> {
    id: u64,
    pub(crate) nodes: Vec<Node<T>>,
    mode: Mode,
    rng: ChaCha8Rng,
    params: BTreeMap<String, usize>,
    hooks: Vec<(usize, Hook<T>)>,
    buffer_updates: Vec<(String, Tensor<T>)>,
}

impl<T: Float> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0)
    }

    /// `seed` drives dropout masks.
    pub fn with_seed(mode: Mode, seed: u64) -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
            hooks: Vec::new(),
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            graph: self.id,
        }
    }

    fn push_leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            graph: self.id,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// A free variable whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Binds a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&id) = self.params.get(name) {
            return Ok(Var { id, graph: self.id });
        }
        let value = store
            .param(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))?
            .clone();
        let mut value = value;
        value.clear_grad();
        let var = self.push_leaf(value, true);
        self.params.insert(name.to_string(), var.id);
        Ok(var)
    }

    pub(crate) fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(Error::Usage("variable does not belong to this graph".into()));
        }
        Ok(v.id)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.graph, self.id, "variable does not belong to this graph");
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Registers a callback receiving the gradient of `v` once per backward
    /// pass (a zero tensor when `v` does not influence the loss).
    pub fn register_hook(&mut self, v: Var, hook: impl FnMut(&Tensor<T>) + Send + 'static) {
        self.hooks.push((v.id, Box::new(hook)));
    }

    pub(crate) fn record_buffer_update(&mut self, name: String, value: Tensor<T>) {
        self.buffer_updates.push((name, value));
    }

    /// Running-statistic updates produced by train-mode normalization.
    pub fn take_buffer_updates(&mut self) -> Vec<(String, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let loss_id = self.check(loss)?;
        if self.nodes[loss_id].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss_id].value.shape()
            )));
        }
        if !self.nodes[loss_id].needs_grad {
            return Err(Error::Usage(
                "loss does not depend on any tracked variable".into(),
            ));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss_id] = Some(vec![T::one()]);
        for id in (0..=loss_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            ops::backward_node(&self.nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (id, hook) in &mut self.hooks {
            let node = &self.nodes[*id];
            let g = grads[*id]
                .clone()
                .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
            hook(&Tensor::from_parts(node.value.shape().to_vec(), g));
        }

        Ok(Gradients {
            graph: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
            params: self.params.clone(),
        })
    }
}

/// Adds `g` into the gradient slot of node `id` if it tracks gradients.
pub(crate) fn accumulate<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: usize,
    g: &[T],
) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Result of one backward pass.
pub struct Gradients<T> {
    graph: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<T>>>,
    params: BTreeMap<String, usize>,
}

impl<T: Float> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not affect the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        assert_eq!(v.graph, self.graph, "variable does not belong to this graph");
        let shape = self.shapes[v.id].clone();
        match &self.grads[v.id] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn param(&self, name: &str) -> Option<Tensor<T>> {
        let &id = self.params.get(name)?;
        let shape = self.shapes[id].clone();
        Some(match &self.grads[id] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        })
    }

    /// Writes gradients into the grad slots of every trainable parameter of
    /// `store`. Parameters not used in the graph get zero gradients.
    pub fn apply_to(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, tensor) in store.params_mut() {
            let g = match self.params.get(name).and_then(|&id| self.grads[id].clone()) {
                Some(g) => g,
                None => vec![T::zero(); tensor.len()],
            };
            tensor.set_grad(g)?;
        }
        Ok(())
    }
}
