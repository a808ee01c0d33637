//! Dense tensors and a reverse-mode autodiff tape with the layer
//! primitives used by every model.

pub mod attention;
pub mod graph;
pub mod layers;
pub(crate) mod linalg;
pub mod ops;
pub mod params;
pub mod recurrent;
pub mod scalar;
#[allow(clippy::module_inception)]
pub mod tensor;

pub use graph::{Activation, Gradients, Graph, Mode, PoolMode, Var};
pub use ops::conv::conv_out_len;
pub use ops::loss::{focal_term, PROB_FLOOR};
pub use ops::norm::RunningStats;
pub use ops::pool::{adaptive_bin, pool_out_len};
pub use ops::{sigmoid, softmax_rows};
pub use params::ParamStore;
pub use recurrent::{BiLstmOutput, LstmState};
pub use scalar::Float;
pub use tensor::Tensor;
