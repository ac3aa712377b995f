//! Numeric substrate: tensors, a reverse-mode tape, residual perceptrons,
//! the recurrent proposal encoder and checkpoint I/O.

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_embeddings, write_atomic, Checkpoint};
pub use encoder::{EncoderSpec, ProposalEncoder};
pub use mlp::{Mlp, MlpSpec};
pub use params::{ParamStore, ParamVars};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{log_softmax_inplace, logsumexp, Tensor};
