//! Region-feature synthesizer for zero-shot detection experiments.
//!
//! Trains a conditional generator with a Wasserstein critic (gradient
//! penalty via exact double differentiation), a classifier-consistency
//! term, an intra-class semantic-diverging contrastive loss over noise
//! triplets, and an inter-class structure-preserving contrastive loss
//! over a hybrid pool of synthesized, real-proposal, and background
//! features. Synthesized features for unseen classes then train an
//! unseen classifier that is merged into the frozen seen classifier and
//! evaluated under ZSD and GZSD protocols.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability, and the `regionsynth` binary for the file-based pipeline
//! (`gen-data`, `train`, `eval`, `ablate`, `gradcheck`).

pub mod data;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod pipeline;
pub mod optim;
pub mod losses;
pub mod models;
pub mod sampling;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
