//! From-scratch multimodal music genre classifier.
//!
//! Two feature branches — a CNN over log-mel spectrograms and a
//! two-level attention network over lyrics — are fused and trained
//! end to end with softmax/cross-entropy and SGD with Nesterov
//! momentum. Everything runs on the tensor autodiff engine in
//! [`tensor`]; no external ML framework is involved.

pub mod audio;
pub mod data;
pub mod error;
pub mod fixture;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod text;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
