//! Split-parameter federated training of face-embedding models.
//!
//! A backbone (the public partition) is pretrained on a server, broadcast to
//! simulated devices, fine-tuned locally together with a device-private
//! angular-margin projector, and averaged. Only backbone tensors ever cross
//! the wire. The crate also carries a gradient-inversion harness that
//! measures how much that omission protects the training images, and a
//! verification evaluator (TAR at fixed FAR, nearest-neighbour identification).

pub mod attack;
pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
