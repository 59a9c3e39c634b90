//! The split model: public backbone `α = f(X)` and private angular-margin
//! projector `ô = Proj(α)`, with loss, gradient partitioning and checkpoints.

mod arch;
mod backbone;
mod checkpoint;
mod loss;
mod params;
mod projector;

pub use arch::{BackboneSpec, LayerSpec};
pub use backbone::{Backbone, Layer};
pub use checkpoint::{write_atomic, Checkpoint, CHECKPOINT_MAGIC};
pub(crate) use checkpoint::{read_named, write_named};
pub use loss::{cross_entropy, log_softmax_rows, softmax_rows, LossRecord};
pub use params::{
    model_backward, partition_params, schema_diff, ModelGradients, NamedTensors, PrivateParams, PublicParams,
    Schema,
};
pub use projector::{arcface_logits, ArcFaceProjector, COSINE_CLAMP};
