//! Numeric core: explicit forward/backward kernels for the layers the face
//! model and the attack model are built from.
//!
//! There is no graph. Each layer's forward returns the values its backward
//! needs, and backward accumulates into [`Parameter::grad`].

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod gradcheck;
mod optim;
mod param;

pub use activation::{activation, activation_backward, Activation};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormState, BnCache, BnGrads, BnMode};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_dim, ConvGeometry, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use gradcheck::{finite_difference_grad, relative_error};
pub use optim::sgd_step;
pub use param::Parameter;
