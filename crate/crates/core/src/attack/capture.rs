use crate::error::{Error, Result};
use crate::model::{model_backward, ArcFaceProjector, Backbone, NamedTensors};
use crate::nn::BnMode;
use crate::tensor::Tensor;

/// Which gradients the victim reveals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShareScope {
    /// Backbone and projector: a plain FedAvg client sharing everything.
    Full,
    /// Backbone only; the projector gradient never leaves the device.
    PublicOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapturedGradients {
    pub scope: ShareScope,
    /// Backbone gradients in declaration order, then (for `Full`) the
    /// projector gradient.
    pub grads: NamedTensors,
}

/// Gradients of one training example as an eavesdropper would see them.
///
/// Batch norms run on their stored statistics, since batch statistics of a
/// single example are undefined.
pub fn capture_gradients(
    backbone: &Backbone,
    proj: &ArcFaceProjector,
    x: &Tensor,
    label: usize,
    scope: ShareScope,
) -> Result<CapturedGradients> {
    if x.batch() != 1 {
        return Err(Error::Config(format!(
            "gradient capture takes a single image, got a batch of {}",
            x.batch()
        )));
    }
    let mut b = backbone.clone();
    let mut p = proj.clone();
    b.set_bn_mode(BnMode::TrainFrozen);
    let g = model_backward(&mut b, &mut p, x, &[label])?;
    let grads = match scope {
        ShareScope::Full => g.full(),
        ShareScope::PublicOnly => g.public,
    };
    Ok(CapturedGradients { scope, grads })
}

const VICTIM_STREAM: u64 = 0x4d;

/// Freshly initialized attack target: backbone from `spec` and an angular
/// head with `n_classes` columns, both drawn from `seed`.
pub fn victim_model(
    spec: &crate::model::BackboneSpec,
    n_classes: usize,
    head: crate::federation::HeadConfig,
    seed: u64,
) -> Result<(Backbone, ArcFaceProjector)> {
    let mut r = crate::rng::seeded(crate::rng::derive_seed(seed, VICTIM_STREAM));
    let backbone = Backbone::new(spec, &mut r)?;
    let proj = ArcFaceProjector::new(backbone.embedding_dim(), n_classes, head.scale, head.margin, &mut r);
    Ok((backbone, proj))
}
