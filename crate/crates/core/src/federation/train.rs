use crate::error::{Error, Result};
use crate::model::{cross_entropy, model_backward, ArcFaceProjector, Backbone};
use crate::nn::{sgd_step, BnMode};
use crate::rng::{self, SimRng};
use crate::tensor::Tensor;

/// One shuffled pass of mini-batch SGD over `(images, labels)`.
///
/// `next_lr` is called once per step, in order. A trailing batch of one
/// sample is dropped while any batch norm uses batch statistics, since its
/// variance is undefined. Returns the mean batch loss.
pub(crate) fn train_epoch(
    backbone: &mut Backbone,
    proj: &mut ArcFaceProjector,
    images: &Tensor,
    labels: &[usize],
    batch_size: usize,
    rng: &mut SimRng,
    mut next_lr: impl FnMut() -> f64,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    rng::shuffle(rng, &mut order);
    let needs_pairs = backbone.batchnorms().any(|s| s.mode == BnMode::TrainUpdate);
    let mut losses = Vec::new();
    for chunk in order.chunks(batch_size.max(1)) {
        if needs_pairs && chunk.len() < 2 {
            continue;
        }
        let x = images.select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let lr = next_lr();
        let g = model_backward(backbone, proj, &x, &y)?;
        if !g.loss.loss.is_finite() {
            return Err(Error::NonFinite { context: "training loss".into(), trace: losses });
        }
        losses.push(g.loss.loss);
        sgd_step(backbone.params_mut().into_iter().chain(std::iter::once(&mut proj.weight)), lr);
    }
    if losses.is_empty() {
        return Err(Error::BatchSize { op: "train_epoch", got: labels.len(), need: 2 });
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Margined cross-entropy over a whole dataset with inference-mode batch norm.
pub fn dataset_loss(backbone: &Backbone, proj: &ArcFaceProjector, images: &Tensor, labels: &[usize]) -> Result<f64> {
    let alpha = backbone.embed_all(images, 256)?;
    let logits = proj.logits(&alpha, Some(labels))?;
    Ok(cross_entropy(&logits, labels)?.loss)
}
