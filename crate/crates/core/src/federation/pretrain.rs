use super::config::{warmup_lr, HeadConfig};
use super::train::{dataset_loss, train_epoch};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ArcFaceProjector, Backbone, BackboneSpec};
use crate::nn::BnMode;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_batches: usize,
    pub batch_size: usize,
    pub head: HeadConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 30, lr: 0.01, warmup_batches: 0, batch_size: 32, head: HeadConfig::default(), seed: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub backbone: Backbone,
    /// Server-side head; not part of what gets distributed.
    pub projector: ArcFaceProjector,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// The backbone pretraining starts from. Runs that skip pretraining begin here
/// too, so the ablation differs only in the training it leaves out.
pub fn initial_backbone(spec: &BackboneSpec, seed: u64) -> Result<Backbone> {
    Backbone::new(spec, &mut rng::seeded(rng::derive_seed(seed, 0x4241)))
}

/// Server-side training on public data with batch-norm statistics updating.
pub fn pretrain(spec: &BackboneSpec, data: &Dataset, cfg: &PretrainConfig) -> Result<Pretrained> {
    if data.is_empty() {
        return Err(Error::Config("pretraining dataset is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("pretraining needs positive epochs, batch_size and lr".into()));
    }
    let mut backbone = initial_backbone(spec, cfg.seed)?;
    let (labels, ids) = data.local_labels();
    let mut projector = ArcFaceProjector::new(
        backbone.embedding_dim(),
        ids.len(),
        cfg.head.scale,
        cfg.head.margin,
        &mut rng::seeded(rng::derive_seed(cfg.seed, 0x5052)),
    );
    let initial_loss = dataset_loss(&backbone, &projector, &data.images, &labels)?;
    let mut shuffle = rng::seeded(rng::derive_seed(cfg.seed, 0x5348));
    backbone.set_bn_mode(BnMode::TrainUpdate);
    let mut step = 0u64;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let loss = train_epoch(&mut backbone, &mut projector, &data.images, &labels, cfg.batch_size, &mut shuffle, || {
            step += 1;
            warmup_lr(step, cfg.warmup_batches, cfg.lr)
        })?;
        epoch_losses.push(loss);
    }
    backbone.set_bn_mode(BnMode::Eval);
    let final_loss = dataset_loss(&backbone, &projector, &data.images, &labels)?;
    Ok(Pretrained { backbone, projector, initial_loss, epoch_losses, final_loss })
}
