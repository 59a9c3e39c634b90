use super::config::{HeadConfig, RoundConfig, WarmupScope};
use super::config::warmup_lr;
use super::train::train_epoch;
use super::wire::{MessageKind, PublicUpdate, WireMessage};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ArcFaceProjector, Backbone, BackboneSpec, PublicParams, Schema};
use crate::nn::BnMode;
use crate::rng::{self, SimRng};

const PROJECTOR_STREAM: u64 = 0x5052_4f4a;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// A simulated device. The projector lives only here.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u32,
    pub shard: Option<Dataset>,
    /// Shard labels remapped to `0..identities.len()`.
    local_labels: Vec<usize>,
    pub identities: Vec<usize>,
    pub backbone: Backbone,
    pub projector: Option<ArcFaceProjector>,
    pub head: HeadConfig,
    pub seed: u64,
    shuffle_rng: SimRng,
    /// Optimizer steps taken over the whole fine-tuning.
    pub iteration: u64,
    round_iteration: u64,
    /// Every learning rate actually applied, in order.
    pub lr_trace: Vec<f64>,
    pub last_loss: Option<f64>,
    pub round: Option<u32>,
}

impl ClientState {
    pub fn new(client_id: u32, shard: Option<Dataset>, spec: &BackboneSpec, head: HeadConfig, seed: u64) -> Result<Self> {
        let (local_labels, identities) = shard.as_ref().map(Dataset::local_labels).unwrap_or_default();
        // placeholder weights; the first broadcast overwrites all of them
        let backbone = Backbone::new(spec, &mut rng::seeded(seed))?;
        Ok(ClientState {
            client_id,
            shard,
            local_labels,
            identities,
            backbone,
            projector: None,
            head,
            seed,
            shuffle_rng: rng::seeded(rng::derive_seed(seed, SHUFFLE_STREAM)),
            iteration: 0,
            round_iteration: 0,
            lr_trace: Vec::new(),
            last_loss: None,
            round: None,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.shard.as_ref().map_or(0, Dataset::len)
    }

    /// Applies a broadcast frame: overwrites the backbone and, on round 0
    /// (or first contact), draws a fresh private projector.
    pub fn receive_broadcast(&mut self, frame: &[u8], schema: &Schema) -> Result<()> {
        let msg = WireMessage::decode(frame)?;
        if msg.kind != MessageKind::Broadcast {
            return Err(Error::Transport("client expected a broadcast frame".into()));
        }
        msg.tensors.check_schema(schema)?;
        self.backbone.load_values(&msg.tensors)?;
        if (msg.round == 0 || self.projector.is_none()) && !self.identities.is_empty() {
            let mut r = rng::seeded(rng::derive_seed(self.seed, PROJECTOR_STREAM));
            self.projector = Some(ArcFaceProjector::new(
                self.backbone.embedding_dim(),
                self.identities.len(),
                self.head.scale,
                self.head.margin,
                &mut r,
            ));
        }
        self.round = Some(msg.round);
        self.round_iteration = 0;
        Ok(())
    }

    /// Local fine-tuning for `cfg.local_epochs` epochs. The projector is
    /// updated in place and kept; only the backbone snapshot is returned.
    pub fn local_train(&mut self, cfg: &RoundConfig) -> Result<PublicUpdate> {
        let round = self
            .round
            .ok_or_else(|| Error::Usage(format!("client {} trained before any broadcast", self.client_id)))?;
        let Some(shard) = self.shard.as_ref() else {
            self.last_loss = None;
            return Ok(PublicUpdate {
                client_id: self.client_id,
                round,
                sample_count: 0,
                params: PublicParams(self.backbone.values()),
                skipped: true,
            });
        };
        let proj = self.projector.as_mut().expect("projector exists once a non-empty shard saw a broadcast");
        self.backbone.set_bn_mode(if cfg.freeze_bn { BnMode::TrainFrozen } else { BnMode::TrainUpdate });
        let mut total = 0.0;
        for _ in 0..cfg.local_epochs {
            let (iteration, round_iteration, trace) = (&mut self.iteration, &mut self.round_iteration, &mut self.lr_trace);
            let next_lr = || {
                *iteration += 1;
                *round_iteration += 1;
                let i = match cfg.warmup_scope {
                    WarmupScope::Global => *iteration,
                    WarmupScope::PerRound => *round_iteration,
                };
                let lr = warmup_lr(i, cfg.warmup_batches, cfg.lr);
                trace.push(lr);
                lr
            };
            total += train_epoch(
                &mut self.backbone,
                proj,
                &shard.images,
                &self.local_labels,
                cfg.batch_size,
                &mut self.shuffle_rng,
                next_lr,
            )
            .map_err(|e| e.context(format!("client {}", self.client_id)))?;
        }
        self.backbone.set_bn_mode(BnMode::Eval);
        self.last_loss = Some(total / cfg.local_epochs as f64);
        Ok(PublicUpdate {
            client_id: self.client_id,
            round,
            sample_count: shard.len() as u32,
            params: PublicParams(self.backbone.values()),
            skipped: false,
        })
    }
}
