//! Split-parameter FedAvg: the backbone is broadcast and averaged, each
//! client's angular-margin projector stays on the client.

mod client;
mod config;
mod pretrain;
mod server;
mod train;
mod wire;

pub use client::ClientState;
pub use config::{warmup_lr, HeadConfig, RoundConfig, WarmupScope};
pub use pretrain::{initial_backbone, pretrain, PretrainConfig, Pretrained};
pub use server::{aggregate, run_federation, Federation, MetricsLog, MetricsRow, RoundTraffic};
pub use train::dataset_loss;
pub use wire::{
    contains_subsequence, deserialize_update, serialize_update, shares_aligned_word, MessageKind, PublicUpdate,
    WireMessage,
};
