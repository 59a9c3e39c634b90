use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Whether the warm-up iteration counter runs once over the whole
/// fine-tuning or restarts every communication round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmupScope {
    Global,
    PerRound,
}

impl fmt::Display for WarmupScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarmupScope::Global => "global",
            WarmupScope::PerRound => "per_round",
        })
    }
}

impl FromStr for WarmupScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(WarmupScope::Global),
            "per_round" => Ok(WarmupScope::PerRound),
            other => Err(Error::Config(format!("unknown warmup scope `{other}` (global | per_round)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub n_rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    /// Mini-batches over which the learning rate ramps up; 0 disables warm-up.
    pub warmup_batches: usize,
    pub warmup_scope: WarmupScope,
    pub batch_size: usize,
    pub freeze_bn: bool,
    pub weighted_aggregation: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            n_rounds: 20,
            local_epochs: 1,
            lr: 0.001,
            warmup_batches: 100,
            warmup_scope: WarmupScope::Global,
            batch_size: 3,
            freeze_bn: true,
            weighted_aggregation: true,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("n_rounds, local_epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Angular-margin head settings used by every projector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub scale: f64,
    pub margin: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { scale: 64.0, margin: 0.5 }
    }
}

/// Linear warm-up: `i·η/m` for `1 ≤ i ≤ m`, then `η`. `m = 0` disables it.
pub fn warmup_lr(i: u64, m: usize, eta: f64) -> f64 {
    let m = m as u64;
    if m == 0 || i > m {
        eta
    } else {
        i as f64 * eta / m as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        assert_eq!(warmup_lr(100, 100, 0.001), 0.001);
        assert_eq!(warmup_lr(50, 100, 0.001), 0.0005);
        assert_eq!(warmup_lr(107, 100, 0.001), 0.001);
        assert_eq!(warmup_lr(1, 0, 0.001), 0.001);
        assert_eq!(warmup_lr(1, 4, 1.0), 0.25);
    }

    #[test]
    fn validation() {
        assert!(RoundConfig::default().validate().is_ok());
        assert!(RoundConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(RoundConfig { n_rounds: 0, ..Default::default() }.validate().is_err());
    }
}
