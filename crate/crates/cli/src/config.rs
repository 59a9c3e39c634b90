//! Flat `key = value` run configuration.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use fedface_core::attack::{LabelStrategy, Optimizer};
use fedface_core::data::{PartitionKind, PartitionScheme, SyntheticConfig};
use fedface_core::federation::{HeadConfig, PretrainConfig, RoundConfig, WarmupScope};
use fedface_core::model::BackboneSpec;
use fedface_core::{Error, Result};

/// A value type that can appear on the right of `=`.
pub trait ConfigValue: Sized {
    const TYPE: &'static str;
    fn parse_value(raw: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty => $name:literal),*) => {$(
        impl ConfigValue for $t {
            const TYPE: &'static str = $name;
            fn parse_value(raw: &str) -> Option<Self> {
                raw.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(u64 => "unsigned integer", usize => "unsigned integer", String => "string");

impl ConfigValue for f64 {
    const TYPE: &'static str = "float";
    fn parse_value(raw: &str) -> Option<Self> {
        raw.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn render(&self) -> String {
        // Debug formatting is the shortest text that parses back bit-exactly.
        format!("{self:?}")
    }
}

impl ConfigValue for bool {
    const TYPE: &'static str = "boolean (true | false)";
    fn parse_value(raw: &str) -> Option<Self> {
        match raw {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for PartitionKind {
    const TYPE: &'static str = "partition scheme (iid | by_identity)";
    fn parse_value(raw: &str) -> Option<Self> {
        raw.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for WarmupScope {
    const TYPE: &'static str = "warm-up scope (global | per_round)";
    fn parse_value(raw: &str) -> Option<Self> {
        raw.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Optimizer {
    const TYPE: &'static str = "optimizer (adam | gd)";
    fn parse_value(raw: &str) -> Option<Self> {
        match raw {
            "adam" => Some(Optimizer::Adam),
            "gd" => Some(Optimizer::Gd),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Gd => "gd",
        }
        .into()
    }
}

impl ConfigValue for LabelStrategy {
    const TYPE: &'static str = "label strategy (known | soft)";
    fn parse_value(raw: &str) -> Option<Self> {
        match raw {
            "known" => Some(LabelStrategy::KnownLabel),
            "soft" => Some(LabelStrategy::OptimizeSoftLabel),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            LabelStrategy::KnownLabel => "known",
            LabelStrategy::OptimizeSoftLabel => "soft",
        }
        .into()
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])+ $key:ident: $ty:ty = $default:expr;)*) => {
        /// Every knob of every command. Unset keys keep the defaults listed by
        /// [`RunConfig::help_text`].
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])+ pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($key: $default,)* }
            }
        }

        impl RunConfig {
            /// `(key, type, help)` for every accepted key.
            pub const KEYS: &'static [(&'static str, &'static str, &'static str)] = &[
                $((stringify!($key), <$ty as ConfigValue>::TYPE, concat!($($doc),+)),)*
            ];

            /// `Ok(false)` for an unknown key, `Err(expected type)` for a bad value.
            fn set(&mut self, key: &str, raw: &str) -> std::result::Result<bool, &'static str> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(raw).ok_or(<$ty as ConfigValue>::TYPE)?;
                    })*
                    _ => return Ok(false),
                }
                Ok(true)
            }

            fn values(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($key), self.$key.render()),)*]
            }
        }
    };
}

run_config! {
    /// Master seed; every stream is derived from it.
    seed: u64 = 1;
    /// Private-domain identities (split into train and test).
    n_identities: usize = 400;
    /// Images per private identity, the standard one included.
    images_per_identity: usize = 6;
    /// Public-domain identities used for pretraining and its held-out check.
    public_identities: usize = 400;
    /// Images per public identity.
    public_images_per_identity: usize = 20;
    /// Fraction of private identities that go to the clients; the rest form the test pairs.
    train_fraction: f64 = 0.25;
    /// Fraction of public identities used for pretraining.
    public_train_fraction: f64 = 0.8;
    /// Side of the square synthetic images.
    image_side: usize = 16;
    /// Additive prototype offset of the public domain.
    public_offset: f64 = 0.0;
    /// Additive prototype offset of the private domain.
    private_offset: f64 = 0.1;
    /// Prototype smoothing width of the public domain.
    public_smoothing: f64 = 1.5;
    /// Prototype smoothing width of the private domain.
    private_smoothing: f64 = 1.0;
    /// Prototype contrast around mid-grey.
    contrast: f64 = 0.15;
    /// Pixel noise std of wild captures.
    wild_noise_std: f64 = 0.15;
    /// Illumination field amplitude in public wild captures.
    public_illumination: f64 = 0.0;
    /// Illumination field amplitude in private wild captures.
    private_illumination: f64 = 0.15;
    /// Probability of an occluding rectangle in a wild capture.
    occlusion_prob: f64 = 0.3;
    /// Largest translation of a wild capture, in pixels per axis.
    max_shift: usize = 1;
    /// Backbone layers for the synthetic benchmark.
    arch: String = BackboneSpec::synthetic_default().arch_string();
    /// Angular head scale s.
    head_scale: f64 = 64.0;
    /// Additive angular margin m.
    head_margin: f64 = 0.5;
    /// Pretraining epochs over the public training split.
    pretrain_epochs: usize = 30;
    /// Pretraining learning rate.
    pretrain_lr: f64 = 0.01;
    /// Pretraining batch size.
    pretrain_batch_size: usize = 32;
    /// Start federation from the pretrained backbone; false starts from the untrained initialization.
    pretrained_init: bool = true;
    /// Communication rounds.
    n_rounds: usize = 20;
    /// Local epochs per round.
    local_epochs: usize = 1;
    /// Client learning rate after warm-up.
    lr: f64 = 0.001;
    /// Warm-up length in local batches; 0 disables warm-up.
    warmup_batches: usize = 100;
    /// Whether the warm-up counter spans rounds (global) or restarts each round.
    warmup_scope: WarmupScope = WarmupScope::Global;
    /// Client batch size.
    batch_size: usize = 3;
    /// Keep batch-norm statistics fixed during local training.
    freeze_bn: bool = true;
    /// Weight client updates by sample count.
    weighted_aggregation: bool = true;
    /// Number of clients.
    n_clients: usize = 4;
    /// How private training data is split across clients.
    partition_scheme: PartitionKind = PartitionKind::ByIdentity;
    /// L2-normalize embeddings before distances.
    normalize_embeddings: bool = true;
    /// Attack iterations per image.
    attack_iterations: usize = 100;
    /// Attack optimizer.
    attack_optimizer: Optimizer = Optimizer::Adam;
    /// Attack learning rate on pixels.
    attack_lr: f64 = 0.1;
    /// Whether the attacker knows the label or optimizes a soft label.
    attack_label: LabelStrategy = LabelStrategy::KnownLabel;
    /// Number of leading MNIST fixture images to attack.
    attack_images: usize = 3;
    /// Backbone layers of the attacked MNIST model.
    attack_arch: String = BackboneSpec::mnist_attack().arch_string();
}

/// Input shape of the synthetic benchmark for a given image side.
fn synthetic_input(side: usize) -> String {
    format!("1x{side}x{side}")
}

const MNIST_INPUT: &str = "1x28x28";

impl RunConfig {
    /// Parses `text`; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::Config(format!("{origin}:{line_no}: {m}"));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(at("missing key before `=`".into()));
            }
            if let Some(first) = seen.insert(key.to_string(), line_no) {
                return Err(at(format!("duplicate key `{key}` (lines {first} and {line_no})")));
            }
            match cfg.set(key, value) {
                Ok(true) => {}
                Ok(false) => return Err(at(format!("unknown key `{key}`"))),
                Err(ty) => return Err(at(format!("`{key}` expects {ty}, found `{value}`"))),
            }
        }
        cfg.validate().map_err(|e| e.context(origin))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    /// Canonical text: every key in declaration order. Parsing it back gives
    /// an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.values() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn help_text() -> String {
        let defaults: HashMap<_, _> = RunConfig::default().values().into_iter().collect();
        let mut s = String::from("Config keys (`key = value`, `#` starts a comment):\n");
        for (k, ty, help) in RunConfig::KEYS {
            let _ = writeln!(s, "  {k:<28} {} [{ty}; default {}]", help.trim(), defaults[k]);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic().validate()?;
        self.round_config().validate()?;
        self.backbone_spec()?;
        self.attack_spec()?;
        for (name, v) in [("train_fraction", self.train_fraction), ("public_train_fraction", self.public_train_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.n_clients == 0 {
            return Err(Error::Config("n_clients must be at least 1".into()));
        }
        if self.pretrain_epochs == 0 || self.pretrain_batch_size == 0 || !(self.pretrain_lr > 0.0) {
            return Err(Error::Config("pretraining needs positive epochs, batch size and lr".into()));
        }
        if self.attack_iterations == 0 || !(self.attack_lr > 0.0) {
            return Err(Error::Config("attack needs positive iterations and lr".into()));
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_identities: self.n_identities,
            images_per_identity: self.images_per_identity,
            image_side: self.image_side,
            public_offset: self.public_offset,
            private_offset: self.private_offset,
            public_smoothing: self.public_smoothing,
            private_smoothing: self.private_smoothing,
            contrast: self.contrast,
            wild_noise_std: self.wild_noise_std,
            public_illumination: self.public_illumination,
            private_illumination: self.private_illumination,
            occlusion_prob: self.occlusion_prob,
            max_shift: self.max_shift,
            seed: self.seed,
        }
    }

    pub fn public_synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_identities: self.public_identities,
            images_per_identity: self.public_images_per_identity,
            ..self.synthetic()
        }
    }

    pub fn head(&self) -> HeadConfig {
        HeadConfig {
            scale: self.head_scale,
            margin: self.head_margin,
        }
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            n_rounds: self.n_rounds,
            local_epochs: self.local_epochs,
            lr: self.lr,
            warmup_batches: self.warmup_batches,
            warmup_scope: self.warmup_scope,
            batch_size: self.batch_size,
            freeze_bn: self.freeze_bn,
            weighted_aggregation: self.weighted_aggregation,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            warmup_batches: 0,
            batch_size: self.pretrain_batch_size,
            head: self.head(),
            seed: self.seed,
        }
    }

    pub fn partition(&self) -> PartitionScheme {
        PartitionScheme {
            kind: self.partition_scheme,
            n_clients: self.n_clients,
        }
    }

    pub fn backbone_spec(&self) -> Result<BackboneSpec> {
        BackboneSpec::from_parts(&synthetic_input(self.image_side), &self.arch).map_err(|e| e.context("arch"))
    }

    pub fn attack_spec(&self) -> Result<BackboneSpec> {
        BackboneSpec::from_parts(MNIST_INPUT, &self.attack_arch).map_err(|e| e.context("attack_arch"))
    }
}
