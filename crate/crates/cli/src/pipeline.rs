//! The experiment pipeline shared by the commands and the acceptance suite.

use std::path::{Path, PathBuf};

use fedface_core::attack::{
    capture_gradients, dlg_attack, victim_model, AttackConfig, AttackMode, AttackResult, Victim,
};
use fedface_core::data::{
    gen_synthetic_identities, load_mnist_idx, partition_clients, split_train_test_identities, Dataset, Domain,
    PairSet,
};
use fedface_core::eval::{evaluate_pairs, EvalSummary};
use fedface_core::federation::{
    initial_backbone, pretrain, run_federation, Federation, MetricsLog, Pretrained, RoundTraffic,
};
use fedface_core::model::{Backbone, PublicParams};
use fedface_core::{Error, Result, Tensor};

use crate::config::RunConfig;

pub const DATA_DIR_ENV: &str = "FEDFACE_DATA_DIR";
const MNIST_CLASSES: usize = 10;

/// Public pretraining data and the private federated benchmark.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub public_train: Dataset,
    pub public_pairs: PairSet,
    pub private_train: Dataset,
    pub private_pairs: PairSet,
    pub shards: Vec<Dataset>,
}

impl Benchmark {
    pub fn generate(cfg: &RunConfig) -> Result<Benchmark> {
        let public = gen_synthetic_identities(&cfg.public_synthetic(), Domain::PublicDomain)?;
        let (public_train, public_pairs) = split_train_test_identities(&public, cfg.public_train_fraction, cfg.seed)?;
        let (private_train, private_pairs) = private_split(cfg)?;
        let shards = partition_clients(&private_train, cfg.partition(), cfg.seed)?;
        Ok(Benchmark { public_train, public_pairs, private_train, private_pairs, shards })
    }
}

/// Client training data and the private-domain test pairs.
pub fn private_split(cfg: &RunConfig) -> Result<(Dataset, PairSet)> {
    let private = gen_synthetic_identities(&cfg.synthetic(), Domain::PrivateDomain)?;
    split_train_test_identities(&private, cfg.train_fraction, cfg.seed)
}

pub fn pretrain_backbone(cfg: &RunConfig, bench: &Benchmark) -> Result<Pretrained> {
    pretrain(&cfg.backbone_spec()?, &bench.public_train, &cfg.pretrain_config())
}

/// Where federation starts: the pretrained backbone, or the initialization
/// pretraining itself starts from when `pretrained_init` is off.
pub fn starting_point(cfg: &RunConfig, pretrained: Option<&Backbone>) -> Result<PublicParams> {
    let spec = cfg.backbone_spec()?;
    match (cfg.pretrained_init, pretrained) {
        (true, Some(b)) => {
            if b.spec() != &spec {
                return Err(Error::Schema(format!(
                    "pretrained backbone is `{}` but the config asks for `{spec}`",
                    b.spec()
                )));
            }
            Ok(PublicParams(b.values()))
        }
        (true, None) => Err(Error::Usage("federation needs a pretrained backbone".into())),
        (false, _) => Ok(PublicParams(initial_backbone(&spec, cfg.seed)?.values())),
    }
}

#[derive(Debug, Clone)]
pub struct FineTuned {
    pub backbone: Backbone,
    pub log: MetricsLog,
}

impl FineTuned {
    pub fn final_tar(&self) -> f64 {
        self.log.rows.last().and_then(|r| r.tar_at_far_1e2).unwrap_or(f64::NAN)
    }
}

/// Federated fine-tuning over the client shards, scored on the private test
/// pairs after every round.
pub fn federate(
    cfg: &RunConfig,
    bench: &Benchmark,
    init: PublicParams,
    observer: impl FnMut(&RoundTraffic, &Federation),
) -> Result<FineTuned> {
    let shards = bench.shards.iter().cloned().map(Some).collect();
    fine_tune(cfg, &bench.private_pairs, shards, init, observer)
}

/// The same training on the pooled shards held by a single participant.
pub fn centralized(cfg: &RunConfig, bench: &Benchmark, init: PublicParams) -> Result<FineTuned> {
    let pooled = Dataset::concat(&bench.shards)?;
    fine_tune(cfg, &bench.private_pairs, vec![Some(pooled)], init, |_, _| {})
}

fn fine_tune(
    cfg: &RunConfig,
    pairs: &PairSet,
    shards: Vec<Option<Dataset>>,
    init: PublicParams,
    observer: impl FnMut(&RoundTraffic, &Federation),
) -> Result<FineTuned> {
    let mut fed = Federation::new(cfg.round_config(), cfg.backbone_spec()?, cfg.head(), shards, init, cfg.seed)?;
    let log = run_federation(&mut fed, Some(pairs), cfg.normalize_embeddings, observer)?;
    Ok(FineTuned { backbone: fed.global_backbone()?, log })
}

/// Verification accuracy on the private test pairs for each training variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub pretrained_only: f64,
    pub full: f64,
    pub centralized: f64,
    pub no_pretrain: f64,
    pub no_freeze_bn: f64,
    pub no_warmup: f64,
}

impl AblationReport {
    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("pretrained_only", self.pretrained_only),
            ("federated", self.full),
            ("centralized", self.centralized),
            ("no_pretrain", self.no_pretrain),
            ("no_freeze_bn", self.no_freeze_bn),
            ("no_warmup", self.no_warmup),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,tar_at_far_1e2\n");
        for (name, v) in self.rows() {
            s.push_str(&format!("{name},{v}\n"));
        }
        s
    }
}

/// Every variant on one seed, sharing one pretrained backbone.
pub fn ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let bench = Benchmark::generate(cfg)?;
    let pre = pretrain_backbone(cfg, &bench)?;
    let start = PublicParams(pre.backbone.values());
    let run = |c: RunConfig, init: PublicParams| federate(&c, &bench, init, |_, _| {}).map(|f| f.final_tar());
    let no_pretrain_cfg = RunConfig { pretrained_init: false, ..cfg.clone() };
    Ok(AblationReport {
        pretrained_only: evaluate_pairs(&pre.backbone, &bench.private_pairs, cfg.normalize_embeddings)?.tar_far_1e2,
        full: run(cfg.clone(), start.clone())?,
        centralized: centralized(cfg, &bench, start.clone())?.final_tar(),
        no_pretrain: run(no_pretrain_cfg.clone(), starting_point(&no_pretrain_cfg, None)?)?,
        no_freeze_bn: run(RunConfig { freeze_bn: false, ..cfg.clone() }, start.clone())?,
        no_warmup: run(RunConfig { warmup_batches: 0, ..cfg.clone() }, start)?,
    })
}

pub fn evaluate(cfg: &RunConfig, backbone: &Backbone, pairs: &PairSet) -> Result<EvalSummary> {
    let spec = cfg.backbone_spec()?;
    if backbone.spec().input != spec.input || backbone.embedding_dim() != spec.embedding_dim() {
        return Err(Error::Schema(format!(
            "checkpoint `{}` does not fit the configured data and embedding width `{spec}`",
            backbone.spec()
        )));
    }
    evaluate_pairs(backbone, pairs, cfg.normalize_embeddings)
}

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

pub fn mnist_paths(root: &Path) -> (PathBuf, PathBuf) {
    let dir = root.join("mnist");
    (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"))
}

pub fn load_mnist(root: &Path) -> Result<Dataset> {
    let (images, labels) = mnist_paths(root);
    if !images.is_file() || !labels.is_file() {
        return Err(Error::Config(format!(
            "MNIST not found: expected {} and {} (point {DATA_DIR_ENV} at the directory holding mnist/)",
            images.display(),
            labels.display()
        )));
    }
    load_mnist_idx(&images, &labels)
}

pub fn attack_config(cfg: &RunConfig, mode: AttackMode, seed: u64) -> AttackConfig {
    AttackConfig {
        iterations: cfg.attack_iterations,
        optimizer: cfg.attack_optimizer,
        lr_attack: cfg.attack_lr,
        mode,
        label_strategy: cfg.attack_label,
        seed,
        ..AttackConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct AttackRun {
    pub mode: AttackMode,
    pub image_index: usize,
    pub original: Tensor,
    pub result: AttackResult,
}

/// All three attack modes against the first `attack_images` digits. The
/// victim is drawn from `seed` unless a backbone is supplied.
pub fn attack_suite(cfg: &RunConfig, mnist: &Dataset, seed: u64, victim: Option<&Backbone>) -> Result<Vec<AttackRun>> {
    let spec = cfg.attack_spec()?;
    if mnist.len() < cfg.attack_images {
        return Err(Error::Config(format!(
            "attack_images = {} but MNIST holds {} images",
            cfg.attack_images,
            mnist.len()
        )));
    }
    let (fresh, projector) = victim_model(&spec, MNIST_CLASSES, cfg.head(), seed)?;
    let backbone = match victim {
        Some(b) if b.spec() != &spec => {
            return Err(Error::Schema(format!("attack checkpoint is `{}`, expected `{spec}`", b.spec())))
        }
        Some(b) => b.clone(),
        None => fresh,
    };
    let mut out = Vec::with_capacity(cfg.attack_images * AttackMode::ALL.len());
    for image_index in 0..cfg.attack_images {
        let image = mnist.images.select_rows(&[image_index]);
        let label = mnist.labels[image_index];
        for mode in AttackMode::ALL {
            let target = capture_gradients(&backbone, &projector, &image, label, mode.scope())?;
            let victim = Victim { projector: &projector, label, image: &image };
            let result = dlg_attack(&backbone, &target, &victim, &attack_config(cfg, mode, seed))
                .map_err(|e| e.context(format!("{} attack on image {image_index}", mode.name())))?;
            out.push(AttackRun { mode, image_index, original: image.clone(), result });
        }
    }
    Ok(out)
}

pub fn attack_summary_csv(runs: &[AttackRun]) -> String {
    let mut s = String::from("mode,image_index,final_mse,final_psnr\n");
    for r in runs {
        s.push_str(&format!("{},{},{},{}\n", r.mode.name(), r.image_index, r.result.mse, r.result.psnr));
    }
    s
}
