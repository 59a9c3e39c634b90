//! Commands as replayable jobs, their output directories and manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedface_core::attack::{trace_csv, write_pgm};
use fedface_core::model::{write_atomic, Checkpoint};
use fedface_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::pipeline::{
    ablate, attack_suite, attack_summary_csv, data_root, evaluate, federate, load_mnist, pretrain_backbone,
    private_split, starting_point, Benchmark,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Version baked in at build time from `git describe`.
pub const VERSION: &str = env!("FEDFACE_VERSION");

/// One command with its input files. Paths are stored as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Job {
    Pretrain,
    Federate { checkpoint: Option<PathBuf> },
    Evaluate { checkpoint: PathBuf, compare: Option<PathBuf> },
    Attack { checkpoint: Option<PathBuf> },
    Ablate,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Pretrain => "pretrain",
            Job::Federate { .. } => "federate",
            Job::Evaluate { .. } => "evaluate",
            Job::Attack { .. } => "attack",
            Job::Ablate => "ablate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the run directory.
    pub path: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub job: Job,
    /// Canonical config text; parsing it reproduces the run's settings.
    pub config: String,
    pub seed: u64,
    pub version: String,
    pub started_at: String,
    pub duration_secs: f64,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("malformed manifest {}: {e}", path.display())))
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config, "manifest config")
    }
}

/// Files a job wrote plus a human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<String>,
    pub summary: String,
}

struct Writer<'a> {
    dir: &'a Path,
    out: Outcome,
}

impl Writer<'_> {
    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        self.bytes(name, body.as_bytes())
    }

    fn bytes(&mut self, name: &str, body: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), body)?;
        self.out.files.push(name.to_string());
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        self.bytes(name, &ckpt.to_bytes())
    }

    fn note(&mut self, line: String) {
        self.out.summary.push_str(&line);
        self.out.summary.push('\n');
    }
}

fn load_backbone(path: &Path, cfg: &RunConfig) -> Result<fedface_core::model::Backbone> {
    Checkpoint::load(path)?
        .restore(Some(&cfg.backbone_spec()?))
        .map_err(|e| e.context(path.display()))
}

/// Runs `job` and writes its artifacts into `dir`, which must exist.
pub fn execute(job: &Job, cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let mut w = Writer { dir, out: Outcome::default() };
    match job {
        Job::Pretrain => {
            let bench = Benchmark::generate(cfg)?;
            let pre = pretrain_backbone(cfg, &bench)?;
            w.checkpoint("pretrained.ckpt", &Checkpoint::from_backbone(&pre.backbone))?;
            let mut csv = String::from("epoch,loss\n");
            csv.push_str(&format!("0,{}\n", pre.initial_loss));
            for (i, l) in pre.epoch_losses.iter().enumerate() {
                csv.push_str(&format!("{},{l}\n", i + 1));
            }
            w.text("pretrain_loss.csv", &csv)?;
            let public = evaluate(cfg, &pre.backbone, &bench.public_pairs)?;
            let private = evaluate(cfg, &pre.backbone, &bench.private_pairs)?;
            w.note(format!("final pretraining loss {:.4}", pre.final_loss));
            w.note(format!(
                "TAR@FAR=1e-2: public held-out {:.4}, private test {:.4}",
                public.tar_far_1e2, private.tar_far_1e2
            ));
        }
        Job::Federate { checkpoint } => {
            let bench = Benchmark::generate(cfg)?;
            let pretrained = match (cfg.pretrained_init, checkpoint) {
                (false, _) => None,
                (true, Some(path)) => Some(load_backbone(path, cfg)?),
                (true, None) => Some(pretrain_backbone(cfg, &bench)?.backbone),
            };
            let init = starting_point(cfg, pretrained.as_ref())?;
            let tuned = federate(cfg, &bench, init, |_, _| {})?;
            w.checkpoint("federated.ckpt", &Checkpoint::from_backbone(&tuned.backbone))?;
            w.text("rounds.csv", &tuned.log.to_csv())?;
            w.note(format!("TAR@FAR=1e-2 after {} rounds: {:.4}", cfg.n_rounds, tuned.final_tar()));
        }
        Job::Evaluate { checkpoint, compare } => {
            let (_, pairs) = private_split(cfg)?;
            let base = evaluate(cfg, &load_backbone(checkpoint, cfg)?, &pairs)?;
            w.text("eval.json", &base.to_json())?;
            w.text("eval.csv", &base.to_csv())?;
            w.note(format!("TAR@FAR=1e-2 {:.4}, TAR@FAR=1e-3 {:.4}", base.tar_far_1e2, base.tar_far_1e3));
            if let Some(other) = compare {
                let reference = evaluate(cfg, &load_backbone(other, cfg)?, &pairs)?;
                let report = serde_json::json!({
                    "checkpoint": base,
                    "compare": reference,
                    "delta_tar_far_1e2": base.tar_far_1e2 - reference.tar_far_1e2,
                    "delta_tar_far_1e3": base.tar_far_1e3 - reference.tar_far_1e3,
                });
                w.text("compare.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
                w.note(format!("delta TAR@FAR=1e-2 {:+.4}", base.tar_far_1e2 - reference.tar_far_1e2));
            }
        }
        Job::Attack { checkpoint } => {
            let mnist = load_mnist(&data_root())?;
            let victim = match checkpoint {
                Some(path) => Some(
                    Checkpoint::load(path)?
                        .restore(Some(&cfg.attack_spec()?))
                        .map_err(|e| e.context(path.display()))?,
                ),
                None => None,
            };
            let runs = attack_suite(cfg, &mnist, cfg.seed, victim.as_ref())?;
            for r in &runs {
                let stem = format!("{}_{}", r.mode.name(), r.image_index);
                write_pgm(dir.join(format!("{stem}.pgm")), &r.result.x_recon)?;
                w.out.files.push(format!("{stem}.pgm"));
                w.text(&format!("{stem}_trace.csv"), &trace_csv(&r.result))?;
            }
            for i in 0..cfg.attack_images {
                if let Some(r) = runs.iter().find(|r| r.image_index == i) {
                    write_pgm(dir.join(format!("original_{i}.pgm")), &r.original)?;
                    w.out.files.push(format!("original_{i}.pgm"));
                }
            }
            let summary = attack_summary_csv(&runs);
            w.text("attack_summary.csv", &summary)?;
            w.note(summary.trim_end().to_string());
        }
        Job::Ablate => {
            let report = ablate(cfg)?;
            w.text("ablation.csv", &report.to_csv())?;
            for (name, v) in report.rows() {
                w.note(format!("{name:<16} TAR@FAR=1e-2 {v:.4}"));
            }
        }
    }
    Ok(w.out)
}

/// `runs/<timestamp>-<command>`, suffixed when a same-second run exists.
pub fn default_run_dir(root: &Path, command: &str) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = root.join(format!("{stamp}-{command}"));
    let mut dir = base.clone();
    let mut n = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    dir
}

/// Executes `job` in `dir` and records the run in `dir/manifest.json`.
pub fn run_job(job: &Job, cfg: &RunConfig, dir: &Path) -> Result<(RunManifest, Outcome)> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
    let started_at = chrono::Local::now().to_rfc3339();
    let clock = Instant::now();
    let outcome = execute(job, cfg, dir)?;
    let outputs = outcome
        .files
        .iter()
        .map(|f| {
            let p = dir.join(f);
            let bytes = fs::read(&p).map_err(|e| Error::Io { path: p.display().to_string(), source: e })?;
            Ok(OutputFile { path: f.clone(), crc32: crc32fast::hash(&bytes) })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        job: job.clone(),
        config: cfg.to_text(),
        seed: cfg.seed,
        version: VERSION.to_string(),
        started_at,
        duration_secs: clock.elapsed().as_secs_f64(),
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok((manifest, outcome))
}

/// Outputs whose checksum differs between a recorded run and its replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub manifest: RunManifest,
    pub mismatched: Vec<String>,
}

/// Reruns the command recorded in `manifest_path` into `dir` and compares
/// every output checksum with the recorded one.
pub fn replay(manifest_path: &Path, dir: &Path) -> Result<ReplayReport> {
    let recorded = RunManifest::load(manifest_path)?;
    let cfg = recorded.run_config()?;
    let (manifest, _) = run_job(&recorded.job, &cfg, dir)?;
    let mut mismatched: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|o| !manifest.outputs.contains(o))
        .map(|o| o.path.clone())
        .collect();
    mismatched.extend(
        manifest
            .outputs
            .iter()
            .filter(|o| !recorded.outputs.iter().any(|r| r.path == o.path))
            .map(|o| o.path.clone()),
    );
    Ok(ReplayReport { manifest, mismatched })
}
