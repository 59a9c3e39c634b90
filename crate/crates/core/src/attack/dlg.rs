use super::capture::{CapturedGradients, ShareScope};
use super::output::attack_metrics;
use crate::error::{Error, Result};
use crate::model::{log_softmax_rows, softmax_rows, ArcFaceProjector, Backbone, NamedTensors};
use crate::nn::BnMode;
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

const IMAGE_STREAM: u64 = 0x494d;
const PROJECTOR_STREAM: u64 = 0x5057;
const LABEL_STREAM: u64 = 0x4c42;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    /// Everything is shared; the attacker holds the victim's projector.
    BaselineFullModel,
    /// Projector withheld; the attacker guesses one and optimizes it jointly.
    ProtectedRandomProjector,
    /// Projector withheld but handed to the attacker anyway (upper bound).
    ProtectedOracleProjector,
}

impl AttackMode {
    pub const ALL: [AttackMode; 3] = [
        AttackMode::BaselineFullModel,
        AttackMode::ProtectedRandomProjector,
        AttackMode::ProtectedOracleProjector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackMode::BaselineFullModel => "baseline",
            AttackMode::ProtectedRandomProjector => "protected_random",
            AttackMode::ProtectedOracleProjector => "protected_oracle",
        }
    }

    /// What the victim reveals under this mode.
    pub fn scope(self) -> ShareScope {
        match self {
            AttackMode::BaselineFullModel => ShareScope::Full,
            _ => ShareScope::PublicOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelStrategy {
    KnownLabel,
    /// `ỹ = softmax(z)` with `z` optimized alongside the image.
    OptimizeSoftLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMethod {
    /// Central difference of the backward pass along the residual `g* − g`:
    /// three backward passes per iteration regardless of image size.
    Directional,
    /// Central difference of `J` itself, one coordinate at a time.
    PerCoordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackInit {
    UniformNoise,
    /// Start from the victim's true image (and label). Sanity checks only.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub iterations: usize,
    pub optimizer: Optimizer,
    pub lr_attack: f64,
    pub mode: AttackMode,
    pub label_strategy: LabelStrategy,
    pub seed: u64,
    pub gradient: GradientMethod,
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub init: AttackInit,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 100,
            optimizer: Optimizer::Adam,
            lr_attack: 0.1,
            mode: AttackMode::BaselineFullModel,
            label_strategy: LabelStrategy::KnownLabel,
            seed: 0,
            gradient: GradientMethod::Directional,
            fd_step: 1e-5,
            init: AttackInit::UniformNoise,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("attack iterations must be positive".into()));
        }
        if !(self.lr_attack > 0.0 && self.lr_attack.is_finite()) {
            return Err(Error::Config(format!("lr_attack must be positive, got {}", self.lr_attack)));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Config(format!("fd_step must be positive, got {}", self.fd_step)));
        }
        Ok(())
    }
}

/// What the harness knows about the victim. The attacker only ever reads
/// `projector` in Baseline and Oracle modes and `label` under
/// [`LabelStrategy::KnownLabel`]; `image` is for scoring.
#[derive(Debug, Clone, Copy)]
pub struct Victim<'a> {
    pub projector: &'a ArcFaceProjector,
    pub label: usize,
    pub image: &'a Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_recon: Tensor,
    /// Label distribution; one-hot under `KnownLabel`.
    pub y_recon: Vec<f64>,
    /// `J` at the start of each iteration, then after the last step.
    pub objective_trace: Vec<f64>,
    pub mse_trace: Vec<f64>,
    pub best_iteration: usize,
    pub mse: f64,
    pub psnr: f64,
}

/// The attacker's free variables.
#[derive(Debug, Clone)]
struct Vars {
    x: Tensor,
    z: Option<Vec<f64>>,
    w: Option<Tensor>,
}

impl Vars {
    fn flat(&self) -> Vec<f64> {
        let mut v = self.x.data().to_vec();
        if let Some(z) = &self.z {
            v.extend_from_slice(z);
        }
        if let Some(w) = &self.w {
            v.extend_from_slice(w.data());
        }
        v
    }

    fn set_flat(&mut self, v: &[f64]) {
        let nx = self.x.len();
        self.x.data_mut().copy_from_slice(&v[..nx]);
        let mut off = nx;
        if let Some(z) = &mut self.z {
            let n = z.len();
            z.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        if let Some(w) = &mut self.w {
            w.data_mut().copy_from_slice(&v[off..]);
        }
    }
}

/// Model copy the attacker differentiates through. `proj` is the fixed
/// projector in Baseline/Oracle modes and a template overwritten from
/// `Vars::w` in Random mode.
#[derive(Clone)]
struct Attacked {
    backbone: Backbone,
    proj: ArcFaceProjector,
    label: Option<usize>,
    scope: ShareScope,
}

/// One backward pass: the shared gradients and `∂l/∂v` for each variable.
struct Pass {
    shared: NamedTensors,
    dx: Tensor,
    dz: Option<Vec<f64>>,
    dw: Tensor,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

impl Attacked {
    fn pass(&self, vars: &Vars) -> Result<Pass> {
        let mut b = self.backbone.clone();
        let mut p = self.proj.clone();
        if let Some(w) = &vars.w {
            p.weight.value = w.clone();
        }
        b.zero_grad();
        p.weight.zero_grad();
        let alpha = b.forward(&vars.x)?;
        let (g_logits, dz) = match (&vars.z, self.label) {
            (Some(z), _) => {
                // soft-label CE; the margin sits on the currently most likely class
                let logits = p.forward(&alpha, Some(&[argmax(z)]))?;
                let prob = softmax_rows(&logits);
                let c: Vec<f64> = log_softmax_rows(&logits).data().iter().map(|v| -v).collect();
                let zt = Tensor::new(vec![1, z.len()], z.clone())?;
                let yt = softmax_rows(&zt);
                let y = yt.data();
                let loss: f64 = y.iter().zip(&c).map(|(a, b)| a * b).sum();
                let g: Vec<f64> = prob.data().iter().zip(y).map(|(a, b)| a - b).collect();
                let dz = y.iter().zip(&c).map(|(yk, ck)| yk * (ck - loss)).collect();
                (Tensor::new(logits.shape().to_vec(), g)?, Some(dz))
            }
            (None, Some(label)) => {
                let logits = p.forward(&alpha, Some(&[label]))?;
                let mut g = softmax_rows(&logits);
                g.data_mut()[label] -= 1.0;
                (g, None)
            }
            (None, None) => return Err(Error::Usage("attack has neither a label nor label logits".into())),
        };
        let g_alpha = p.backward(&g_logits)?;
        let dx = b.backward(&g_alpha)?;
        let mut shared = b.grads();
        if self.scope == ShareScope::Full {
            shared.push(p.weight.name.clone(), p.weight.grad.clone());
        }
        Ok(Pass {
            shared,
            dx,
            dz,
            dw: p.weight.grad,
        })
    }

    fn shared_values(&self) -> NamedTensors {
        let mut v = self.backbone.values();
        if self.scope == ShareScope::Full {
            v.push(self.proj.weight.name.clone(), self.proj.weight.value.clone());
        }
        v
    }

    /// Copy with every shared parameter moved by `step · dir`.
    fn shifted(&self, dir: &NamedTensors, step: f64) -> Result<Attacked> {
        let mut out = self.clone();
        let mut moved = self.shared_values();
        for ((_, t), (_, d)) in moved.iter_mut().zip(dir.iter()) {
            for (a, b) in t.data_mut().iter_mut().zip(d.data()) {
                *a += step * b;
            }
        }
        if self.scope == ShareScope::Full {
            let proj_name = out.proj.weight.name.clone();
            let w = moved.get(&proj_name).cloned().expect("projector is shared in full scope");
            out.proj.weight.value = w;
            moved = NamedTensors::from_pairs(
                moved.iter().filter(|(n, _)| *n != proj_name).map(|(n, t)| (n.to_string(), t.clone())),
            );
        }
        out.backbone.load_values(&moved)?;
        Ok(out)
    }

    fn flat_grad(&self, pass: &Pass, vars: &Vars) -> Vec<f64> {
        let mut v = pass.dx.data().to_vec();
        if let Some(dz) = &pass.dz {
            v.extend_from_slice(dz);
        }
        if vars.w.is_some() {
            v.extend_from_slice(pass.dw.data());
        }
        v
    }
}

fn residual(target: &NamedTensors, got: &NamedTensors) -> Result<NamedTensors> {
    let mut r = NamedTensors::new();
    for ((n, a), (_, b)) in target.iter().zip(got.iter()) {
        a.check_same_shape("gradient residual", b)?;
        let d = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        r.push(n, Tensor::new(a.shape().to_vec(), d)?);
    }
    Ok(r)
}

fn norm(t: &NamedTensors) -> f64 {
    t.iter().map(|(_, x)| x.sq_norm()).sum::<f64>().sqrt()
}

/// `J` and `∇J` over the flattened variables.
fn objective_and_grad(
    model: &Attacked,
    target: &NamedTensors,
    vars: &Vars,
    method: GradientMethod,
    fd_step: f64,
) -> Result<(f64, Vec<f64>)> {
    let here = model.pass(vars)?;
    let j = target.sq_distance(&here.shared)?;
    let grad = match method {
        GradientMethod::Directional => {
            let r = residual(target, &here.shared)?;
            let rn = norm(&r);
            if rn == 0.0 {
                vec![0.0; vars.flat().len()]
            } else {
                let eps = fd_step * (1.0 + norm(&model.shared_values())) / rn;
                let plus = model.shifted(&r, eps)?.pass(vars)?;
                let minus = model.shifted(&r, -eps)?.pass(vars)?;
                let gp = model.flat_grad(&plus, vars);
                let gm = model.flat_grad(&minus, vars);
                gp.iter().zip(&gm).map(|(a, b)| -(a - b) / eps).collect()
            }
        }
        GradientMethod::PerCoordinate => {
            let base = vars.flat();
            let mut probe = vars.clone();
            let mut flat = base.clone();
            let mut g = vec![0.0; base.len()];
            for i in 0..base.len() {
                let h = fd_step * (1.0 + base[i].abs());
                flat[i] = base[i] + h;
                probe.set_flat(&flat);
                let jp = target.sq_distance(&model.pass(&probe)?.shared)?;
                flat[i] = base[i] - h;
                probe.set_flat(&flat);
                let jm = target.sq_distance(&model.pass(&probe)?.shared)?;
                flat[i] = base[i];
                g[i] = (jp - jm) / (2.0 * h);
            }
            g
        }
    };
    Ok((j, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn setup(backbone: &Backbone, target: &CapturedGradients, victim: &Victim, cfg: &AttackConfig) -> Result<(Attacked, Vars)> {
    cfg.validate()?;
    let scope = cfg.mode.scope();
    if target.scope != scope {
        return Err(Error::Config(format!(
            "{} mode attacks {:?} gradients, got {:?}",
            cfg.mode.name(),
            scope,
            target.scope
        )));
    }
    let mut bb = backbone.clone();
    bb.set_bn_mode(BnMode::TrainFrozen);
    let n_classes = victim.projector.n_classes();
    if victim.label >= n_classes {
        return Err(Error::Index {
            label: victim.label,
            n_classes,
        });
    }
    let x = match cfg.init {
        AttackInit::GroundTruth => victim.image.clone(),
        AttackInit::UniformNoise => {
            let mut r = rng::seeded(derive_seed(cfg.seed, IMAGE_STREAM));
            let data = (0..victim.image.len()).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
            Tensor::new(victim.image.shape().to_vec(), data)?
        }
    };
    let (label, z) = match cfg.label_strategy {
        LabelStrategy::KnownLabel => (Some(victim.label), None),
        LabelStrategy::OptimizeSoftLabel => {
            let z = match cfg.init {
                AttackInit::GroundTruth => (0..n_classes).map(|k| if k == victim.label { 30.0 } else { 0.0 }).collect(),
                AttackInit::UniformNoise => {
                    let mut r = rng::seeded(derive_seed(cfg.seed, LABEL_STREAM));
                    (0..n_classes).map(|_| rng::normal(&mut r)).collect()
                }
            };
            (None, Some(z))
        }
    };
    let (proj, w) = match cfg.mode {
        AttackMode::ProtectedRandomProjector => {
            let mut r = rng::seeded(derive_seed(cfg.seed, PROJECTOR_STREAM));
            let guess = ArcFaceProjector::new(
                victim.projector.dim(),
                n_classes,
                victim.projector.scale,
                victim.projector.margin,
                &mut r,
            );
            let w = guess.weight.value.clone();
            (guess, Some(w))
        }
        _ => (victim.projector.clone(), None),
    };
    let model = Attacked {
        backbone: bb,
        proj,
        label,
        scope,
    };
    target.grads.check_schema(&model.shared_values().schema())?;
    Ok((model, Vars { x, z, w }))
}

/// Gradient-matching objective `J` at the attack's starting point.
pub fn attack_objective(backbone: &Backbone, target: &CapturedGradients, victim: &Victim, cfg: &AttackConfig) -> Result<f64> {
    let (model, vars) = setup(backbone, target, victim, cfg)?;
    target.grads.sq_distance(&model.pass(&vars)?.shared)
}

/// `∇J` at the attack's starting point, flattened as image pixels, then label
/// logits, then guessed projector weights.
pub fn objective_gradient(
    backbone: &Backbone,
    target: &CapturedGradients,
    victim: &Victim,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    let (model, vars) = setup(backbone, target, victim, cfg)?;
    Ok(objective_and_grad(&model, &target.grads, &vars, cfg.gradient, cfg.fd_step)?.1)
}

/// Reconstructs the victim's input from `target` by gradient matching and
/// returns the iterate with the lowest `J`.
pub fn dlg_attack(backbone: &Backbone, target: &CapturedGradients, victim: &Victim, cfg: &AttackConfig) -> Result<AttackResult> {
    let (model, mut vars) = setup(backbone, target, victim, cfg)?;
    let nx = vars.x.len();
    let mut flat = vars.flat();
    let mut adam = Adam::new(flat.len());
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut mse_trace = Vec::with_capacity(cfg.iterations + 1);
    let mut best: Option<(f64, usize, Vars)> = None;
    for it in 0..=cfg.iterations {
        let last = it == cfg.iterations;
        let (j, grad) = if last {
            (target.grads.sq_distance(&model.pass(&vars)?.shared)?, Vec::new())
        } else {
            objective_and_grad(&model, &target.grads, &vars, cfg.gradient, cfg.fd_step)?
        };
        if !j.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("attack objective at iteration {it}"),
                trace,
            });
        }
        trace.push(j);
        mse_trace.push(attack_metrics(victim.image, &vars.x)?.0);
        if best.as_ref().map_or(true, |(bj, _, _)| j < *bj) {
            best = Some((j, it, vars.clone()));
        }
        if last {
            break;
        }
        match cfg.optimizer {
            Optimizer::Gd => flat.iter_mut().zip(&grad).for_each(|(p, g)| *p -= cfg.lr_attack * g),
            Optimizer::Adam => adam.step(&mut flat, &grad, cfg.lr_attack),
        }
        flat[..nx].iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        vars.set_flat(&flat);
    }
    let (_, best_iteration, v) = best.expect("at least one iterate is scored");
    let y_recon = match &v.z {
        Some(z) => softmax_rows(&Tensor::new(vec![1, z.len()], z.clone())?).into_data(),
        None => (0..victim.projector.n_classes())
            .map(|k| if Some(k) == model.label { 1.0 } else { 0.0 })
            .collect(),
    };
    let (mse, psnr) = attack_metrics(victim.image, &v.x)?;
    Ok(AttackResult {
        x_recon: v.x,
        y_recon,
        objective_trace: trace,
        mse_trace,
        best_iteration,
        mse,
        psnr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::capture_gradients;
    use crate::model::BackboneSpec;
    use crate::nn::relative_error;

    struct Fixture {
        backbone: Backbone,
        proj: ArcFaceProjector,
        image: Tensor,
        label: usize,
    }

    fn fixture(seed: u64) -> Fixture {
        let spec: BackboneSpec = "1x6x6 conv:2:3:2:1,sigmoid,flatten,dense:4,bn".parse().unwrap();
        let mut r = rng::seeded(seed);
        let mut backbone = Backbone::new(&spec, &mut r).unwrap();
        // non-trivial stored statistics
        for l in backbone.layers_mut() {
            if let crate::model::Layer::BatchNorm(s) = l {
                s.running_mean.value.data_mut().iter_mut().for_each(|v| *v = 0.1);
                s.running_var.value.data_mut().iter_mut().for_each(|v| *v = 0.5);
            }
        }
        let proj = ArcFaceProjector::new(4, 3, 64.0, 0.5, &mut r);
        let image = Tensor::new(vec![1, 1, 6, 6], (0..36).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect()).unwrap();
        Fixture {
            backbone,
            proj,
            image,
            label: 1,
        }
    }

    fn victim(f: &Fixture) -> Victim<'_> {
        Victim {
            projector: &f.proj,
            label: f.label,
            image: &f.image,
        }
    }

    fn captured(f: &Fixture, mode: AttackMode) -> CapturedGradients {
        capture_gradients(&f.backbone, &f.proj, &f.image, f.label, mode.scope()).unwrap()
    }

    #[test]
    fn ground_truth_matches_exactly() {
        let f = fixture(3);
        for mode in [AttackMode::BaselineFullModel, AttackMode::ProtectedOracleProjector] {
            let cfg = AttackConfig {
                mode,
                init: AttackInit::GroundTruth,
                ..AttackConfig::default()
            };
            let j = attack_objective(&f.backbone, &captured(&f, mode), &victim(&f), &cfg).unwrap();
            assert!(j <= 1e-10, "{mode:?}: J = {j}");
            let g = objective_gradient(&f.backbone, &captured(&f, mode), &victim(&f), &cfg).unwrap();
            assert!(g.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn directional_gradient_matches_per_coordinate() {
        let f = fixture(5);
        for (mode, labels) in [
            (AttackMode::BaselineFullModel, LabelStrategy::KnownLabel),
            (AttackMode::ProtectedRandomProjector, LabelStrategy::OptimizeSoftLabel),
            (AttackMode::ProtectedOracleProjector, LabelStrategy::OptimizeSoftLabel),
        ] {
            let target = captured(&f, mode);
            let cfg = AttackConfig {
                mode,
                label_strategy: labels,
                seed: 11,
                ..AttackConfig::default()
            };
            let dir = objective_gradient(&f.backbone, &target, &victim(&f), &cfg).unwrap();
            let coord = objective_gradient(
                &f.backbone,
                &target,
                &victim(&f),
                &AttackConfig {
                    gradient: GradientMethod::PerCoordinate,
                    ..cfg.clone()
                },
            )
            .unwrap();
            assert_eq!(dir.len(), coord.len());
            let err = relative_error(&dir, &coord, 1e-12);
            assert!(err < 1e-4, "{mode:?}: relative error {err}");
        }
    }

    #[test]
    fn scope_must_match_mode() {
        let f = fixture(1);
        let cfg = AttackConfig {
            mode: AttackMode::ProtectedRandomProjector,
            ..AttackConfig::default()
        };
        let full = captured(&f, AttackMode::BaselineFullModel);
        assert!(matches!(dlg_attack(&f.backbone, &full, &victim(&f), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn attack_reduces_objective_and_is_deterministic() {
        let f = fixture(7);
        let cfg = AttackConfig {
            iterations: 30,
            seed: 2,
            ..AttackConfig::default()
        };
        let target = captured(&f, cfg.mode);
        let a = dlg_attack(&f.backbone, &target, &victim(&f), &cfg).unwrap();
        let b = dlg_attack(&f.backbone, &target, &victim(&f), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objective_trace.len(), 31);
        let best = a.objective_trace[a.best_iteration];
        assert!(best < a.objective_trace[0]);
        assert!(a.objective_trace.iter().all(|&j| j >= best));
        assert_eq!(a.y_recon, vec![0.0, 1.0, 0.0]);
        assert!(a.x_recon.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
