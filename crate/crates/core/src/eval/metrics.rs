use crate::error::{Error, Result};

/// One operating point: `threshold` is the largest distance at which the
/// impostor accept rate stays within `far_target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarPoint {
    pub far_target: f64,
    pub tar: f64,
    pub threshold: f64,
    /// Fewer impostors than `1/far_target`: the quantile is not resolvable.
    pub unreliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
    pub threshold: f64,
}

fn check_scores(genuine: &[f64], impostor: &[f64]) -> Result<()> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Config("TAR@FAR needs non-empty genuine and impostor scores".into()));
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::NonFinite { context: "verification scores".into(), trace: vec![] });
    }
    Ok(())
}

/// Core computation, defined for any `far ≥ 0`. With `k = ⌊far·n_imp⌋`
/// impostors allowed through, the threshold sits just below the `(k+1)`-th
/// smallest impostor distance.
fn operating_point(genuine: &[f64], sorted_imp: &[f64], far: f64) -> (f64, f64) {
    let n = sorted_imp.len();
    let k = (far * n as f64).floor() as usize;
    if k >= n {
        return (1.0, f64::INFINITY);
    }
    let cut = sorted_imp[k];
    let threshold = cut.next_down();
    let accepted = genuine.iter().filter(|&&g| g < cut).count();
    (accepted as f64 / genuine.len() as f64, threshold)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn tar_at_far(genuine: &[f64], impostor: &[f64], far_target: f64) -> Result<FarPoint> {
    if !(far_target > 0.0 && far_target < 1.0) {
        return Err(Error::Config(format!("far_target {far_target} outside (0, 1)")));
    }
    check_scores(genuine, impostor)?;
    let (tar, threshold) = operating_point(genuine, &sorted(impostor), far_target);
    Ok(FarPoint {
        far_target,
        tar,
        threshold,
        unreliable: (impostor.len() as f64) < 1.0 / far_target,
    })
}

/// `n_points` operating points with FAR log-spaced over `[1e-4, 1]`.
pub fn roc_sweep(genuine: &[f64], impostor: &[f64], n_points: usize) -> Result<Vec<RocPoint>> {
    if n_points < 2 {
        return Err(Error::Config(format!("roc_sweep needs at least 2 points, got {n_points}")));
    }
    check_scores(genuine, impostor)?;
    let imp = sorted(impostor);
    let (lo, hi) = (-4.0f64, 0.0f64);
    Ok((0..n_points)
        .map(|i| {
            let far = if i + 1 == n_points {
                1.0
            } else {
                10f64.powf(lo + (hi - lo) * i as f64 / (n_points - 1) as f64)
            };
            let (tar, threshold) = operating_point(genuine, &imp, far);
            RocPoint { far, tar, threshold }
        })
        .collect())
}
