use super::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and fold them into the running ones.
    TrainUpdate,
    /// Normalize with the stored running statistics, leaving them untouched.
    TrainFrozen,
    Eval,
}

impl BnMode {
    pub fn uses_batch_stats(self) -> bool {
        self == BnMode::TrainUpdate
    }
}

/// Per-feature batch normalization over `[B, F]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Parameter,
    pub running_var: Parameter,
    pub epsilon: f64,
    pub momentum: f64,
    pub mode: BnMode,
}

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

impl BatchNormState {
    pub fn new(prefix: &str, features: usize) -> Self {
        BatchNormState {
            gamma: Parameter::trainable(format!("{prefix}.gamma"), Tensor::full(vec![features], 1.0)),
            beta: Parameter::trainable(format!("{prefix}.beta"), Tensor::zeros(vec![features])),
            running_mean: Parameter::statistic(format!("{prefix}.running_mean"), Tensor::zeros(vec![features])),
            running_var: Parameter::statistic(format!("{prefix}.running_var"), Tensor::full(vec![features], 1.0)),
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
            mode: BnMode::TrainUpdate,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.len()
    }
}

/// What the backward pass needs from the matching forward.
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: BnMode,
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// `γ ⊙ (x − μ) / sqrt(σ² + ε) + β`, with (μ, σ²) taken from the batch in
/// [`BnMode::TrainUpdate`] and from the running statistics otherwise.
pub fn batchnorm_forward(x: &Tensor, state: &mut BatchNormState) -> Result<(Tensor, BnCache)> {
    let f = state.features();
    if x.rank() != 2 || x.shape()[1] != f {
        return Err(Error::dim("batchnorm", x.shape(), &[0, f]));
    }
    let batch = x.shape()[0];
    let (mean, var) = if state.mode.uses_batch_stats() {
        if batch < 2 {
            return Err(Error::BatchSize { op: "batchnorm (TrainUpdate)", got: batch, need: 2 });
        }
        let mut mean = vec![0.0; f];
        for i in 0..batch {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= batch as f64);
        let mut var = vec![0.0; f];
        for i in 0..batch {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= batch as f64);
        let mo = state.momentum;
        for (r, m) in state.running_mean.value.data_mut().iter_mut().zip(&mean) {
            *r = (1.0 - mo) * *r + mo * m;
        }
        for (r, v) in state.running_var.value.data_mut().iter_mut().zip(&var) {
            *r = (1.0 - mo) * *r + mo * v;
        }
        (mean, var)
    } else {
        (
            state.running_mean.value.data().to_vec(),
            state.running_var.value.data().to_vec(),
        )
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
    let (gamma, beta) = (state.gamma.value.data(), state.beta.value.data());
    let mut x_hat = vec![0.0; batch * f];
    let mut out = vec![0.0; batch * f];
    for i in 0..batch {
        for (j, &v) in x.row(i).iter().enumerate() {
            let h = (v - mean[j]) * inv_std[j];
            x_hat[i * f + j] = h;
            out[i * f + j] = gamma[j] * h + beta[j];
        }
    }
    Ok((
        Tensor::new(vec![batch, f], out)?,
        BnCache {
            mode: state.mode,
            x_hat: Tensor::new(vec![batch, f], x_hat)?,
            inv_std,
        },
    ))
}

/// Gradients of [`batchnorm_forward`]; accumulates into γ and β.
///
/// With fixed statistics the map is affine, so `dx = upstream ⊙ γ / sqrt(σ² + ε)`.
pub fn batchnorm_backward(
    state: &mut BatchNormState,
    cache: &BnCache,
    upstream: &Tensor,
) -> Result<BnGrads> {
    if state.mode != cache.mode {
        return Err(Error::Usage(format!(
            "batchnorm backward in {:?} mode but forward ran in {:?}",
            state.mode, cache.mode
        )));
    }
    upstream.check_same_shape("batchnorm backward", &cache.x_hat)?;
    let (batch, f) = (upstream.shape()[0], upstream.shape()[1]);
    let gamma = state.gamma.value.data();
    let mut g_gamma = vec![0.0; f];
    let mut g_beta = vec![0.0; f];
    for i in 0..batch {
        for j in 0..f {
            let u = upstream.data()[i * f + j];
            g_beta[j] += u;
            g_gamma[j] += u * cache.x_hat.data()[i * f + j];
        }
    }
    let mut gx = vec![0.0; batch * f];
    if cache.mode.uses_batch_stats() {
        let n = batch as f64;
        for j in 0..f {
            // Σ dx̂ = γ Σ u and Σ dx̂·x̂ = γ Σ u·x̂
            let sum_d = gamma[j] * g_beta[j];
            let sum_dh = gamma[j] * g_gamma[j];
            for i in 0..batch {
                let d = upstream.data()[i * f + j] * gamma[j];
                let h = cache.x_hat.data()[i * f + j];
                gx[i * f + j] = cache.inv_std[j] / n * (n * d - sum_d - h * sum_dh);
            }
        }
    } else {
        for i in 0..batch {
            for j in 0..f {
                gx[i * f + j] = upstream.data()[i * f + j] * gamma[j] * cache.inv_std[j];
            }
        }
    }
    let grads = BnGrads {
        input: Tensor::new(vec![batch, f], gx)?,
        gamma: Tensor::new(vec![f], g_gamma)?,
        beta: Tensor::new(vec![f], g_beta)?,
    };
    state.gamma.grad.add_assign(&grads.gamma)?;
    state.beta.grad.add_assign(&grads.beta)?;
    Ok(grads)
}
