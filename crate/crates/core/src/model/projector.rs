use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::rng::{self, SimRng};
use crate::tensor::Tensor;

/// Cosines are clamped to this distance from ±1 before `arccos`.
pub const COSINE_CLAMP: f64 = 1e-7;

/// Device-private angular-margin classification head.
///
/// `logit[b, j] = s · cos(θ_bj + m·[j = y_b])` where `cos θ_bj` is the cosine
/// between the embedding row and the class weight column.
#[derive(Debug, Clone)]
pub struct ArcFaceProjector {
    pub weight: Parameter,
    pub scale: f64,
    pub margin: f64,
    cache: Option<ArcCache>,
}

#[derive(Debug, Clone)]
struct ArcCache {
    batch: usize,
    a_hat: Vec<f64>,
    a_norm: Vec<f64>,
    w_hat: Vec<f64>,
    w_norm: Vec<f64>,
    /// ∂logit/∂cos per entry, scale included.
    dlogit_dcos: Vec<f64>,
}

impl ArcFaceProjector {
    pub const PARAM_NAME: &'static str = "projector.weight";

    /// Fresh head with i.i.d. `N(0, 1/d)` weights.
    pub fn new(dim: usize, n_classes: usize, scale: f64, margin: f64, rng: &mut SimRng) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let data = (0..dim * n_classes).map(|_| std * rng::normal(rng)).collect();
        let w = Tensor::new(vec![dim, n_classes], data).expect("shape matches data");
        ArcFaceProjector::from_weight(w, scale, margin)
    }

    pub fn from_weight(weight: Tensor, scale: f64, margin: f64) -> Self {
        ArcFaceProjector {
            weight: Parameter::trainable(Self::PARAM_NAME, weight),
            scale,
            margin,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn n_classes(&self) -> usize {
        self.weight.shape()[1]
    }

    fn compute(&self, alpha: &Tensor, labels: Option<&[usize]>) -> Result<(Tensor, ArcCache)> {
        let (d, n) = (self.dim(), self.n_classes());
        if alpha.rank() != 2 || alpha.shape()[1] != d {
            return Err(Error::dim("arcface", alpha.shape(), self.weight.shape()));
        }
        let batch = alpha.shape()[0];
        if let Some(y) = labels {
            if y.len() != batch {
                return Err(Error::dim("arcface labels", &[y.len()], &[batch]));
            }
            if let Some(&bad) = y.iter().find(|&&l| l >= n) {
                return Err(Error::Index { label: bad, n_classes: n });
            }
        }
        let mut a_hat = vec![0.0; batch * d];
        let mut a_norm = vec![0.0; batch];
        for b in 0..batch {
            let row = alpha.row(b);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Degenerate(format!("embedding row {b} has norm {norm}")));
            }
            a_norm[b] = norm;
            for (o, v) in a_hat[b * d..(b + 1) * d].iter_mut().zip(row) {
                *o = v / norm;
            }
        }
        let w = self.weight.value.data();
        let mut w_norm = vec![0.0; n];
        for k in 0..d {
            for j in 0..n {
                w_norm[j] += w[k * n + j] * w[k * n + j];
            }
        }
        for (j, v) in w_norm.iter_mut().enumerate() {
            *v = v.sqrt();
            if !(*v > 0.0) {
                return Err(Error::Degenerate(format!("class weight column {j} has zero norm")));
            }
        }
        let mut w_hat = vec![0.0; d * n];
        for k in 0..d {
            for j in 0..n {
                w_hat[k * n + j] = w[k * n + j] / w_norm[j];
            }
        }
        let s = self.scale;
        let mut logits = vec![0.0; batch * n];
        let mut dlogit = vec![s; batch * n];
        for b in 0..batch {
            let ab = &a_hat[b * d..(b + 1) * d];
            for j in 0..n {
                let mut c = 0.0;
                for k in 0..d {
                    c += ab[k] * w_hat[k * n + j];
                }
                logits[b * n + j] = s * c;
            }
            if let Some(y) = labels {
                if self.margin != 0.0 {
                    // cos(θ + m) = c·cos m − sin θ·sin m, exact for |c| ≤ 1;
                    // the clamp only guards the 1/sin θ in the derivative.
                    // sin θ is the norm of the residual â − c·ŵ: near
                    // alignment √(1 − c²) would amplify rounding in c.
                    let j = y[b];
                    let c = (logits[b * n + j] / s).clamp(-1.0, 1.0);
                    let (sin_m, cos_m) = self.margin.sin_cos();
                    let sin_t = (0..d)
                        .map(|k| {
                            let r = ab[k] - c * w_hat[k * n + j];
                            r * r
                        })
                        .sum::<f64>()
                        .sqrt()
                        .min(1.0);
                    logits[b * n + j] = s * (c * cos_m - sin_t * sin_m);
                    let lim = 1.0 - COSINE_CLAMP;
                    let cc = c.clamp(-lim, lim);
                    dlogit[b * n + j] = s * (cos_m + cc * sin_m / (1.0 - cc * cc).sqrt());
                }
            }
        }
        Ok((
            Tensor::new(vec![batch, n], logits)?,
            ArcCache {
                batch,
                a_hat,
                a_norm,
                w_hat,
                w_norm,
                dlogit_dcos: dlogit,
            },
        ))
    }

    /// Logits without touching any state. With `labels = None` the margin is
    /// not applied anywhere.
    pub fn logits(&self, alpha: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        Ok(self.compute(alpha, labels)?.0)
    }

    /// Training forward; keeps what [`ArcFaceProjector::backward`] needs.
    pub fn forward(&mut self, alpha: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        let (logits, cache) = self.compute(alpha, labels)?;
        self.cache = Some(cache);
        Ok(logits)
    }

    /// Accumulates the weight gradient and returns `∂l/∂α`.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("projector backward without a matching forward".into()))?;
        let (d, n, batch) = (self.dim(), self.n_classes(), cache.batch);
        if grad_logits.shape() != [batch, n] {
            return Err(Error::dim("arcface backward", grad_logits.shape(), &[batch, n]));
        }
        let gc: Vec<f64> = grad_logits
            .data()
            .iter()
            .zip(&cache.dlogit_dcos)
            .map(|(g, dl)| g * dl)
            .collect();
        let mut g_alpha = vec![0.0; batch * d];
        let mut g_what = vec![0.0; d * n];
        for b in 0..batch {
            let ab = &cache.a_hat[b * d..(b + 1) * d];
            let gcb = &gc[b * n..(b + 1) * n];
            let mut g_ahat = vec![0.0; d];
            for k in 0..d {
                let wrow = &cache.w_hat[k * n..(k + 1) * n];
                g_ahat[k] = wrow.iter().zip(gcb).map(|(w, g)| w * g).sum();
                for j in 0..n {
                    g_what[k * n + j] += gcb[j] * ab[k];
                }
            }
            // through a = α/‖α‖
            let dot: f64 = ab.iter().zip(&g_ahat).map(|(a, g)| a * g).sum();
            for k in 0..d {
                g_alpha[b * d + k] = (g_ahat[k] - ab[k] * dot) / cache.a_norm[b];
            }
        }
        let mut g_w = vec![0.0; d * n];
        for j in 0..n {
            let dot: f64 = (0..d).map(|k| cache.w_hat[k * n + j] * g_what[k * n + j]).sum();
            for k in 0..d {
                g_w[k * n + j] = (g_what[k * n + j] - cache.w_hat[k * n + j] * dot) / cache.w_norm[j];
            }
        }
        self.weight.grad.add_assign(&Tensor::new(vec![d, n], g_w)?)?;
        Tensor::new(vec![batch, d], g_alpha)
    }
}

/// Standalone form of [`ArcFaceProjector::logits`].
pub fn arcface_logits(proj: &ArcFaceProjector, alpha: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
    proj.logits(alpha, labels)
}
