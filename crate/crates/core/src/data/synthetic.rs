use serde::{Deserialize, Serialize};

use super::{Condition, Dataset, Domain};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};
use crate::tensor::Tensor;

/// Generator settings for synthetic identities.
///
/// Each identity has a prototype: a Gaussian-smoothed random field, scaled
/// by `contrast` around mid-grey and shifted by the domain offset. Wild
/// captures are translated, and add pixel noise, a smooth illumination field
/// and sometimes an occluding rectangle. The two domains differ in offset, smoothing width and
/// illumination strength, which is the shift the federated fine-tuning has
/// to bridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_identities: usize,
    /// Including the single standard image.
    pub images_per_identity: usize,
    pub image_side: usize,
    pub public_offset: f64,
    pub private_offset: f64,
    pub public_smoothing: f64,
    pub private_smoothing: f64,
    pub contrast: f64,
    pub wild_noise_std: f64,
    /// Amplitude of the smooth illumination field added to wild captures.
    pub public_illumination: f64,
    pub private_illumination: f64,
    pub occlusion_prob: f64,
    /// Wild captures are translated by up to this many pixels per axis.
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_identities: 400,
            images_per_identity: 6,
            image_side: 16,
            public_offset: 0.0,
            private_offset: 0.1,
            public_smoothing: 1.5,
            private_smoothing: 1.0,
            contrast: 0.15,
            wild_noise_std: 0.15,
            public_illumination: 0.0,
            private_illumination: 0.15,
            occlusion_prob: 0.3,
            max_shift: 1,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_identities < 2 {
            return bad(format!("n_identities must be at least 2, got {}", self.n_identities));
        }
        if self.images_per_identity < 1 || self.image_side < 4 {
            return bad("images_per_identity >= 1 and image_side >= 4 required".into());
        }
        if 2 * self.max_shift >= self.image_side {
            return bad(format!("max_shift {} too large for side {}", self.max_shift, self.image_side));
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return bad(format!("occlusion_prob {} outside [0, 1]", self.occlusion_prob));
        }
        for (name, v) in [
            ("wild_noise_std", self.wild_noise_std),
            ("contrast", self.contrast),
            ("public_illumination", self.public_illumination),
            ("private_illumination", self.private_illumination),
            ("public_smoothing", self.public_smoothing),
            ("private_smoothing", self.private_smoothing),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    fn domain_params(&self, domain: Domain) -> DomainParams {
        match domain {
            Domain::PublicDomain => DomainParams {
                offset: self.public_offset,
                smoothing: self.public_smoothing,
                illumination: self.public_illumination,
                tag: 1,
            },
            Domain::PrivateDomain => DomainParams {
                offset: self.private_offset,
                smoothing: self.private_smoothing,
                illumination: self.private_illumination,
                tag: 2,
            },
        }
    }
}

struct DomainParams {
    offset: f64,
    smoothing: f64,
    illumination: f64,
    tag: u64,
}

/// Replicate-edge separable Gaussian blur of a `side × side` field.
fn blur(field: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return field.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let at = |v: isize| v.clamp(0, side as isize - 1) as usize;
    let mut tmp = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            tmp[y * side + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * field[y * side + at(x as isize + k as isize - radius)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[at(y as isize + k as isize - radius) * side + x])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

/// Zero-mean, unit-std smoothed Gaussian field.
fn smooth_field(side: usize, sigma: f64, rng: &mut SimRng) -> Vec<f64> {
    let raw: Vec<f64> = (0..side * side).map(|_| rng::normal(rng)).collect();
    let mut field = blur(&raw, side, sigma);
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let std = (field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64).sqrt();
    for v in &mut field {
        *v = (*v - mean) / std.max(1e-12);
    }
    field
}

fn prototype(cfg: &SyntheticConfig, p: &DomainParams, rng: &mut SimRng) -> Vec<f64> {
    let mut field = smooth_field(cfg.image_side, p.smoothing, rng);
    for v in &mut field {
        *v = (0.5 + p.offset + cfg.contrast * *v).clamp(0.0, 1.0);
    }
    field
}

/// Translation with edge replication.
fn shift(img: &[f64], side: usize, dy: isize, dx: isize) -> Vec<f64> {
    let at = |v: isize| v.clamp(0, side as isize - 1) as usize;
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = img[at(y as isize - dy) * side + at(x as isize - dx)];
        }
    }
    out
}

fn wild(cfg: &SyntheticConfig, p: &DomainParams, proto: &[f64], rng: &mut SimRng) -> Vec<f64> {
    let side = cfg.image_side;
    let base = if cfg.max_shift > 0 {
        let span = 2 * cfg.max_shift + 1;
        let mut offset = || (rng::uniform(rng, 0.0, 1.0) * span as f64) as isize - cfg.max_shift as isize;
        let (dy, dx) = (offset(), offset());
        shift(proto, side, dy, dx)
    } else {
        proto.to_vec()
    };
    let mut img: Vec<f64> = base.iter().map(|&p| p + cfg.wild_noise_std * rng::normal(rng)).collect();
    if p.illumination > 0.0 {
        let light = smooth_field(side, side as f64 / 3.0, rng);
        for (v, l) in img.iter_mut().zip(&light) {
            *v += p.illumination * l;
        }
    }
    if cfg.occlusion_prob > 0.0 && rng::uniform(rng, 0.0, 1.0) < cfg.occlusion_prob {
        let lo = (side / 4).max(1);
        let hi = (side / 2).max(lo + 1);
        let h = lo + (rng::uniform(rng, 0.0, 1.0) * (hi - lo) as f64) as usize;
        let w = lo + (rng::uniform(rng, 0.0, 1.0) * (hi - lo) as f64) as usize;
        let y0 = (rng::uniform(rng, 0.0, 1.0) * (side - h + 1) as f64) as usize;
        let x0 = (rng::uniform(rng, 0.0, 1.0) * (side - w + 1) as f64) as usize;
        for y in y0..(y0 + h).min(side) {
            for x in x0..(x0 + w).min(side) {
                img[y * side + x] = 0.0;
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// Identity-major dataset: per identity one standard image (the prototype)
/// followed by `images_per_identity − 1` wild captures.
pub fn gen_synthetic_identities(cfg: &SyntheticConfig, domain: Domain) -> Result<Dataset> {
    cfg.validate()?;
    let params = cfg.domain_params(domain);
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, params.tag));
    let side = cfg.image_side;
    let n = cfg.n_identities * cfg.images_per_identity;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    let mut conditions = Vec::with_capacity(n);
    for id in 0..cfg.n_identities {
        let proto = prototype(cfg, &params, &mut rng);
        data.extend_from_slice(&proto);
        labels.push(id);
        conditions.push(Condition::Standard);
        for _ in 1..cfg.images_per_identity {
            data.extend(wild(cfg, &params, &proto, &mut rng));
            labels.push(id);
            conditions.push(Condition::Wild);
        }
    }
    Dataset::new(Tensor::new(vec![n, 1, side, side], data)?, labels, domain, conditions)
}

/// JSON record written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub config: SyntheticConfig,
    pub domain: Domain,
    pub seed: u64,
    /// CRC-32 of the little-endian `f64` image payload.
    pub checksum: u32,
}

impl SyntheticManifest {
    pub fn new(cfg: &SyntheticConfig, ds: &Dataset) -> Self {
        SyntheticManifest {
            config: cfg.clone(),
            domain: ds.domain,
            seed: cfg.seed,
            checksum: crc32fast::hash(&ds.images.payload_bytes()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
