use super::{distance, l2_normalize};
use crate::error::{Error, Result};
use crate::model::Backbone;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    pub entries: Vec<(usize, Vec<f64>)>,
    pub normalized: bool,
}

impl Gallery {
    pub fn from_embeddings(entries: Vec<(usize, Vec<f64>)>, normalize: bool) -> Result<Self> {
        let mut ids: Vec<usize> = entries.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate gallery identity {}", w[0])));
        }
        if let Some((_, first)) = entries.first() {
            let d = first.len();
            if let Some((id, e)) = entries.iter().find(|(_, e)| e.len() != d) {
                return Err(Error::Schema(format!("gallery entry {id} has dimension {}, expected {d}", e.len())));
            }
        }
        let entries = if normalize {
            entries.into_iter().map(|(id, e)| (id, l2_normalize(&e))).collect()
        } else {
            entries
        };
        Ok(Gallery { entries, normalized: normalize })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|(_, e)| e.len())
    }
}

/// Embeds each reference image (`images` is `[N, C, H, W]`) once.
pub fn build_gallery(backbone: &Backbone, ids: &[usize], images: &Tensor, normalize: bool) -> Result<Gallery> {
    if ids.len() != images.batch() {
        return Err(Error::dim("gallery references", &[ids.len()], &[images.batch()]));
    }
    let emb = backbone.embed(images)?;
    Gallery::from_embeddings(ids.iter().enumerate().map(|(i, &id)| (id, emb.row(i).to_vec())).collect(), normalize)
}

/// Nearest gallery identity to an embedding; ties go to the smallest id.
pub fn identify_embedding(probe: &[f64], gallery: &Gallery) -> Result<usize> {
    let d = gallery.dim().ok_or_else(|| Error::Config("identification against an empty gallery".into()))?;
    if probe.len() != d {
        return Err(Error::Schema(format!("probe dimension {} does not match gallery dimension {d}", probe.len())));
    }
    let probe = if gallery.normalized { l2_normalize(probe) } else { probe.to_vec() };
    let mut best: Option<(f64, usize)> = None;
    for (id, e) in &gallery.entries {
        let dist = distance(&probe, e);
        best = match best {
            Some((bd, bid)) if bd < dist || (bd == dist && bid < *id) => Some((bd, bid)),
            _ => Some((dist, *id)),
        };
    }
    Ok(best.expect("gallery is non-empty").1)
}

/// Identity of a single probe image `[1, C, H, W]`.
pub fn identify(backbone: &Backbone, x: &Tensor, gallery: &Gallery) -> Result<usize> {
    if x.batch() != 1 {
        return Err(Error::BatchSize { op: "identify", got: x.batch(), need: 1 });
    }
    identify_embedding(backbone.embed(x)?.row(0), gallery)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub accept: bool,
    pub distance: f64,
}

/// Accepts iff the embedding distance is at most `tau`.
pub fn verify(backbone: &Backbone, xa: &Tensor, xb: &Tensor, tau: f64, normalize: bool) -> Result<Verdict> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("threshold must be non-negative, got {tau}")));
    }
    let (ea, eb) = (backbone.embed(xa)?, backbone.embed(xb)?);
    let (a, b) = if normalize {
        (l2_normalize(ea.row(0)), l2_normalize(eb.row(0)))
    } else {
        (ea.row(0).to_vec(), eb.row(0).to_vec())
    };
    let distance = distance(&a, &b);
    Ok(Verdict { accept: distance <= tau, distance })
}
