use serde::Serialize;

use super::{distance, l2_normalize, tar_at_far};
use crate::data::PairSet;
use crate::error::Result;
use crate::model::Backbone;

#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

/// Embeds every pair image once and returns the pair distances split by label.
pub fn score_pairs(backbone: &Backbone, pairs: &PairSet, normalize: bool) -> Result<PairScores> {
    let emb = backbone.embed_all(&pairs.images.images, 256)?;
    let rows: Vec<Vec<f64>> = (0..emb.batch())
        .map(|i| if normalize { l2_normalize(emb.row(i)) } else { emb.row(i).to_vec() })
        .collect();
    let mut out = PairScores { genuine: Vec::new(), impostor: Vec::new() };
    for p in &pairs.pairs {
        let d = distance(&rows[p.a], &rows[p.b]);
        if p.label == 1 {
            out.genuine.push(d);
        } else {
            out.impostor.push(d);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub tar_far_1e2: f64,
    pub tar_far_1e3: f64,
    pub threshold_far_1e2: f64,
    pub threshold_far_1e3: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
    /// Set when an operating point has fewer impostors than `1/far`.
    pub unreliable_far: Vec<f64>,
}

impl EvalSummary {
    pub fn from_scores(scores: &PairScores) -> Result<Self> {
        let p2 = tar_at_far(&scores.genuine, &scores.impostor, 1e-2)?;
        let p3 = tar_at_far(&scores.genuine, &scores.impostor, 1e-3)?;
        Ok(EvalSummary {
            tar_far_1e2: p2.tar,
            tar_far_1e3: p3.tar,
            threshold_far_1e2: p2.threshold,
            threshold_far_1e3: p3.threshold,
            n_genuine: scores.genuine.len(),
            n_impostor: scores.impostor.len(),
            unreliable_far: [p2, p3].iter().filter(|p| p.unreliable).map(|p| p.far_target).collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// `metric,value,threshold` rows.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value,threshold\ntar_at_far_1e2,{},{}\ntar_at_far_1e3,{},{}\n",
            self.tar_far_1e2, self.threshold_far_1e2, self.tar_far_1e3, self.threshold_far_1e3
        )
    }
}

pub fn evaluate_pairs(backbone: &Backbone, pairs: &PairSet, normalize: bool) -> Result<EvalSummary> {
    EvalSummary::from_scores(&score_pairs(backbone, pairs, normalize)?)
}
