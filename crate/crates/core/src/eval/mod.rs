//! Nearest-neighbour identification, pairwise verification and TAR@FAR.
//!
//! Scores are Euclidean distances (lower means more similar). By default
//! embeddings are L2-normalized first, which makes the distance monotone in
//! cosine distance.

mod gallery;
mod metrics;
mod report;

pub use gallery::{build_gallery, identify, identify_embedding, verify, Gallery, Verdict};
pub use metrics::{roc_sweep, tar_at_far, FarPoint, RocPoint};
pub use report::{evaluate_pairs, score_pairs, EvalSummary, PairScores};

/// Euclidean distance between two equal-length vectors.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Unit-norm copy; a zero vector is returned unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}
