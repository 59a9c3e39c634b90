use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LossRecord {
    pub loss: f64,
    pub logits: Tensor,
    pub target: Vec<usize>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let n = logits.row_len();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Row-wise `log softmax`, stabilized by max subtraction.
pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let n = logits.row_len();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Mean over the batch of `−log softmax(logits)[y]`.
pub fn cross_entropy(logits: &Tensor, target: &[usize]) -> Result<LossRecord> {
    if logits.rank() != 2 || logits.shape()[0] != target.len() {
        return Err(Error::dim("cross_entropy", logits.shape(), &[target.len()]));
    }
    let n = logits.shape()[1];
    if let Some(&bad) = target.iter().find(|&&y| y >= n) {
        return Err(Error::Index { label: bad, n_classes: n });
    }
    let lsm = log_softmax_rows(logits);
    let loss = -target
        .iter()
        .enumerate()
        .map(|(b, &y)| lsm.data()[b * n + y])
        .sum::<f64>()
        / target.len() as f64;
    Ok(LossRecord {
        loss: loss.max(0.0),
        logits: logits.clone(),
        target: target.to_vec(),
    })
}

impl LossRecord {
    /// `∂loss/∂logits = (softmax − onehot) / B`.
    pub fn logit_grad(&self) -> Tensor {
        let mut g = softmax_rows(&self.logits);
        let n = self.logits.shape()[1];
        let b = self.target.len() as f64;
        for (i, &y) in self.target.iter().enumerate() {
            g.data_mut()[i * n + y] -= 1.0;
        }
        g.data_mut().iter_mut().for_each(|v| *v /= b);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        for k in [2usize, 5, 10] {
            let l = cross_entropy(&Tensor::full(vec![3, k], 0.7), &[0, 1, k - 1]).unwrap();
            assert!((l.loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logits_give_zero_loss() {
        let l = cross_entropy(&Tensor::from_rows(&[&[1000.0, 0.0, 0.0]]), &[0]).unwrap();
        assert!(l.loss.abs() < 1e-6);
    }

    #[test]
    fn two_class_hand_value() {
        let l = cross_entropy(&Tensor::from_rows(&[&[0.0, 3f64.ln()]]), &[0]).unwrap();
        // softmax = [1/4, 3/4]
        assert!((l.loss - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn invalid_label_is_index_error() {
        assert!(matches!(
            cross_entropy(&Tensor::zeros(vec![1, 3]), &[3]),
            Err(Error::Index { label: 3, n_classes: 3 })
        ));
    }

    #[test]
    fn logit_grad_rows_sum_to_zero() {
        let l = cross_entropy(&Tensor::from_rows(&[&[0.3, -1.0, 2.0], &[0.0, 0.0, 0.1]]), &[2, 0]).unwrap();
        let g = l.logit_grad();
        for r in 0..2 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
