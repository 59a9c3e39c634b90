use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar-valued `f` at `x`.
///
/// `f` must return a single-element tensor; anything else is a usage error.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::Usage(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = scalar_output(f(&probe)?)?;
        probe.data_mut()[i] = orig - h;
        let minus = scalar_output(f(&probe)?)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

fn scalar_output(t: Tensor) -> Result<f64> {
    if t.len() != 1 {
        return Err(Error::Usage(format!(
            "finite-difference target must be scalar, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`, the comparison used by gradient checks.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
