use std::path::Path;

use super::AttackResult;
use crate::error::{Error, Result};
use crate::model::write_atomic;
use crate::tensor::Tensor;

/// `(mse, psnr)` with `psnr = 10·log10(1/mse)`, `+∞` for identical images.
pub fn attack_metrics(x_true: &Tensor, x_recon: &Tensor) -> Result<(f64, f64)> {
    x_true.check_same_shape("attack_metrics", x_recon)?;
    let mse = x_true
        .data()
        .iter()
        .zip(x_recon.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x_true.len() as f64;
    let psnr = if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
    Ok((mse, psnr))
}

/// Binary greymap (P5, maxval 255) of a single-channel image; leading unit
/// dimensions are ignored.
pub fn pgm_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let shape = img.shape();
    let (lead, hw) = shape.split_at(shape.len().saturating_sub(2));
    if hw.len() != 2 || lead.iter().any(|&d| d != 1) {
        return Err(Error::dim("pgm", shape, &[1, 1, 0, 0]));
    }
    let mut out = format!("P5\n{} {}\n255\n", hw[1], hw[0]).into_bytes();
    out.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &pgm_bytes(img)?)
}

/// `iteration,objective,mse` rows; `mse` is empty when no ground truth was
/// supplied.
pub fn trace_csv(result: &AttackResult) -> String {
    let mut s = String::from("iteration,objective,mse\n");
    for (i, j) in result.objective_trace.iter().enumerate() {
        let mse = result.mse_trace.get(i).map(|m| m.to_string()).unwrap_or_default();
        s.push_str(&format!("{i},{j},{mse}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let z = Tensor::zeros(vec![1, 1, 2, 2]);
        let o = Tensor::full(vec![1, 1, 2, 2], 1.0);
        assert_eq!(attack_metrics(&z, &z).unwrap(), (0.0, f64::INFINITY));
        assert_eq!(attack_metrics(&z, &o).unwrap(), (1.0, 0.0));
        let t = Tensor::full(vec![1, 1, 2, 2], 0.1);
        let (mse, psnr) = attack_metrics(&z, &t).unwrap();
        assert!((mse - 0.01).abs() < 1e-15 && (psnr - 20.0).abs() < 1e-9);
        assert!(attack_metrics(&z, &Tensor::zeros(vec![1, 4])).is_err());
    }

    #[test]
    fn pgm_layout() {
        let img = Tensor::new(vec![1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(pgm_bytes(&img).unwrap(), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }
}
