use super::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients produced by one [`dense_backward`] call (before accumulation).
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check_shapes(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(Error::dim("dense", x.shape(), w.shape()));
    }
    if b.shape() != [w.shape()[1]] {
        return Err(Error::dim("dense bias", b.shape(), &w.shape()[1..]));
    }
    Ok((x.shape()[0], w.shape()[0], w.shape()[1]))
}

/// `y = x W + b` for `x: [B, din]`, `W: [din, dout]`, `b: [dout]`.
pub fn dense_forward(x: &Tensor, weight: &Parameter, bias: &Parameter) -> Result<Tensor> {
    let (batch, din, dout) = check_shapes(x, &weight.value, &bias.value)?;
    let w = weight.value.data();
    let mut out = vec![0.0; batch * dout];
    for i in 0..batch {
        let row = &mut out[i * dout..(i + 1) * dout];
        row.copy_from_slice(bias.value.data());
        for (k, &xv) in x.row(i).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[k * dout..(k + 1) * dout];
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    debug_assert_eq!(din, x.row_len());
    Tensor::new(vec![batch, dout], out)
}

/// Analytic gradients of the dense map; accumulates into `weight.grad` and
/// `bias.grad` and returns all three pieces.
pub fn dense_backward(
    x: &Tensor,
    weight: &mut Parameter,
    bias: &mut Parameter,
    upstream: &Tensor,
) -> Result<DenseGrads> {
    let (batch, din, dout) = check_shapes(x, &weight.value, &bias.value)?;
    if upstream.shape() != [batch, dout] {
        return Err(Error::dim("dense backward", upstream.shape(), &[batch, dout]));
    }
    let w = weight.value.data();
    let mut gx = vec![0.0; batch * din];
    let mut gw = vec![0.0; din * dout];
    let mut gb = vec![0.0; dout];
    for i in 0..batch {
        let up = upstream.row(i);
        let xi = x.row(i);
        for (o, &u) in gb.iter_mut().zip(up) {
            *o += u;
        }
        for k in 0..din {
            let wrow = &w[k * dout..(k + 1) * dout];
            gx[i * din + k] = wrow.iter().zip(up).map(|(a, b)| a * b).sum();
            let xv = xi[k];
            if xv != 0.0 {
                for (g, &u) in gw[k * dout..(k + 1) * dout].iter_mut().zip(up) {
                    *g += xv * u;
                }
            }
        }
    }
    let grads = DenseGrads {
        input: Tensor::new(vec![batch, din], gx)?,
        weight: Tensor::new(vec![din, dout], gw)?,
        bias: Tensor::new(vec![dout], gb)?,
    };
    weight.grad.add_assign(&grads.weight)?;
    bias.grad.add_assign(&grads.bias)?;
    Ok(grads)
}
