use super::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry { stride: 1, padding: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Output extent along one spatial axis, or `None` if the kernel does not fit.
pub fn conv_output_dim(input: usize, kernel: usize, geom: ConvGeometry) -> Option<usize> {
    let padded = input + 2 * geom.padding;
    if geom.stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / geom.stride + 1)
}

struct Dims {
    batch: usize,
    chans: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn dims(x: &Tensor, kernels: &Tensor, bias: &Tensor, geom: ConvGeometry) -> Result<Dims> {
    let (xs, ks) = (x.shape(), kernels.shape());
    if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
        return Err(Error::dim("conv2d", xs, ks));
    }
    if bias.shape() != [ks[0]] {
        return Err(Error::dim("conv2d bias", bias.shape(), &ks[..1]));
    }
    let oh = conv_output_dim(xs[2], ks[2], geom);
    let ow = conv_output_dim(xs[3], ks[3], geom);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Dims {
            batch: xs[0],
            chans: xs[1],
            h: xs[2],
            w: xs[3],
            k: ks[0],
            kh: ks[2],
            kw: ks[3],
            oh,
            ow,
        }),
        _ => Err(Error::dim("conv2d kernel larger than padded input", xs, ks)),
    }
}

/// Cross-correlation of `x: [B, C, H, W]` with `kernels: [K, C, kh, kw]`.
pub fn conv2d_forward(
    x: &Tensor,
    kernels: &Parameter,
    bias: &Parameter,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let d = dims(x, &kernels.value, &bias.value, geom)?;
    let (xd, wd, bd) = (x.data(), kernels.value.data(), bias.value.data());
    let (s, p) = (geom.stride as isize, geom.padding as isize);
    let mut out = vec![0.0; d.batch * d.k * d.oh * d.ow];
    for b in 0..d.batch {
        for k in 0..d.k {
            let obase = (b * d.k + k) * d.oh * d.ow;
            out[obase..obase + d.oh * d.ow].fill(bd[k]);
            for c in 0..d.chans {
                let xbase = (b * d.chans + c) * d.h * d.w;
                let wbase = (k * d.chans + c) * d.kh * d.kw;
                for oy in 0..d.oh {
                    for ky in 0..d.kh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * d.w;
                        let wrow = &wd[wbase + ky * d.kw..wbase + (ky + 1) * d.kw];
                        for ox in 0..d.ow {
                            let mut acc = 0.0;
                            for (kx, &wv) in wrow.iter().enumerate() {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < d.w as isize {
                                    acc += xd[xrow + ix as usize] * wv;
                                }
                            }
                            out[obase + oy * d.ow + ox] += acc;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.batch, d.k, d.oh, d.ow], out)
}

/// Gradients of [`conv2d_forward`]; accumulates into the parameter grads.
pub fn conv2d_backward(
    x: &Tensor,
    kernels: &mut Parameter,
    bias: &mut Parameter,
    geom: ConvGeometry,
    upstream: &Tensor,
) -> Result<ConvGrads> {
    let d = dims(x, &kernels.value, &bias.value, geom)?;
    if upstream.shape() != [d.batch, d.k, d.oh, d.ow] {
        return Err(Error::dim(
            "conv2d backward",
            upstream.shape(),
            &[d.batch, d.k, d.oh, d.ow],
        ));
    }
    let (xd, wd, ud) = (x.data(), kernels.value.data(), upstream.data());
    let (s, p) = (geom.stride as isize, geom.padding as isize);
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; d.k];
    for b in 0..d.batch {
        for k in 0..d.k {
            let ubase = (b * d.k + k) * d.oh * d.ow;
            gb[k] += ud[ubase..ubase + d.oh * d.ow].iter().sum::<f64>();
            for c in 0..d.chans {
                let xbase = (b * d.chans + c) * d.h * d.w;
                let wbase = (k * d.chans + c) * d.kh * d.kw;
                for oy in 0..d.oh {
                    for ky in 0..d.kh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * d.w;
                        for ox in 0..d.ow {
                            let u = ud[ubase + oy * d.ow + ox];
                            if u == 0.0 {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < d.w as isize {
                                    let xi = xrow + ix as usize;
                                    let wi = wbase + ky * d.kw + kx;
                                    gx[xi] += u * wd[wi];
                                    gw[wi] += u * xd[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let grads = ConvGrads {
        input: Tensor::new(x.shape().to_vec(), gx)?,
        kernels: Tensor::new(kernels.value.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![d.k], gb)?,
    };
    kernels.grad.add_assign(&grads.kernels)?;
    bias.grad.add_assign(&grads.bias)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_grad, relative_error};
    use crate::rng;

    fn random(shape: &[usize], r: &mut rng::SimRng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng::normal(r)).collect()).unwrap()
    }

    fn delta_kernel() -> Parameter {
        let mut k = Tensor::zeros(vec![1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        Parameter::trainable("k", k)
    }

    /// Six nested loops straight from the definition.
    fn naive(x: &Tensor, k: &Tensor, b: &Tensor, s: usize, p: usize) -> Tensor {
        let (xs, ks) = (x.shape(), k.shape());
        let oh = (xs[2] + 2 * p - ks[2]) / s + 1;
        let ow = (xs[3] + 2 * p - ks[3]) / s + 1;
        let mut out = Tensor::zeros(vec![xs[0], ks[0], oh, ow]);
        for bi in 0..xs[0] {
            for ki in 0..ks[0] {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[ki];
                        for c in 0..xs[1] {
                            for ky in 0..ks[2] {
                                for kx in 0..ks[3] {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= xs[2] as isize || ix >= xs[3] as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((bi * xs[1] + c) * xs[2] + iy as usize) * xs[3] + ix as usize];
                                    let kv = k.data()[((ki * ks[1] + c) * ks[2] + ky) * ks[3] + kx];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out.data_mut()[((bi * ks[0] + ki) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_on_ones() {
        let x = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let k = Parameter::trainable("k", Tensor::full(vec![1, 1, 2, 2], 1.0));
        let b = Parameter::trainable("b", Tensor::zeros(vec![1]));
        let y = conv2d_forward(&x, &k, &b, ConvGeometry::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut r = rng::seeded(2);
        let x = random(&[1, 1, 3, 3], &mut r);
        let b = Parameter::trainable("b", Tensor::zeros(vec![1]));
        let geom = ConvGeometry { stride: 1, padding: 1 };
        let y = conv2d_forward(&x, &delta_kernel(), &b, geom).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut r = rng::seeded(11);
        for &(s, p) in &[(1, 0), (2, 1), (2, 2), (3, 1)] {
            let x = random(&[2, 3, 7, 6], &mut r);
            let k = Parameter::trainable("k", random(&[4, 3, 3, 2], &mut r));
            let b = Parameter::trainable("b", random(&[4], &mut r));
            let geom = ConvGeometry { stride: s, padding: p };
            let y = conv2d_forward(&x, &k, &b, geom).unwrap();
            let o = naive(&x, &k.value, &b.value, s, p);
            assert_eq!(y.shape(), o.shape());
            for (a, c) in y.data().iter().zip(o.data()) {
                assert!((a - c).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let x = Tensor::zeros(vec![1, 1, 2, 2]);
        let k = Parameter::trainable("k", Tensor::zeros(vec![1, 1, 3, 3]));
        let b = Parameter::trainable("b", Tensor::zeros(vec![1]));
        assert!(matches!(
            conv2d_forward(&x, &k, &b, ConvGeometry::default()),
            Err(Error::Dimension { .. })
        ));
        // padding makes it fit
        assert!(conv2d_forward(&x, &k, &b, ConvGeometry { stride: 1, padding: 1 }).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng::seeded(5);
        let geom = ConvGeometry { stride: 1, padding: 1 };
        let x = random(&[1, 1, 4, 4], &mut r);
        let mut k = Parameter::trainable("k", random(&[2, 1, 3, 3], &mut r));
        let mut b = Parameter::trainable("b", random(&[2], &mut r));
        let probe = random(&[1, 2, 4, 4], &mut r);
        let g = conv2d_backward(&x, &mut k, &mut b, geom, &probe).unwrap();
        let loss = |x: &Tensor, k: &Parameter, b: &Parameter| -> Result<Tensor> {
            let y = conv2d_forward(x, k, b, geom)?;
            Ok(Tensor::scalar(y.data().iter().zip(probe.data()).map(|(a, c)| a * c).sum()))
        };
        let fx = finite_difference_grad(|t| loss(t, &k, &b), &x, 1e-5).unwrap();
        assert!(relative_error(fx.data(), g.input.data(), 1e-12) <= 1e-6);
        let fk = finite_difference_grad(|t| loss(&x, &Parameter::trainable("k", t.clone()), &b), &k.value, 1e-5).unwrap();
        assert!(relative_error(fk.data(), g.kernels.data(), 1e-12) <= 1e-6);
        let fb = finite_difference_grad(|t| loss(&x, &k, &Parameter::trainable("b", t.clone())), &b.value, 1e-5).unwrap();
        assert!(relative_error(fb.data(), g.bias.data(), 1e-12) <= 1e-6);
    }

    #[test]
    fn zero_upstream_and_delta_backward() {
        let mut r = rng::seeded(9);
        let geom = ConvGeometry { stride: 1, padding: 1 };
        let x = random(&[1, 1, 3, 3], &mut r);
        let mut k = delta_kernel();
        let mut b = Parameter::trainable("b", Tensor::zeros(vec![1]));
        let z = conv2d_backward(&x, &mut k, &mut b, geom, &Tensor::zeros(vec![1, 1, 3, 3])).unwrap();
        assert!(z.input.data().iter().chain(z.kernels.data()).chain(z.bias.data()).all(|&v| v == 0.0));
        let up = random(&[1, 1, 3, 3], &mut r);
        let g = conv2d_backward(&x, &mut k, &mut b, geom, &up).unwrap();
        assert_eq!(g.input, up);
    }
}
