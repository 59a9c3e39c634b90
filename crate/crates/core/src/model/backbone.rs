use super::arch::{BackboneSpec, LayerSpec};
use super::params::NamedTensors;
use crate::error::{Error, Result};
use crate::nn::{
    activation, activation_backward, batchnorm_backward, batchnorm_forward, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, Activation, BatchNormState, BnCache, BnMode,
    ConvGeometry, Parameter,
};
use crate::rng::{self, SimRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense { weight: Parameter, bias: Parameter },
    Conv { kernels: Parameter, bias: Parameter, geom: ConvGeometry },
    BatchNorm(BatchNormState),
    Act(Activation),
    Flatten,
    Center,
}

impl Layer {
    fn params(&self) -> Vec<&Parameter> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Conv { kernels, bias, .. } => vec![kernels, bias],
            Layer::BatchNorm(s) => vec![&s.gamma, &s.beta, &s.running_mean, &s.running_var],
            Layer::Act(_) | Layer::Flatten | Layer::Center => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Conv { kernels, bias, .. } => vec![kernels, bias],
            Layer::BatchNorm(s) => vec![
                &mut s.gamma,
                &mut s.beta,
                &mut s.running_mean,
                &mut s.running_var,
            ],
            Layer::Act(_) | Layer::Flatten | Layer::Center => vec![],
        }
    }
}

#[derive(Debug, Clone)]
enum Saved {
    Input(Tensor),
    Bn(BnCache),
    Shape(Vec<usize>),
}

/// The public embedding network. Every parameter it owns is shared with the
/// server.
#[derive(Debug, Clone)]
pub struct Backbone {
    spec: BackboneSpec,
    layers: Vec<Layer>,
    saved: Vec<Saved>,
}

fn center(v: f64) -> f64 {
    2.0 * v - 1.0
}

fn uniform_tensor(shape: Vec<usize>, bound: f64, rng: &mut SimRng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng::uniform(rng, -bound, bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

impl Backbone {
    /// Builds the layers of `spec` with fan-in scaled uniform initialization.
    pub fn new(spec: &BackboneSpec, rng: &mut SimRng) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut prev: Vec<usize> = spec.input.to_vec();
        for (i, l) in spec.layers.iter().enumerate() {
            let prefix = format!("backbone.{i}");
            let layer = match *l {
                LayerSpec::Conv { out, kernel, geom } => {
                    let fan_in = prev[0] * kernel * kernel;
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Layer::Conv {
                        kernels: Parameter::trainable(
                            format!("{prefix}.weight"),
                            uniform_tensor(vec![out, prev[0], kernel, kernel], bound, rng),
                        ),
                        bias: Parameter::trainable(format!("{prefix}.bias"), uniform_tensor(vec![out], bound, rng)),
                        geom,
                    }
                }
                LayerSpec::Dense { out } => {
                    let bound = 1.0 / (prev[0] as f64).sqrt();
                    Layer::Dense {
                        weight: Parameter::trainable(
                            format!("{prefix}.weight"),
                            uniform_tensor(vec![prev[0], out], bound, rng),
                        ),
                        bias: Parameter::trainable(format!("{prefix}.bias"), uniform_tensor(vec![out], bound, rng)),
                    }
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNormState::new(&prefix, prev[0])),
                LayerSpec::Act(a) => Layer::Act(a),
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Center => Layer::Center,
            };
            layers.push(layer);
            prev = shapes[i].clone();
        }
        Ok(Backbone {
            spec: spec.clone(),
            layers,
            saved: Vec::new(),
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim()
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        for l in &mut self.layers {
            if let Layer::BatchNorm(s) = l {
                s.mode = mode;
            }
        }
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = &BatchNormState> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(s) => Some(s),
            _ => None,
        })
    }

    /// Parameters in declaration order (layer by layer).
    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 4 || x.shape()[1..] != self.spec.input {
            let mut want = vec![0];
            want.extend_from_slice(&self.spec.input);
            return Err(Error::dim("backbone input", x.shape(), &want));
        }
        Ok(())
    }

    /// Training-time forward pass. Batch norms follow their current mode and
    /// whatever backward needs is kept for [`Backbone::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.saved.clear();
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = match layer {
                Layer::Dense { weight, bias } => {
                    let y = dense_forward(&cur, weight, bias)?;
                    self.saved.push(Saved::Input(cur));
                    y
                }
                Layer::Conv { kernels, bias, geom } => {
                    let y = conv2d_forward(&cur, kernels, bias, *geom)?;
                    self.saved.push(Saved::Input(cur));
                    y
                }
                Layer::BatchNorm(state) => {
                    let (y, cache) = batchnorm_forward(&cur, state)?;
                    self.saved.push(Saved::Bn(cache));
                    y
                }
                Layer::Act(kind) => {
                    let y = activation(&cur, *kind);
                    self.saved.push(Saved::Input(cur));
                    y
                }
                Layer::Flatten => {
                    let shape = cur.shape().to_vec();
                    let b = shape[0];
                    let n = cur.row_len();
                    self.saved.push(Saved::Shape(shape));
                    cur.reshape(vec![b, n])?
                }
                Layer::Center => {
                    self.saved.push(Saved::Shape(vec![]));
                    cur.map(center)
                }
            };
        }
        Ok(cur)
    }

    /// Backpropagates `grad_out` (w.r.t. the embedding) through the last
    /// forward pass, accumulating parameter grads. Returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        if self.saved.len() != self.layers.len() {
            return Err(Error::Usage("backbone backward without a matching forward".into()));
        }
        let mut g = grad_out.clone();
        for (layer, saved) in self.layers.iter_mut().zip(&self.saved).rev() {
            g = match (layer, saved) {
                (Layer::Dense { weight, bias }, Saved::Input(x)) => dense_backward(x, weight, bias, &g)?.input,
                (Layer::Conv { kernels, bias, geom }, Saved::Input(x)) => {
                    conv2d_backward(x, kernels, bias, *geom, &g)?.input
                }
                (Layer::BatchNorm(state), Saved::Bn(cache)) => batchnorm_backward(state, cache, &g)?.input,
                (Layer::Act(kind), Saved::Input(x)) => activation_backward(x, &g, *kind)?,
                (Layer::Flatten, Saved::Shape(shape)) => g.reshape(shape.clone())?,
                (Layer::Center, _) => g.map(|v| 2.0 * v),
                _ => unreachable!("saved state always mirrors the layer kind"),
            };
        }
        Ok(g)
    }

    /// Inference embedding `α = f(X)`. Batch norms use their running
    /// statistics regardless of mode; nothing is mutated.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Dense { weight, bias } => dense_forward(&cur, weight, bias)?,
                Layer::Conv { kernels, bias, geom } => conv2d_forward(&cur, kernels, bias, *geom)?,
                Layer::BatchNorm(state) => {
                    let mut frozen = state.clone();
                    frozen.mode = BnMode::Eval;
                    batchnorm_forward(&cur, &mut frozen)?.0
                }
                Layer::Act(kind) => activation(&cur, *kind),
                Layer::Flatten => {
                    let b = cur.batch();
                    let n = cur.row_len();
                    cur.reshape(vec![b, n])?
                }
                Layer::Center => cur.map(center),
            };
        }
        Ok(cur)
    }

    /// Embeds a large batch in chunks to bound peak memory.
    pub fn embed_all(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = x.batch();
        let d = self.embedding_dim();
        let mut out = Vec::with_capacity(n * d);
        let idx: Vec<usize> = (0..n).collect();
        for c in idx.chunks(chunk.max(1)) {
            out.extend_from_slice(self.embed(&x.select_rows(c))?.data());
        }
        Tensor::new(vec![n, d], out)
    }

    pub fn values(&self) -> NamedTensors {
        NamedTensors::from_pairs(self.params().into_iter().map(|p| (p.name.clone(), p.value.clone())))
    }

    pub fn grads(&self) -> NamedTensors {
        NamedTensors::from_pairs(self.params().into_iter().map(|p| (p.name.clone(), p.grad.clone())))
    }

    /// Overwrites every parameter value from `values`, which must carry
    /// exactly this backbone's names and shapes in declaration order.
    pub fn load_values(&mut self, values: &NamedTensors) -> Result<()> {
        values.check_schema(&self.values().schema())?;
        for (p, (_, v)) in self.params_mut().into_iter().zip(values.iter()) {
            p.value.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }
}
