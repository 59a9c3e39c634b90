use super::backbone::Backbone;
use super::loss::{cross_entropy, LossRecord};
use super::projector::ArcFaceProjector;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered `(name, tensor)` list. Order is declaration order and is part of
/// every encoding that carries these tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NamedTensors(Vec<(String, Tensor)>);

/// Names and shapes only.
pub type Schema = Vec<(String, Vec<usize>)>;

impl NamedTensors {
    pub fn new() -> Self {
        NamedTensors(Vec::new())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        NamedTensors(pairs.into_iter().collect())
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.0.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn schema(&self) -> Schema {
        self.0.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect()
    }

    pub fn element_count(&self) -> usize {
        self.0.iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks names and shapes against `expected`, listing every difference.
    pub fn check_schema(&self, expected: &Schema) -> Result<()> {
        let diffs = schema_diff(expected, &self.schema());
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(format!("tensor set differs: {}", diffs.join("; "))))
        }
    }

    /// Sum over tensors of `‖a − b‖²`.
    pub fn sq_distance(&self, other: &NamedTensors) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Schema(format!("{} vs {} tensors", self.len(), other.len())));
        }
        let mut acc = 0.0;
        for ((_, a), (_, b)) in self.0.iter().zip(&other.0) {
            a.check_same_shape("sq_distance", b)?;
            acc += a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        Ok(acc)
    }
}

/// Human-readable list of differences between two schemas.
pub fn schema_diff(expected: &Schema, got: &Schema) -> Vec<String> {
    let mut out = Vec::new();
    for (name, shape) in expected {
        match got.iter().find(|(n, _)| n == name) {
            None => out.push(format!("missing `{name}` {shape:?}")),
            Some((_, s)) if s != shape => out.push(format!("`{name}` expected {shape:?}, found {s:?}")),
            _ => {}
        }
    }
    for (name, shape) in got {
        if !expected.iter().any(|(n, _)| n == name) {
            out.push(format!("unexpected `{name}` {shape:?}"));
        }
    }
    if out.is_empty() && expected.iter().map(|(n, _)| n).ne(got.iter().map(|(n, _)| n)) {
        out.push("tensor order differs".into());
    }
    out
}

/// Backbone tensors (θ1), batch-norm statistics included.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicParams(pub NamedTensors);

/// Projector tensors (θ2). Never serialized into a wire frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateParams(pub NamedTensors);

pub fn partition_params(backbone: &Backbone, proj: &ArcFaceProjector) -> (PublicParams, PrivateParams) {
    let mut private = NamedTensors::new();
    private.push(proj.weight.name.clone(), proj.weight.value.clone());
    (PublicParams(backbone.values()), PrivateParams(private))
}

/// Gradients of one loss evaluation, split by partition.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub public: NamedTensors,
    pub private: NamedTensors,
    pub input: Tensor,
    pub loss: LossRecord,
}

impl ModelGradients {
    /// Both partitions in one list, public first.
    pub fn full(&self) -> NamedTensors {
        NamedTensors::from_pairs(self.public.iter().chain(self.private.iter()).map(|(n, t)| (n.to_string(), t.clone())))
    }
}

/// Forward `X → α → logits → loss`, then backward through projector and
/// backbone. Parameter grad buffers are cleared first, so on return they hold
/// exactly this batch's gradients (ready for an optimizer step).
pub fn model_backward(
    backbone: &mut Backbone,
    proj: &mut ArcFaceProjector,
    x: &Tensor,
    y: &[usize],
) -> Result<ModelGradients> {
    backbone.zero_grad();
    proj.weight.zero_grad();
    let alpha = backbone.forward(x)?;
    let logits = proj.forward(&alpha, Some(y))?;
    let loss = cross_entropy(&logits, y)?;
    let g_alpha = proj.backward(&loss.logit_grad())?;
    let g_x = backbone.backward(&g_alpha)?;
    let mut private = NamedTensors::new();
    private.push(proj.weight.name.clone(), proj.weight.grad.clone());
    Ok(ModelGradients {
        public: backbone.grads(),
        private,
        input: g_x,
        loss,
    })
}
