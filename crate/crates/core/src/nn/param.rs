use crate::tensor::Tensor;

/// A named tensor with its gradient buffer and update flags.
///
/// `frozen_stat` marks batch-norm running statistics: they are never touched
/// by an optimizer, and only a forward pass in [`super::BnMode::TrainUpdate`]
/// writes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    pub frozen_stat: bool,
}

impl Parameter {
    pub fn trainable(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable: true,
            frozen_stat: false,
        }
    }

    pub fn statistic(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable: false,
            frozen_stat: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Whether an optimizer step may write this parameter.
    pub fn is_updatable(&self) -> bool {
        self.trainable && !self.frozen_stat
    }
}
