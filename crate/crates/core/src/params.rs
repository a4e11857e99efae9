use crate::tensor::{Element, Tensor};

/// Role of a learnable tensor. Only [`ParamKind::Weight`] tensors get
/// layer-wise trust-ratio scaling in LAMB.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Batch-norm gamma/beta.
    Norm,
    /// Scalar attention weights.
    Gate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            kind,
            value,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}
