use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// A named trainable tensor.
///
/// Updates swap in a fresh leaf, so graphs built from the previous value
/// keep seeing the values they were built with.
#[derive(Debug, Clone)]
pub struct Parameter<F: Real> {
    name: String,
    tensor: Tensor<F>,
}

impl<F: Real> Parameter<F> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<F>) -> Result<Self> {
        Ok(Parameter { name: name.into(), tensor: Tensor::leaf(shape, data)? })
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(name, shape, vec![F::zero(); n])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.tensor
    }

    pub fn value(&self) -> &[F] {
        self.tensor.data()
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.tensor.grad()
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad();
    }

    /// Replaces the value; the accumulated gradient is carried over.
    pub fn set_value(&mut self, data: Vec<F>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::invalid(
                "set_value",
                format!("{}: {} values for shape {:?}", self.name, data.len(), self.shape()),
            ));
        }
        let grad = self.tensor.grad();
        let next = Tensor::leaf(self.shape(), data)?;
        if let Some(g) = grad {
            next.accumulate_external(&g);
        }
        self.tensor = next;
        Ok(())
    }
}
