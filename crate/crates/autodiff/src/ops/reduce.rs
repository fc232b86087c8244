use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

impl<F: Real> Tensor<F> {
    /// Sum of every element, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<F> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum", Vec::new(), vec![s], vec![self.clone()], move |c| vec![Some(vec![c.grad[0]; n])])
    }

    pub fn mean(&self) -> Tensor<F> {
        self.sum().scale(F::one() / F::lit(self.numel() as f64))
    }

    /// Sum over the last axis.
    pub fn sum_last(&self) -> Result<Tensor<F>> {
        let Some((&d, lead)) = self.shape().split_last() else {
            return Err(TensorError::invalid("sum_last", "rank-0 tensor"));
        };
        let data = self.data().chunks(d).map(|r| r.iter().copied().sum()).collect();
        Ok(Tensor::from_op("sum_last", lead.to_vec(), data, vec![self.clone()], move |c| {
            vec![Some(c.grad.iter().flat_map(|&g| std::iter::repeat_n(g, d)).collect())]
        }))
    }

    pub fn mean_last(&self) -> Result<Tensor<F>> {
        let d = *self.shape().last().unwrap_or(&1);
        Ok(self.sum_last()?.scale(F::one() / F::lit(d as f64)))
    }
}
