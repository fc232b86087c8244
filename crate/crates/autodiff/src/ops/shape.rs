use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Moves data so that output axis `i` is input axis `axes[i]`.
fn permute_data<F: Real>(data: &[F], shape: &[usize], axes: &[usize]) -> Vec<F> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    let mut out = Vec::with_capacity(data.len());
    if rank == 0 {
        return data.to_vec();
    }
    // Innermost axis copied in a tight loop; odometer over the rest.
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        }
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

impl<F: Real> Tensor<F> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op("reshape", shape.to_vec(), self.to_vec(), vec![self.clone()], |c| {
            vec![Some(c.grad.to_vec())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::invalid("permute", format!("bad axes {axes:?} for rank {rank}")));
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let data = permute_data(self.data(), &shape, axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op("permute", out_shape, data, vec![self.clone()], move |c| {
            vec![Some(permute_data(c.grad, &grad_shape, &inverse))]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<F>> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::invalid("transpose_last", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Rows of the first axis, in the given order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor<F>> {
        let Some(&n) = self.shape().first() else {
            return Err(TensorError::invalid("select_rows", "rank-0 tensor"));
        };
        if indices.is_empty() {
            return Err(TensorError::invalid("select_rows", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::invalid("select_rows", format!("index {bad} out of range {n}")));
        }
        let row = self.numel() / n;
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        let total = self.numel();
        Ok(Tensor::from_op("select_rows", shape, data, vec![self.clone()], move |c| {
            let mut g = vec![F::zero(); total];
            for (k, &i) in idx.iter().enumerate() {
                g[i * row..(i + 1) * row]
                    .iter_mut()
                    .zip(&c.grad[k * row..(k + 1) * row])
                    .for_each(|(a, &b)| *a += b);
            }
            vec![Some(g)]
        }))
    }

    /// Contiguous range `[start, start + len)` of the first axis.
    pub fn narrow_rows(&self, start: usize, len: usize) -> Result<Tensor<F>> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select_rows(&idx)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn cat(tensors: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let first = tensors.first().ok_or_else(|| TensorError::invalid("cat", "no inputs"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::invalid("cat", format!("axis {axis} for rank {rank}")));
        }
        for t in tensors {
            let ok = t.rank() == rank
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::shape("cat", first.shape(), t.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (t, &w) in tensors.iter().zip(&widths) {
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        Ok(Tensor::from_op("cat", shape, data, tensors.to_vec(), move |c| {
            let mut grads: Vec<Vec<F>> = widths.iter().map(|&w| Vec::with_capacity(w * outer)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (g, &w) in grads.iter_mut().zip(&widths) {
                    g.extend_from_slice(&c.grad[off..off + w]);
                    off += w;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(tensors: &[Tensor<F>]) -> Result<Tensor<F>> {
        let first = tensors.first().ok_or_else(|| TensorError::invalid("stack", "no inputs"))?;
        let mut shape = vec![1];
        shape.extend_from_slice(first.shape());
        let rows = tensors.iter().map(|t| t.reshape(&shape)).collect::<Result<Vec<_>>>()?;
        Tensor::cat(&rows, 0)
    }
}
