use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Additive logit for hidden positions before normalization.
pub const MASK_LOGIT: f64 = -1e30;

/// Boolean visibility pattern over the trailing axes of a logit tensor,
/// repeated across its leading axes. `true` keeps a position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(shape: &[usize], keep: Vec<bool>) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != keep.len() {
            return Err(TensorError::invalid("mask", format!("shape {shape:?} for {} flags", keep.len())));
        }
        Ok(Mask { shape: shape.to_vec(), keep })
    }

    /// `rows x cols` mask from a predicate on (row, col).
    pub fn from_fn(rows: usize, cols: usize, keep: impl Fn(usize, usize) -> bool) -> Self {
        let flags = (0..rows * cols).map(|i| keep(i / cols, i % cols)).collect();
        Mask { shape: vec![rows, cols], keep: flags }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keeps(&self, flat: usize) -> bool {
        self.keep[flat % self.keep.len()]
    }
}

impl<F: Real> Tensor<F> {
    /// Softmax over the last axis. Masked logits are pushed to a huge negative
    /// value and their outputs forced to exactly zero.
    pub fn masked_softmax(&self, mask: Option<&Mask>) -> Result<Tensor<F>> {
        let Some(&n) = self.shape().last() else {
            return Err(TensorError::invalid("masked_softmax", "rank-0 tensor"));
        };
        if let Some(m) = mask {
            let s = self.shape();
            let ms = m.shape();
            if ms.len() > s.len() || s[s.len() - ms.len()..] != *ms {
                return Err(TensorError::shape("masked_softmax", s, ms));
            }
        }
        let keep = |flat: usize| mask.is_none_or(|m| m.keeps(flat));
        let big_neg = F::lit(MASK_LOGIT);
        let mut out = vec![F::zero(); self.numel()];
        for (r, (row, dst)) in self.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let base = r * n;
            if !(0..n).any(|j| keep(base + j)) {
                return Err(TensorError::DegenerateRow { op: "masked_softmax", row: r });
            }
            let shifted = |j: usize| if keep(base + j) { row[j] } else { row[j] + big_neg };
            let mx = (0..n).map(shifted).fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for (j, d) in dst.iter_mut().enumerate() {
                *d = (shifted(j) - mx).exp();
                total += *d;
            }
            for (j, d) in dst.iter_mut().enumerate() {
                *d = if keep(base + j) { *d / total } else { F::zero() };
            }
        }
        Ok(Tensor::from_op("masked_softmax", self.shape().to_vec(), out, vec![self.clone()], move |c| {
            let mut g = vec![F::zero(); c.out.len()];
            for ((y, gy), dst) in c.out.chunks(n).zip(c.grad.chunks(n)).zip(g.chunks_mut(n)) {
                let dot: F = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                for ((d, &yy), &gg) in dst.iter_mut().zip(y).zip(gy) {
                    *d = yy * (gg - dot);
                }
            }
            vec![Some(g)]
        }))
    }

    pub fn softmax(&self) -> Result<Tensor<F>> {
        self.masked_softmax(None)
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor<F>> {
        let Some(&n) = self.shape().last() else {
            return Err(TensorError::invalid("log_softmax", "rank-0 tensor"));
        };
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(n) {
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&x| (x - mx).exp()).sum::<F>().ln() + mx;
            out.extend(row.iter().map(|&x| x - lse));
        }
        Ok(Tensor::from_op("log_softmax", self.shape().to_vec(), out, vec![self.clone()], move |c| {
            let mut g = Vec::with_capacity(c.out.len());
            for (y, gy) in c.out.chunks(n).zip(c.grad.chunks(n)) {
                let total: F = gy.iter().copied().sum();
                g.extend(y.iter().zip(gy).map(|(&yy, &gg)| gg - yy.exp() * total));
            }
            vec![Some(g)]
        }))
    }

    /// Standardizes each last-axis row, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor<F>, bias: &Tensor<F>, eps: F) -> Result<Tensor<F>> {
        let Some(&d) = self.shape().last() else {
            return Err(TensorError::invalid("layer_norm", "rank-0 tensor"));
        };
        if gain.shape() != [d] {
            return Err(TensorError::shape("layer_norm", self.shape(), gain.shape()));
        }
        if bias.shape() != [d] {
            return Err(TensorError::shape("layer_norm", self.shape(), bias.shape()));
        }
        let df = F::lit(d as f64);
        let rows = self.numel() / d;
        let mut xhat = Vec::with_capacity(self.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for row in self.data().chunks(d) {
            let mu = row.iter().copied().sum::<F>() / df;
            let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<F>() / df;
            let denom = (var + eps).sqrt();
            // A constant row with eps = 0 standardizes to zeros.
            let inv = if denom > F::zero() { F::one() / denom } else { F::zero() };
            inv_std.push(inv);
            xhat.extend(row.iter().map(|&x| (x - mu) * inv));
        }
        let (gv, bv) = (gain.data(), bias.data());
        let out = xhat.iter().enumerate().map(|(i, &h)| h * gv[i % d] + bv[i % d]).collect();
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |c| {
                let gv = c.parents[1].data();
                let mut dx = vec![F::zero(); xhat.len()];
                let mut dgain = vec![F::zero(); d];
                let mut dbias = vec![F::zero(); d];
                for r in 0..rows {
                    let h = &xhat[r * d..(r + 1) * d];
                    let g = &c.grad[r * d..(r + 1) * d];
                    let mut sum_dh = F::zero();
                    let mut sum_dh_h = F::zero();
                    for j in 0..d {
                        let dh = g[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * h[j];
                        dgain[j] += g[j] * h[j];
                        dbias[j] += g[j];
                    }
                    let k = inv_std[r] / df;
                    for j in 0..d {
                        dx[r * d + j] = k * (df * g[j] * gv[j] - sum_dh - h[j] * sum_dh_h);
                    }
                }
                vec![Some(dx), Some(dgain), Some(dbias)]
            },
        ))
    }

    /// `out[i] = self[i, indices[i]]` for a tensor viewed as `[rows, last]`.
    pub fn pick_last(&self, indices: &[usize]) -> Result<Tensor<F>> {
        let Some(&n) = self.shape().last() else {
            return Err(TensorError::invalid("pick_last", "rank-0 tensor"));
        };
        let rows = self.numel() / n;
        if indices.len() != rows {
            return Err(TensorError::invalid("pick_last", format!("{} indices for {rows} rows", indices.len())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::invalid("pick_last", format!("index {bad} out of range {n}")));
        }
        let data = indices.iter().enumerate().map(|(r, &i)| self.data()[r * n + i]).collect();
        let idx = indices.to_vec();
        let total = self.numel();
        let shape = self.shape()[..self.rank() - 1].to_vec();
        Ok(Tensor::from_op("pick_last", shape, data, vec![self.clone()], move |c| {
            let mut g = vec![F::zero(); total];
            for (r, &i) in idx.iter().enumerate() {
                g[r * n + i] = c.grad[r];
            }
            vec![Some(g)]
        }))
    }

    /// Scales each last-axis row to unit Euclidean length; rows shorter than
    /// `eps` are divided by `eps` instead.
    pub fn l2_normalize_last(&self, eps: F) -> Result<Tensor<F>> {
        let Some(&d) = self.shape().last() else {
            return Err(TensorError::invalid("l2_normalize_last", "rank-0 tensor"));
        };
        let norms: Vec<F> = self
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|&x| x * x).sum::<F>().sqrt().max(eps))
            .collect();
        let data = self.data().iter().enumerate().map(|(i, &x)| x / norms[i / d]).collect();
        Ok(Tensor::from_op("l2_normalize_last", self.shape().to_vec(), data, vec![self.clone()], move |c| {
            let x = c.parents[0].data();
            let mut g = Vec::with_capacity(c.out.len());
            for (r, (y, gy)) in c.out.chunks(d).zip(c.grad.chunks(d)).enumerate() {
                let raw: F = x[r * d..(r + 1) * d].iter().map(|&v| v * v).sum::<F>().sqrt();
                let nrm = norms[r];
                if raw > eps {
                    let dot: F = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    g.extend(y.iter().zip(gy).map(|(&yy, &gg)| (gg - yy * dot) / nrm));
                } else {
                    g.extend(gy.iter().map(|&gg| gg / nrm));
                }
            }
            vec![Some(g)]
        }))
    }
}
