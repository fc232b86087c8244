use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatView, Real};
use crate::tensor::Tensor;

/// Geometry of `[batch.., m, k] x [batch?.., k, n]`.
#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    /// Right operand is a single matrix shared by every batch entry.
    shared_rhs: bool,
    /// Right operand is stored as `[n, k]`.
    trans_rhs: bool,
}

impl Geometry {
    fn rhs_view(&self) -> MatView {
        if self.trans_rhs {
            MatView::row_major(self.n, self.k).t()
        } else {
            MatView::row_major(self.k, self.n)
        }
    }
}

fn geometry(op: &'static str, a: &[usize], b: &[usize], trans_rhs: bool) -> Result<(Geometry, Vec<usize>)> {
    let err = || TensorError::shape(op, a, b);
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (br, bc) = (b[b.len() - 2], b[b.len() - 1]);
    let (bk, n) = if trans_rhs { (bc, br) } else { (br, bc) };
    if bk != k {
        return Err(err());
    }
    let lead = &a[..a.len() - 2];
    let shared_rhs = b.len() == 2;
    if !shared_rhs && b[..b.len() - 2] != *lead {
        return Err(err());
    }
    let mut out = lead.to_vec();
    out.extend([m, n]);
    let batch = lead.iter().product();
    Ok((Geometry { batch, m, k, n, shared_rhs, trans_rhs }, out))
}

fn forward<F: Real>(g: Geometry, a: &[F], b: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); g.batch * g.m * g.n];
    if g.shared_rhs {
        // Fold the batch into the row dimension: one large product.
        let rows = g.batch * g.m;
        gemm(
            F::one(),
            a,
            MatView::row_major(rows, g.k),
            b,
            g.rhs_view(),
            F::zero(),
            &mut out,
            MatView::row_major(rows, g.n),
        );
    } else {
        let (sa, sb, so) = (g.m * g.k, g.k * g.n, g.m * g.n);
        for i in 0..g.batch {
            gemm(
                F::one(),
                &a[i * sa..(i + 1) * sa],
                MatView::row_major(g.m, g.k),
                &b[i * sb..(i + 1) * sb],
                g.rhs_view(),
                F::zero(),
                &mut out[i * so..(i + 1) * so],
                MatView::row_major(g.m, g.n),
            );
        }
    }
    out
}

/// dA = dC Bᵀ
fn grad_lhs<F: Real>(g: Geometry, dc: &[F], b: &[F]) -> Vec<F> {
    let mut da = vec![F::zero(); g.batch * g.m * g.k];
    let bt = g.rhs_view().t();
    if g.shared_rhs {
        let rows = g.batch * g.m;
        gemm(F::one(), dc, MatView::row_major(rows, g.n), b, bt, F::zero(), &mut da, MatView::row_major(rows, g.k));
    } else {
        let (sa, sb, so) = (g.m * g.k, g.k * g.n, g.m * g.n);
        for i in 0..g.batch {
            gemm(
                F::one(),
                &dc[i * so..(i + 1) * so],
                MatView::row_major(g.m, g.n),
                &b[i * sb..(i + 1) * sb],
                bt,
                F::zero(),
                &mut da[i * sa..(i + 1) * sa],
                MatView::row_major(g.m, g.k),
            );
        }
    }
    da
}

/// dB = Aᵀ dC, laid out like B.
fn grad_rhs<F: Real>(g: Geometry, dc: &[F], a: &[F]) -> Vec<F> {
    let per = g.k * g.n;
    let mut db = vec![F::zero(); if g.shared_rhs { per } else { g.batch * per }];
    // Output view in B's storage order, addressed as a k x n matrix.
    let dbv = g.rhs_view();
    if g.shared_rhs {
        let rows = g.batch * g.m;
        gemm(F::one(), a, MatView::row_major(rows, g.k).t(), dc, MatView::row_major(rows, g.n), F::zero(), &mut db, dbv);
    } else {
        let (sa, so) = (g.m * g.k, g.m * g.n);
        for i in 0..g.batch {
            gemm(
                F::one(),
                &a[i * sa..(i + 1) * sa],
                MatView::row_major(g.m, g.k).t(),
                &dc[i * so..(i + 1) * so],
                MatView::row_major(g.m, g.n),
                F::zero(),
                &mut db[i * per..(i + 1) * per],
                dbv,
            );
        }
    }
    db
}

impl<F: Real> Tensor<F> {
    fn matmul_impl(&self, other: &Tensor<F>, trans_rhs: bool, op: &'static str) -> Result<Tensor<F>> {
        let (g, shape) = geometry(op, self.shape(), other.shape(), trans_rhs)?;
        let data = forward(g, self.data(), other.data());
        Ok(Tensor::from_op(op, shape, data, vec![self.clone(), other.clone()], move |c| {
            let (a, b) = (&c.parents[0], &c.parents[1]);
            let da = a.requires_grad().then(|| grad_lhs(g, c.grad, b.data()));
            let db = b.requires_grad().then(|| grad_rhs(g, c.grad, a.data()));
            vec![da, db]
        }))
    }

    /// Matrix product over the last two axes. The right operand is either a
    /// single `[k, n]` matrix applied to every leading index, or carries the
    /// same leading axes as `self`.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.matmul_impl(other, false, "matmul")
    }

    /// `self · otherᵀ` over the last two axes (`other` is `[.., n, k]`).
    pub fn matmul_nt(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.matmul_impl(other, true, "matmul_nt")
    }
}
