use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl<F: Real> Tensor<F> {
    fn same_shape(&self, other: &Tensor<F>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op("add", self.shape().to_vec(), data, vec![self.clone(), other.clone()], |c| {
            vec![Some(c.grad.to_vec()), Some(c.grad.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op("sub", self.shape().to_vec(), data, vec![self.clone(), other.clone()], |c| {
            vec![Some(c.grad.to_vec()), Some(c.grad.iter().map(|&g| -g).collect())]
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        self.same_shape(other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op("mul", self.shape().to_vec(), data, vec![self.clone(), other.clone()], |c| {
            let (a, b) = (c.parents[0].data(), c.parents[1].data());
            let ga = c.parents[0].requires_grad().then(|| c.grad.iter().zip(b).map(|(&g, &y)| g * y).collect());
            let gb = c.parents[1].requires_grad().then(|| c.grad.iter().zip(a).map(|(&g, &x)| g * x).collect());
            vec![ga, gb]
        }))
    }

    /// Adds `other` repeated over the leading axes; its shape must be a suffix
    /// of this tensor's shape (bias vectors, positional tables).
    pub fn add_broadcast(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (s, o) = (self.shape(), other.shape());
        if o.len() > s.len() || s[s.len() - o.len()..] != *o {
            return Err(TensorError::shape("add_broadcast", s, o));
        }
        let nb = other.numel();
        let b = other.data();
        let data = self.data().iter().enumerate().map(|(i, &a)| a + b[i % nb]).collect();
        Ok(Tensor::from_op("add_broadcast", s.to_vec(), data, vec![self.clone(), other.clone()], move |c| {
            let gb = c.parents[1].requires_grad().then(|| {
                let mut acc = vec![F::zero(); nb];
                for chunk in c.grad.chunks(nb) {
                    acc.iter_mut().zip(chunk).for_each(|(a, &g)| *a += g);
                }
                acc
            });
            vec![Some(c.grad.to_vec()), gb]
        }))
    }

    pub fn scale(&self, k: F) -> Tensor<F> {
        let data = self.data().iter().map(|&a| a * k).collect();
        Tensor::from_op("scale", self.shape().to_vec(), data, vec![self.clone()], move |c| {
            vec![Some(c.grad.iter().map(|&g| g * k).collect())]
        })
    }

    pub fn neg(&self) -> Tensor<F> {
        self.scale(-F::one())
    }

    pub fn add_scalar(&self, k: F) -> Tensor<F> {
        let data = self.data().iter().map(|&a| a + k).collect();
        Tensor::from_op("add_scalar", self.shape().to_vec(), data, vec![self.clone()], |c| {
            vec![Some(c.grad.to_vec())]
        })
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(F) -> F,
        df: impl Fn(F, F) -> F + Send + Sync + 'static,
    ) -> Tensor<F> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(op, self.shape().to_vec(), data, vec![self.clone()], move |c| {
            let x = c.parents[0].data();
            let g = c.grad.iter().zip(x).zip(c.out).map(|((&g, &x), &y)| g * df(x, y)).collect();
            vec![Some(g)]
        })
    }

    /// `x Φ(x)` with the exact normal CDF.
    pub fn gelu(&self) -> Tensor<F> {
        let half = F::lit(0.5);
        let s2 = F::lit(SQRT_2);
        let k = F::lit(INV_SQRT_2PI);
        self.unary(
            "gelu",
            move |x| x * half * (F::one() + (x / s2).erf()),
            move |x, _| half * (F::one() + (x / s2).erf()) + x * k * (-half * x * x).exp(),
        )
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        self.unary(
            "sigmoid",
            |x| {
                if x >= F::zero() {
                    F::one() / (F::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (F::one() + e)
                }
            },
            |_, y| y * (F::one() - y),
        )
    }

    pub fn tanh(&self) -> Tensor<F> {
        self.unary("tanh", |x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn exp(&self) -> Tensor<F> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<F> {
        self.unary("ln", |x| x.ln(), |x, _| F::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<F> {
        self.unary("sqrt", |x| x.sqrt(), |_, y| F::lit(0.5) / y)
    }

    pub fn square(&self) -> Tensor<F> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    /// Subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor<F> {
        self.unary("abs", |x| x.abs(), |x, _| {
            if x > F::zero() {
                F::one()
            } else if x < F::zero() {
                -F::one()
            } else {
                F::zero()
            }
        })
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: F, hi: F) -> Tensor<F> {
        self.unary("clamp", move |x| x.max(lo).min(hi), move |x, _| {
            if x < lo || x > hi {
                F::zero()
            } else {
                F::one()
            }
        })
    }
}
