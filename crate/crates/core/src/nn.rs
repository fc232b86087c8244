//! Transformer building blocks over `hiskel_autodiff` tensors.

use hiskel_autodiff::{Mask, Parameter, Real, Tensor};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Anything that owns named parameters.
pub trait Module<F: Real> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>));

    fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p));
        out
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    fn zero_grad(&self) {
        self.visit(&mut |p| p.zero_grad());
    }
}

/// Parameter factory: weights ~ N(0, std²), biases and tables start at zero.
pub struct Init<'r> {
    rng: &'r mut ChaCha8Rng,
    std: f64,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng, std: f64) -> Self {
        Init { rng, std }
    }

    pub fn normal<F: Real>(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Parameter<F>> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, self.std).expect("finite init std");
        let data = (0..n).map(|_| F::lit(dist.sample(self.rng))).collect();
        Ok(Parameter::new(name, shape, data)?)
    }

    pub fn zeros<F: Real>(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Parameter<F>> {
        Ok(Parameter::zeros(name, shape)?)
    }

    pub fn ones<F: Real>(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Parameter<F>> {
        let n: usize = shape.iter().product();
        Ok(Parameter::new(name, shape, vec![F::one(); n])?)
    }
}

/// `y = x W + b` over the last axis, `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Real> {
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
}

impl<F: Real> Linear<F> {
    pub fn new(name: &str, d_in: usize, d_out: usize, init: &mut Init<'_>) -> Result<Self> {
        Ok(Linear {
            weight: init.normal(format!("{name}.weight"), &[d_in, d_out])?,
            bias: init.zeros(format!("{name}.bias"), &[d_out])?,
        })
    }

    pub fn d_out(&self) -> usize {
        self.bias.numel()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.matmul(self.weight.tensor())?.add_broadcast(self.bias.tensor())?)
    }
}

impl<F: Real> Module<F> for Linear<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm<F: Real> {
    pub gain: Parameter<F>,
    pub bias: Parameter<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(name: &str, dim: usize, init: &mut Init<'_>) -> Result<Self> {
        Ok(LayerNorm { gain: init.ones(format!("{name}.gain"), &[dim])?, bias: init.zeros(format!("{name}.bias"), &[dim])? })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.layer_norm(self.gain.tensor(), self.bias.tensor(), F::lit(LN_EPS))?)
    }
}

impl<F: Real> Module<F> for LayerNorm<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        f(&self.gain);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

/// Multi-head scaled dot-product self-attention. Each head has its own
/// `d_k`-wide query, key and value projections (stored fused across heads);
/// concatenated head outputs are mapped back to the model width.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<F: Real> {
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
    heads: usize,
    d_k: usize,
}

impl<F: Real> MultiHeadAttention<F> {
    pub fn new(name: &str, dim: usize, heads: usize, d_k: usize, init: &mut Init<'_>) -> Result<Self> {
        let inner = heads * d_k;
        Ok(MultiHeadAttention {
            wq: Linear::new(&format!("{name}.wq"), dim, inner, init)?,
            wk: Linear::new(&format!("{name}.wk"), dim, inner, init)?,
            wv: Linear::new(&format!("{name}.wv"), dim, inner, init)?,
            wo: Linear::new(&format!("{name}.wo"), inner, dim, init)?,
            heads,
            d_k,
        })
    }

    /// `[B, L, dim] -> [B*H, L, d_k]`
    fn split_heads(&self, x: &Tensor<F>, b: usize, l: usize) -> Result<Tensor<F>> {
        Ok(x.reshape(&[b, l, self.heads, self.d_k])?.permute(&[0, 2, 1, 3])?.reshape(&[b * self.heads, l, self.d_k])?)
    }

    /// Returns the output `[B, L, dim]` and the attention weights
    /// `[B*H, L, L]`, head-major within each batch item.
    pub fn forward(&self, x: &Tensor<F>, mask: Option<&Mask>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (b, l) = (x.shape()[0], x.shape()[1]);
        let q = self.split_heads(&self.wq.forward(x)?, b, l)?;
        let k = self.split_heads(&self.wk.forward(x)?, b, l)?;
        let v = self.split_heads(&self.wv.forward(x)?, b, l)?;
        let scale = F::one() / F::lit(self.d_k as f64).sqrt();
        let attn = q.matmul_nt(&k)?.scale(scale).masked_softmax(mask)?;
        let ctx = attn
            .matmul(&v)?
            .reshape(&[b, self.heads, l, self.d_k])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, l, self.heads * self.d_k])?;
        Ok((self.wo.forward(&ctx)?, attn))
    }
}

impl<F: Real> Module<F> for MultiHeadAttention<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward<F: Real> {
    pub up: Linear<F>,
    pub down: Linear<F>,
}

impl<F: Real> FeedForward<F> {
    pub fn new(name: &str, dim: usize, expansion: usize, init: &mut Init<'_>) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(&format!("{name}.up"), dim, dim * expansion, init)?,
            down: Linear::new(&format!("{name}.down"), dim * expansion, dim, init)?,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.down.forward(&self.up.forward(x)?.gelu())
    }
}

impl<F: Real> Module<F> for FeedForward<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.up.visit(f);
        self.down.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.up.visit_mut(f);
        self.down.visit_mut(f);
    }
}

/// Pre-norm residual block: `h = x + attn(ln(x))`, `y = h + ffn(ln(h))`.
#[derive(Debug, Clone)]
pub struct EncoderBlock<F: Real> {
    pub ln_attn: LayerNorm<F>,
    pub attn: MultiHeadAttention<F>,
    pub ln_ffn: LayerNorm<F>,
    pub ffn: FeedForward<F>,
}

impl<F: Real> EncoderBlock<F> {
    pub fn new(name: &str, dim: usize, heads: usize, d_k: usize, expansion: usize, init: &mut Init<'_>) -> Result<Self> {
        Ok(EncoderBlock {
            ln_attn: LayerNorm::new(&format!("{name}.ln_attn"), dim, init)?,
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, d_k, init)?,
            ln_ffn: LayerNorm::new(&format!("{name}.ln_ffn"), dim, init)?,
            ffn: FeedForward::new(&format!("{name}.ffn"), dim, expansion, init)?,
        })
    }

    pub fn forward(&self, x: &Tensor<F>, mask: Option<&Mask>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (a, weights) = self.attn.forward(&self.ln_attn.forward(x)?, mask)?;
        let h = x.add(&a)?;
        let y = h.add(&self.ffn.forward(&self.ln_ffn.forward(&h)?)?)?;
        Ok((y, weights))
    }
}

impl<F: Real> Module<F> for EncoderBlock<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.ln_attn.visit(f);
        self.attn.visit(f);
        self.ln_ffn.visit(f);
        self.ffn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.ln_attn.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln_ffn.visit_mut(f);
        self.ffn.visit_mut(f);
    }
}

/// Stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerStack<F: Real> {
    pub blocks: Vec<EncoderBlock<F>>,
    pub ln_out: LayerNorm<F>,
}

impl<F: Real> TransformerStack<F> {
    pub fn new(
        name: &str,
        layers: usize,
        dim: usize,
        heads: usize,
        d_k: usize,
        expansion: usize,
        init: &mut Init<'_>,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| EncoderBlock::new(&format!("{name}.layer{i}"), dim, heads, d_k, expansion, init))
            .collect::<Result<_>>()?;
        Ok(TransformerStack { blocks, ln_out: LayerNorm::new(&format!("{name}.ln_out"), dim, init)? })
    }

    /// Output plus one attention tensor per layer.
    pub fn forward(&self, x: &Tensor<F>, mask: Option<&Mask>) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
        let mut h = x.clone();
        let mut weights = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, w) = block.forward(&h, mask)?;
            h = next;
            weights.push(w);
        }
        Ok((self.ln_out.forward(&h)?, weights))
    }
}

impl<F: Real> Module<F> for TransformerStack<F> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<F>)) {
        self.blocks.iter().for_each(|b| b.visit(f));
        self.ln_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<F>)) {
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.ln_out.visit_mut(f);
    }
}
