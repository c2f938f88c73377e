use rand::Rng;

use crate::autodiff::{ops, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, p: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), ParamGroup::Linear, Tensor::ones(&[p])),
            bias: store.add(format!("{prefix}.bias"), ParamGroup::Linear, Tensor::zeros(&[p])),
        }
    }

    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        ops::layer_norm(x, bound.var(self.gain), bound.var(self.bias), LAYER_NORM_EPS)
    }
}

/// Affine map `x . W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: store.add(format!("{prefix}.weight"), ParamGroup::Linear, Tensor::randn(&[fan_in, fan_out], std, rng)),
            bias: store.add(format!("{prefix}.bias"), ParamGroup::Linear, Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        ops::add(ops::matmul(x, bound.var(self.weight))?, bound.var(self.bias))
    }
}

/// Causal multi-head self-attention with query, key, value and output
/// projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    heads: usize,
    head_dim: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, p: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || p % heads != 0 {
            return Err(Error::Config(format!("p = {p} is not divisible by heads = {heads}")));
        }
        Ok(Self {
            heads,
            head_dim: p / heads,
            query: Linear::new(store, &format!("{prefix}.q"), p, p, 0.02, rng),
            key: Linear::new(store, &format!("{prefix}.k"), p, p, 0.02, rng),
            value: Linear::new(store, &format!("{prefix}.v"), p, p, 0.02, rng),
            output: Linear::new(store, &format!("{prefix}.o"), p, p, 0.02, rng),
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let q = self.query.forward(bound, x)?;
        let k = self.key.forward(bound, x)?;
        let v = self.value.forward(bound, x)?;
        let dh = self.head_dim;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ops::narrow_last(q, h * dh, dh)?;
            let kh = ops::narrow_last(k, h * dh, dh)?;
            let vh = ops::narrow_last(v, h * dh, dh)?;
            let scores = ops::scale(ops::matmul(qh, ops::transpose_last2(kh)?)?, scale);
            let weights = ops::causal_softmax(scores)?;
            outs.push(ops::matmul(weights, vh)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { ops::concat_last(&outs)? };
        self.output.forward(bound, merged)
    }
}

/// Two-layer GELU feed-forward network with hidden width `alpha * p`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub up: Linear,
    pub down: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, p: usize, alpha: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{prefix}.up"), p, alpha * p, 0.02, rng),
            down: Linear::new(store, &format!("{prefix}.down"), alpha * p, p, 0.02, rng),
        }
    }

    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = ops::gelu(self.up.forward(bound, x)?);
        self.down.forward(bound, h)
    }
}
