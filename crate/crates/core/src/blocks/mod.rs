//! Transformer-block components: the continued-fraction replacements for
//! attention (CAttnU, CAttnM) and the feed-forward network (Cffn), the
//! standard baselines they are compared against, and the pre-norm residual
//! block that assembles them.
//!
//! All components take `[..., l, p]` activations (any number of leading
//! batch axes) and are causal along the sequence axis.

mod baseline;
mod cattnm;
mod cattnu;
mod cffn;
mod counts;

pub use baseline::{LayerNorm, Linear, Mlp, MultiHeadAttention, LAYER_NORM_EPS};
pub use cattnm::CAttnM;
pub use cattnu::CAttnU;
pub use cffn::{Cffn, GateActivation};
pub use counts::{count_parameters, BlockKind, ParameterCount, ScaleShape};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, CfKernel, Var};
use crate::cfcore::PoleGuard;
use crate::error::{Error, Result};
use crate::ladders::RangeSet;
use crate::params::{Bound, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Baseline,
    CAttnU,
    CAttnM,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnKind {
    Baseline,
    Cffn,
}

/// Named attention/FFN combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Standard attention and FFN.
    Gpt,
    /// CAttnM attention, standard FFN.
    CofrgenetA,
    /// Standard attention, Cffn.
    CofrgenetF,
    /// CAttnM attention and Cffn.
    Cofrgenet,
    /// CAttnU attention and Cffn.
    CofrgenetU,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Gpt,
        Variant::CofrgenetA,
        Variant::CofrgenetF,
        Variant::Cofrgenet,
        Variant::CofrgenetU,
    ];

    pub fn kinds(self) -> (AttentionKind, FfnKind) {
        match self {
            Variant::Gpt => (AttentionKind::Baseline, FfnKind::Baseline),
            Variant::CofrgenetA => (AttentionKind::CAttnM, FfnKind::Baseline),
            Variant::CofrgenetF => (AttentionKind::Baseline, FfnKind::Cffn),
            Variant::Cofrgenet => (AttentionKind::CAttnM, FfnKind::Cffn),
            Variant::CofrgenetU => (AttentionKind::CAttnU, FfnKind::Cffn),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gpt => "gpt",
            Variant::CofrgenetA => "cofrgenet-a",
            Variant::CofrgenetF => "cofrgenet-f",
            Variant::Cofrgenet => "cofrgenet",
            Variant::CofrgenetU => "cofrgenet-u",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    pub attention: AttentionKind,
    pub ffn: FfnKind,
    pub p: usize,
    pub l_max: usize,
    /// Baseline attention only.
    pub heads: usize,
    /// Baseline FFN expansion factor.
    pub alpha: usize,
    pub ladders: usize,
    pub depth: usize,
    pub guard: PoleGuard,
    pub kernel: CfKernel,
    /// Cffn only.
    pub gate: GateActivation,
}

impl BlockConfig {
    pub fn new(variant: Variant, p: usize, l_max: usize) -> Self {
        let (attention, ffn) = variant.kinds();
        Self {
            attention,
            ffn,
            p,
            l_max,
            heads: 4,
            alpha: 4,
            ladders: 8,
            depth: 5,
            guard: PoleGuard::default(),
            kernel: CfKernel::Continuant,
            gate: GateActivation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.l_max == 0 {
            return Err(Error::Config("p and l_max must be positive".into()));
        }
        if self.attention == AttentionKind::Baseline && (self.heads == 0 || self.p % self.heads != 0) {
            return Err(Error::Config(format!(
                "p = {} is not divisible by heads = {}",
                self.p, self.heads
            )));
        }
        if self.ffn == FfnKind::Baseline && self.alpha == 0 {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::ZeroDepth);
        }
        Ok(())
    }
}

pub(crate) fn check_seq<'t>(x: &Var<'t>, p: usize, l_max: usize) -> Result<usize> {
    let shape = x.shape();
    if shape.len() < 2 || shape[shape.len() - 1] != p {
        let mut expected = shape.clone();
        if let Some(last) = expected.last_mut() {
            *last = p;
        }
        return Err(Error::ShapeMismatch {
            op: "block",
            expected,
            actual: shape,
        });
    }
    let l = shape[shape.len() - 2];
    if l > l_max {
        return Err(Error::SequenceTooLong { len: l, max: l_max });
    }
    Ok(l)
}

#[derive(Clone, Debug)]
pub enum Attention {
    Baseline(MultiHeadAttention),
    CAttnU(CAttnU),
    CAttnM(CAttnM),
}

impl Attention {
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        match self {
            Attention::Baseline(a) => a.forward(bound, x),
            Attention::CAttnU(a) => a.forward(bound, x, ranges),
            Attention::CAttnM(a) => a.forward(bound, x, ranges),
        }
    }
}

#[derive(Clone, Debug)]
pub enum FeedForward {
    Baseline(Mlp),
    Cffn(Cffn),
}

impl FeedForward {
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        match self {
            FeedForward::Baseline(f) => f.forward(bound, x),
            FeedForward::Cffn(f) => f.forward(bound, x, ranges),
        }
    }
}

/// Pre-norm residual block: `h = x + attn(norm(x))`, `out = h + ffn(norm(h))`.
#[derive(Clone, Debug)]
pub struct Block {
    cfg: BlockConfig,
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        ranges: &mut RangeSet,
        prefix: &str,
        cfg: BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let ln1 = LayerNorm::new(store, &format!("{prefix}.ln1"), cfg.p);
        let attn = match cfg.attention {
            AttentionKind::Baseline => Attention::Baseline(MultiHeadAttention::new(store, &format!("{prefix}.attn"), cfg.p, cfg.heads, rng)?),
            AttentionKind::CAttnU => Attention::CAttnU(CAttnU::new(store, ranges, &format!("{prefix}.cattnu"), &cfg, rng)?),
            AttentionKind::CAttnM => Attention::CAttnM(CAttnM::new(store, ranges, &format!("{prefix}.cattnm"), &cfg, rng)?),
        };
        let ln2 = LayerNorm::new(store, &format!("{prefix}.ln2"), cfg.p);
        let ffn = match cfg.ffn {
            FfnKind::Baseline => FeedForward::Baseline(Mlp::new(store, &format!("{prefix}.mlp"), cfg.p, cfg.alpha, rng)),
            FfnKind::Cffn => FeedForward::Cffn(Cffn::new(store, ranges, &format!("{prefix}.cffn"), &cfg, rng)?),
        };
        Ok(Self {
            cfg,
            ln1,
            attn,
            ln2,
            ffn,
        })
    }

    pub fn config(&self) -> &BlockConfig {
        &self.cfg
    }

    pub fn attention(&self) -> &Attention {
        &self.attn
    }

    pub fn feed_forward(&self) -> &FeedForward {
        &self.ffn
    }

    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, mut ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        check_seq(&x, self.cfg.p, self.cfg.l_max)?;
        let a = self.attn.forward(bound, self.ln1.forward(bound, x)?, ranges.as_deref_mut())?;
        let h = ops::add(x, a)?;
        let f = self.ffn.forward(bound, self.ln2.forward(bound, h)?, ranges)?;
        ops::add(h, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval(f: impl for<'t> Fn(&Bound<'t>, Var<'t>) -> Result<Var<'t>>, store: &ParamStore, x: &Tensor) -> Tensor {
        let tape = Tape::new();
        let bound = store.bind_all(&tape);
        let y = f(&bound, tape.constant(x.clone())).unwrap().value();
        (*y).clone()
    }

    /// Perturbs each token in turn and returns the largest change seen in
    /// rows before (and, for per-token maps, after) the perturbed one.
    fn causal_leak(f: impl Fn(&Tensor) -> Tensor, x: &Tensor, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let base = f(x);
        let (l, p) = (x.shape()[0], x.shape()[1]);
        let (mut before, mut after) = (0.0f64, 0.0f64);
        for t in 0..l {
            let mut xp = x.clone();
            for j in 0..p {
                xp.set(&[t, j], x.at(&[t, j]) + rng.random_range(-1.0..1.0));
            }
            let y = f(&xp);
            for s in 0..l {
                let d = (0..p).map(|j| (y.at(&[s, j]) - base.at(&[s, j])).abs()).fold(0.0, f64::max);
                if s < t {
                    before = before.max(d);
                } else if s > t {
                    after = after.max(d);
                }
            }
        }
        (before, after)
    }

    #[test]
    fn every_variant_block_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for variant in Variant::ALL {
            let mut store = ParamStore::new();
            let mut ranges = RangeSet::new();
            let mut cfg = BlockConfig::new(variant, 8, 6);
            cfg.ladders = 3;
            cfg.depth = 3;
            let block = Block::new(&mut store, &mut ranges, "b", cfg, &mut rng).unwrap();
            let x = Tensor::randn(&[6, 8], 1.0, &mut rng);
            let (before, after) = causal_leak(|x| eval(|b, v| block.forward(b, v, None), &store, x), &x, &mut rng);
            assert!(before <= 1e-12, "{variant}: {before}");
            assert!(after > 0.0, "{variant}: no forward influence");
        }
    }

    #[test]
    fn cffn_is_per_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut store = ParamStore::new();
        let mut ranges = RangeSet::new();
        let cfg = BlockConfig::new(Variant::Cofrgenet, 4, 5);
        let f = Cffn::new(&mut store, &mut ranges, "f", &cfg, &mut rng).unwrap();
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let (before, after) = causal_leak(|x| eval(|b, v| f.forward(b, v, None), &store, x), &x, &mut rng);
        assert!(before <= 1e-12 && after <= 1e-12);
    }

    #[test]
    fn sequence_longer_than_l_max_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        let mut ranges = RangeSet::new();
        let cfg = BlockConfig::new(Variant::CofrgenetU, 4, 3);
        let block = Block::new(&mut store, &mut ranges, "b", cfg, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = store.bind_all(&tape);
        let x = tape.constant(Tensor::zeros(&[4, 4]));
        assert!(matches!(block.forward(&bound, x, None), Err(Error::SequenceTooLong { len: 4, max: 3 })));
    }

    #[test]
    fn zero_output_projections_make_identity_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut store = ParamStore::new();
        let mut ranges = RangeSet::new();
        let cfg = BlockConfig::new(Variant::Gpt, 4, 5);
        let block = Block::new(&mut store, &mut ranges, "b", cfg, &mut rng).unwrap();
        let (Attention::Baseline(a), FeedForward::Baseline(m)) = (block.attention(), block.feed_forward()) else {
            unreachable!()
        };
        store.set(a.output.weight, Tensor::zeros(&[4, 4]));
        store.set(m.down.weight, Tensor::zeros(&[16, 4]));
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let y = eval(|b, v| block.forward(b, v, None), &store, &x);
        assert!(y.max_abs_diff(&x) < 1e-15);
    }

    fn ln(v: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        v.iter()
            .enumerate()
            .map(|(i, x)| (x - mean) / (var + LAYER_NORM_EPS).sqrt() * g[i] + b[i])
            .collect()
    }

    fn affine(v: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
        let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
        (0..n_out)
            .map(|o| b.data()[o] + (0..n_in).map(|i| v[i] * w.at(&[i, o])).sum::<f64>())
            .collect()
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    #[test]
    fn baseline_block_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut store = ParamStore::new();
        let mut ranges = RangeSet::new();
        let mut cfg = BlockConfig::new(Variant::Gpt, 2, 2);
        cfg.heads = 1;
        cfg.alpha = 2;
        let block = Block::new(&mut store, &mut ranges, "b", cfg, &mut rng).unwrap();
        // non-trivial values everywhere so every path is exercised
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::uniform(&shape, -1.0, 1.0, &mut rng));
        }
        let x = Tensor::new(&[2, 2], vec![0.3, -1.2, 0.8, 0.5]).unwrap();
        let got = eval(|b, v| block.forward(b, v, None), &store, &x);

        let p = |name: &str| store.get(store.find(name).unwrap()).clone();
        let rows: Vec<Vec<f64>> = (0..2).map(|t| x.row(t).to_vec()).collect();
        let n1: Vec<_> = rows.iter().map(|r| ln(r, p("b.ln1.gain").data(), p("b.ln1.bias").data())).collect();
        let proj = |name: &str| -> Vec<Vec<f64>> {
            n1.iter()
                .map(|r| affine(r, &p(&format!("b.attn.{name}.weight")), &p(&format!("b.attn.{name}.bias"))))
                .collect()
        };
        let (q, k, v) = (proj("q"), proj("k"), proj("v"));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / 2f64.sqrt();
        let mut expect = Vec::new();
        for t in 0..2 {
            let scores: Vec<f64> = (0..=t).map(|s| dot(&q[t], &k[s])).collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = w.iter().sum();
            let mixed: Vec<f64> = (0..2).map(|j| (0..=t).map(|s| w[s] / z * v[s][j]).sum()).collect();
            let a = affine(&mixed, &p("b.attn.o.weight"), &p("b.attn.o.bias"));
            let h: Vec<f64> = (0..2).map(|j| rows[t][j] + a[j]).collect();
            let n2 = ln(&h, p("b.ln2.gain").data(), p("b.ln2.bias").data());
            let up: Vec<f64> = affine(&n2, &p("b.mlp.up.weight"), &p("b.mlp.up.bias")).into_iter().map(gelu).collect();
            let down = affine(&up, &p("b.mlp.down.weight"), &p("b.mlp.down.bias"));
            expect.extend((0..2).map(|j| h[j] + down[j]));
        }
        let expect = Tensor::new(&[2, 2], expect).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-12, "{got:?} vs {expect:?}");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("gpt2".parse::<Variant>().is_err());
    }
}
