//! Ensembles of continued-fraction ladders.
//!
//! A ladder is a continued fraction whose partial denominators are affine
//! in the input, `a_k = w_k . x + b_k`. A linear combination of `L` ladders
//! collapses to
//!
//! ```text
//! y = U x + V z,   z_j = f~(W^(j) x),   j = 1..L
//! ```
//!
//! because every leading term `a_0^(j)` is linear in `x` and folds into
//! `U`. Weights are stored input-major (`[in, out]`) so the forward pass is
//! a plain `x . W`; the depth-`k` rows of all `L` ladders share one tensor,
//! which is also the unit of the dyadic training schedule.

mod range;

pub use range::{RangeMode, RangeSet, RangeTracker};

use rand::Rng;

use crate::autodiff::{cf_layer, ops, CfKernel, Tensor, Var};
use crate::cfcore::PoleGuard;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

pub const MAX_DEPTH: usize = 16;

/// Depths used in the reference experiments.
pub const DEPTH_GRID: [usize; 4] = [1, 3, 5, 7];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadderConfig {
    pub p: usize,
    pub q: usize,
    pub ladders: usize,
    pub depth: usize,
    pub guard: PoleGuard,
    /// Prepend a constant 1 to the input (affine rather than linear maps).
    pub bias: bool,
    pub kernel: CfKernel,
}

impl LadderConfig {
    pub fn new(p: usize, q: usize, ladders: usize, depth: usize) -> Self {
        Self {
            p,
            q,
            ladders,
            depth,
            guard: PoleGuard::default(),
            bias: true,
            kernel: CfKernel::Continuant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.ladders == 0 {
            return Err(Error::Config(format!(
                "ladder dimensions must be positive (p={}, q={}, L={})",
                self.p, self.q, self.ladders
            )));
        }
        if self.depth == 0 {
            return Err(Error::ZeroDepth);
        }
        if self.depth > MAX_DEPTH {
            return Err(Error::Config(format!(
                "ladder depth {} exceeds {MAX_DEPTH}",
                self.depth
            )));
        }
        Ok(())
    }
}

fn check_last_dim(op: &'static str, x: &Var<'_>, p: usize) -> Result<()> {
    let shape = x.shape();
    if shape.last() != Some(&p) || shape.len() < 2 {
        let mut expected = shape.clone();
        if let Some(last) = expected.last_mut() {
            *last = p;
        }
        return Err(Error::ShapeMismatch {
            op,
            expected,
            actual: shape,
        });
    }
    Ok(())
}

/// `L` p-variate ladders sharing an input, without any output combiner.
#[derive(Clone, Debug)]
pub struct LadderBank {
    p: usize,
    ladders: usize,
    depth: usize,
    guard: PoleGuard,
    kernel: CfKernel,
    leading: Option<(ParamId, Option<ParamId>)>,
    weights: Vec<ParamId>,
    biases: Vec<Option<ParamId>>,
    tracker: usize,
}

impl LadderBank {
    /// Depth-`k` weights are `N(0, 0.02/sqrt(p))`, depth-`k` biases start at
    /// one so every `a_k` is close to 1 at initialisation. With `leading`
    /// the bank also owns `a_0` terms (`N(0, 0.02)` weights, zero bias).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        ranges: &mut RangeSet,
        prefix: &str,
        cfg: &LadderConfig,
        leading: bool,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (p, l) = (cfg.p, cfg.ladders);
        let leading = leading.then(|| {
            let w = store.add(format!("{prefix}.w0.weight"), ParamGroup::Linear, Tensor::randn(&[p, l], 0.02, rng));
            let b = cfg
                .bias
                .then(|| store.add(format!("{prefix}.w0.bias"), ParamGroup::Linear, Tensor::zeros(&[l])));
            (w, b)
        });
        let std = 0.02 / (p as f64).sqrt();
        let mut weights = Vec::with_capacity(cfg.depth);
        let mut biases = Vec::with_capacity(cfg.depth);
        for k in 1..=cfg.depth {
            let group = ParamGroup::LadderDepth(k);
            weights.push(store.add(format!("{prefix}.w{k}.weight"), group, Tensor::randn(&[p, l], std, rng)));
            biases.push(
                cfg.bias
                    .then(|| store.add(format!("{prefix}.w{k}.bias"), group, Tensor::ones(&[l]))),
            );
        }
        Ok(Self {
            p,
            ladders: l,
            depth: cfg.depth,
            guard: cfg.guard,
            kernel: cfg.kernel,
            leading,
            weights,
            biases,
            tracker: ranges.register(l),
        })
    }

    pub fn ladders(&self) -> usize {
        self.ladders
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn tracker(&self) -> usize {
        self.tracker
    }

    /// Partial denominators `a_1..a_d` for every ladder: `[..., L, d]`.
    pub fn denominators<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        check_last_dim("ladder_bank", &x, self.p)?;
        let columns = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(&w, b)| {
                let a = ops::matmul(x, bound.var(w))?;
                match b {
                    Some(b) => ops::add(a, bound.var(*b)),
                    None => Ok(a),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ops::stack_last(&columns)
    }

    /// Ladder outputs `[..., L]`: `f~(a)` or, when the bank owns leading
    /// terms, `a_0 + f~(a)`. The tracker sees exactly what is returned.
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        let a = self.denominators(bound, x)?;
        let mut z = cf_layer(a, self.guard, self.kernel)?;
        if let Some((w, b)) = self.leading {
            let mut a0 = ops::matmul(x, bound.var(w))?;
            if let Some(b) = b {
                a0 = ops::add(a0, bound.var(b))?;
            }
            z = ops::add(a0, z)?;
        }
        match ranges {
            Some(r) => r.get_mut(self.tracker).process(z),
            None => Ok(z),
        }
    }

    /// The `d x (p+1)` matrix of ladder `j`, bias in column 0.
    pub fn ladder_matrix(&self, store: &ParamStore, j: usize) -> Tensor {
        let mut out = Tensor::zeros(&[self.depth, self.p + 1]);
        for (k, (&w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if let Some(b) = b {
                out.set(&[k, 0], store.get(*b).data()[j]);
            }
            let wt = store.get(w);
            for i in 0..self.p {
                out.set(&[k, i + 1], wt.at(&[i, j]));
            }
        }
        out
    }

    pub fn weight(&self, depth: usize) -> ParamId {
        self.weights[depth - 1]
    }

    pub fn bias(&self, depth: usize) -> Option<ParamId> {
        self.biases[depth - 1]
    }

    pub fn leading(&self) -> Option<(ParamId, Option<ParamId>)> {
        self.leading
    }
}

/// `y = U x + V z` over `L` ladders.
#[derive(Clone, Debug)]
pub struct LadderEnsemble {
    cfg: LadderConfig,
    u_weight: ParamId,
    u_bias: Option<ParamId>,
    v: ParamId,
    bank: LadderBank,
}

impl LadderEnsemble {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        ranges: &mut RangeSet,
        prefix: &str,
        cfg: LadderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let u_weight = store.add(format!("{prefix}.u.weight"), ParamGroup::Linear, Tensor::randn(&[cfg.p, cfg.q], 0.02, rng));
        let u_bias = cfg
            .bias
            .then(|| store.add(format!("{prefix}.u.bias"), ParamGroup::Linear, Tensor::zeros(&[cfg.q])));
        let v = store.add(format!("{prefix}.v"), ParamGroup::Linear, Tensor::randn(&[cfg.ladders, cfg.q], 0.02, rng));
        let bank = LadderBank::new(store, ranges, prefix, &cfg, false, rng)?;
        Ok(Self {
            cfg,
            u_weight,
            u_bias,
            v,
            bank,
        })
    }

    pub fn config(&self) -> &LadderConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &LadderBank {
        &self.bank
    }

    pub fn u_weight(&self) -> ParamId {
        self.u_weight
    }

    pub fn u_bias(&self) -> Option<ParamId> {
        self.u_bias
    }

    pub fn v(&self) -> ParamId {
        self.v
    }

    /// `[..., p] -> [..., q]`. With a tracker set, `z` is recorded
    /// (recording mode) or clamped (clipping mode) before the `V` product.
    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        check_last_dim("ensemble_forward", &x, self.cfg.p)?;
        let mut linear = ops::matmul(x, bound.var(self.u_weight))?;
        if let Some(b) = self.u_bias {
            linear = ops::add(linear, bound.var(b))?;
        }
        let z = self.bank.forward(bound, x, ranges)?;
        ops::add(linear, ops::matmul(z, bound.var(self.v))?)
    }
}
