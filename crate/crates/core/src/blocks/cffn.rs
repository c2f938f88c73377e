use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BlockConfig, Linear};
use crate::autodiff::{ops, Var};
use crate::error::Result;
use crate::ladders::{LadderConfig, LadderEnsemble, RangeSet};
use crate::params::{Bound, ParamStore};

/// Non-linearity applied to the gate branch of [`Cffn`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateActivation {
    /// `sigmoid(x W_g + b_g)`: a saturated gate passes the value branch
    /// through unchanged.
    #[default]
    Sigmoid,
    /// `silu(x W_g + b_g)` (SwiGLU-style).
    Silu,
}

/// Gated, non-expanded ladder feed-forward block:
/// `h = gate(X W_g + b_g) ⊙ (X W_vv + b_v)`, `out = ensemble(h)` with
/// `q = p`. Purely per-token.
#[derive(Clone, Debug)]
pub struct Cffn {
    gate_activation: GateActivation,
    pub gate: Linear,
    pub value: Linear,
    ensemble: LadderEnsemble,
}

impl Cffn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, ranges: &mut RangeSet, prefix: &str, cfg: &BlockConfig, rng: &mut R) -> Result<Self> {
        let gate = Linear::new(store, &format!("{prefix}.gate"), cfg.p, cfg.p, 0.02, rng);
        let value = Linear::new(store, &format!("{prefix}.value"), cfg.p, cfg.p, 0.02, rng);
        let mut lc = LadderConfig::new(cfg.p, cfg.p, cfg.ladders, cfg.depth);
        lc.guard = cfg.guard;
        lc.kernel = cfg.kernel;
        let ensemble = LadderEnsemble::new(store, ranges, &format!("{prefix}.ladders"), lc, rng)?;
        Ok(Self {
            gate_activation: cfg.gate,
            gate,
            value,
            ensemble,
        })
    }

    pub fn ensemble(&self) -> &LadderEnsemble {
        &self.ensemble
    }

    /// The gated representation `h` fed to the ladders.
    pub fn gated<'t>(&self, bound: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let g = self.gate.forward(bound, x)?;
        let g = match self.gate_activation {
            GateActivation::Sigmoid => ops::sigmoid(g),
            GateActivation::Silu => ops::silu(g),
        };
        ops::mul(g, self.value.forward(bound, x)?)
    }

    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        let h = self.gated(bound, x)?;
        self.ensemble.forward(bound, h, ranges)
    }
}
