use rand::Rng;

use super::{check_seq, BlockConfig, Linear};
use crate::autodiff::{ops, Tensor, Var};
use crate::error::Result;
use crate::ladders::{LadderBank, LadderConfig, RangeSet};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

/// Ladder-scored causal attention.
///
/// Each token is scored by `L` full ladders `y_j = a_0^(j) + f~(W^(j) x_t)`;
/// the scores map to per-position logits through `F` (`[L, l_max]`,
/// truncated to the current length), are softmaxed over the causal prefix
/// and weight the value projection `X W_v`.
#[derive(Clone, Debug)]
pub struct CAttnM {
    p: usize,
    l_max: usize,
    bank: LadderBank,
    positions: ParamId,
    value: Linear,
}

impl CAttnM {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, ranges: &mut RangeSet, prefix: &str, cfg: &BlockConfig, rng: &mut R) -> Result<Self> {
        let mut lc = LadderConfig::new(cfg.p, cfg.ladders, cfg.ladders, cfg.depth);
        lc.guard = cfg.guard;
        lc.kernel = cfg.kernel;
        let bank = LadderBank::new(store, ranges, &format!("{prefix}.ladders"), &lc, true, rng)?;
        let positions = store.add(
            format!("{prefix}.f"),
            ParamGroup::Linear,
            Tensor::randn(&[cfg.ladders, cfg.l_max], 0.02, rng),
        );
        let value = Linear::new(store, &format!("{prefix}.value"), cfg.p, cfg.p, 0.02, rng);
        Ok(Self {
            p: cfg.p,
            l_max: cfg.l_max,
            bank,
            positions,
            value,
        })
    }

    pub fn bank(&self) -> &LadderBank {
        &self.bank
    }

    pub fn positions(&self) -> ParamId {
        self.positions
    }

    pub fn value(&self) -> &Linear {
        &self.value
    }

    /// Causal attention weights `[..., l, l]`.
    pub fn attention_weights<'t>(&self, bound: &Bound<'t>, x: Var<'t>, ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        let l = check_seq(&x, self.p, self.l_max)?;
        let y = self.bank.forward(bound, x, ranges)?;
        let f = ops::narrow_last(bound.var(self.positions), 0, l)?;
        ops::causal_softmax(ops::matmul(y, f)?)
    }

    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        let a = self.attention_weights(bound, x, ranges)?;
        let v = self.value.forward(bound, x)?;
        ops::matmul(a, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::blocks::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_position_map_gives_running_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mut ranges = RangeSet::new();
        let mut cfg = BlockConfig::new(Variant::Cofrgenet, 3, 6);
        cfg.ladders = 1;
        cfg.depth = 2;
        let m = CAttnM::new(&mut store, &mut ranges, "m", &cfg, &mut rng).unwrap();
        store.set(m.positions(), Tensor::zeros(&[1, 6]));
        let tape = Tape::new();
        let bound = store.bind_all(&tape);
        let x = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let out = m.forward(&bound, tape.constant(x.clone()), None).unwrap().value();
        let v = m.value().forward(&bound, tape.constant(x)).unwrap().value();
        for t in 0..5 {
            for j in 0..3 {
                let mean = (0..=t).map(|s| v.at(&[s, j])).sum::<f64>() / (t + 1) as f64;
                assert!((out.at(&[t, j]) - mean).abs() < 1e-12);
            }
        }
    }
}
