use rand::Rng;

use super::{check_seq, BlockConfig};
use crate::autodiff::{cf_layer, ops, CfKernel, Tensor, Var};
use crate::cfcore::PoleGuard;
use crate::error::Result;
use crate::ladders::RangeSet;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

/// One ensemble of univariate, position-wise ladders followed by an upper
/// triangular combiner.
#[derive(Clone, Debug)]
struct UnivariateEnsemble {
    /// `w_0..w_d`, each `[l_max]`.
    weights: Vec<ParamId>,
    combiner: ParamId,
    tracker: usize,
}

/// Transposed causal token mixing.
///
/// The input is transposed to `[..., p, l]` so that each embedding
/// dimension is a length-`l` signal over positions. Two ensembles of
/// univariate ladders act element-wise on that signal,
/// `y = w_0 ⊙ x + f~(w_1 ⊙ x, .., w_d ⊙ x)`, each followed by an upper
/// triangular combiner (`O[:, j]` only sees positions `<= j`); the two
/// results are multiplied element-wise and transposed back.
#[derive(Clone, Debug)]
pub struct CAttnU {
    p: usize,
    l_max: usize,
    guard: PoleGuard,
    kernel: CfKernel,
    ensembles: [UnivariateEnsemble; 2],
}

fn upper_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|i| i / n <= i % n).collect()
}

impl CAttnU {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, ranges: &mut RangeSet, prefix: &str, cfg: &BlockConfig, rng: &mut R) -> Result<Self> {
        let l = cfg.l_max;
        let mut make = |e: usize, rng: &mut R| {
            let weights = (0..=cfg.depth)
                .map(|k| {
                    let (group, init) = if k == 0 {
                        (ParamGroup::Linear, Tensor::randn(&[l], 0.02, rng))
                    } else {
                        (ParamGroup::LadderDepth(k), Tensor::ones(&[l]))
                    };
                    store.add(format!("{prefix}.e{e}.w{k}"), group, init)
                })
                .collect();
            let combiner = store.add_masked(
                format!("{prefix}.e{e}.u"),
                ParamGroup::Linear,
                Tensor::randn(&[l, l], 0.02, rng),
                upper_mask(l),
            );
            UnivariateEnsemble {
                weights,
                combiner,
                tracker: ranges.register(l),
            }
        };
        let first = make(1, rng);
        let second = make(2, rng);
        Ok(Self {
            p: cfg.p,
            l_max: l,
            guard: cfg.guard,
            kernel: cfg.kernel,
            ensembles: [first, second],
        })
    }

    /// Ladder weight `w_k` (`k = 0..=d`) of ensemble `e` (0 or 1).
    pub fn weight(&self, e: usize, k: usize) -> ParamId {
        self.ensembles[e].weights[k]
    }

    pub fn combiner(&self, e: usize) -> ParamId {
        self.ensembles[e].combiner
    }

    fn ensemble<'t>(
        &self,
        e: &UnivariateEnsemble,
        bound: &Bound<'t>,
        xt: Var<'t>,
        l: usize,
        ranges: Option<&mut RangeSet>,
    ) -> Result<Var<'t>> {
        let w = |k: usize| ops::narrow_last(bound.var(e.weights[k]), 0, l);
        let denominators = (1..e.weights.len())
            .map(|k| ops::mul(xt, w(k)?))
            .collect::<Result<Vec<_>>>()?;
        let mut z = cf_layer(ops::stack_last(&denominators)?, self.guard, self.kernel)?;
        if let Some(r) = ranges {
            z = r.get_mut(e.tracker).process(z)?;
        }
        let y = ops::add(ops::mul(xt, w(0)?)?, z)?;
        ops::triu_matmul(y, bound.var(e.combiner))
    }

    pub fn forward<'t>(&self, bound: &Bound<'t>, x: Var<'t>, mut ranges: Option<&mut RangeSet>) -> Result<Var<'t>> {
        let l = check_seq(&x, self.p, self.l_max)?;
        let xt = ops::transpose_last2(x)?;
        let o1 = self.ensemble(&self.ensembles[0], bound, xt, l, ranges.as_deref_mut())?;
        let o2 = self.ensemble(&self.ensembles[1], bound, xt, l, ranges)?;
        ops::transpose_last2(ops::mul(o1, o2)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::blocks::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(depth: usize, l_max: usize, p: usize) -> (ParamStore, CAttnU) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mut ranges = RangeSet::new();
        let mut cfg = BlockConfig::new(Variant::CofrgenetU, p, l_max);
        cfg.depth = depth;
        let u = CAttnU::new(&mut store, &mut ranges, "u", &cfg, &mut rng).unwrap();
        (store, u)
    }

    #[test]
    fn depth_one_hand_example() {
        let (mut store, u) = build(1, 2, 1);
        for e in 0..2 {
            store.set(u.weight(e, 0), Tensor::zeros(&[2]));
            store.set(u.weight(e, 1), Tensor::ones(&[2]));
            store.set(u.combiner(e), Tensor::identity(2));
        }
        let tape = Tape::new();
        let bound = store.bind_all(&tape);
        let x = tape.constant(Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap());
        let out = u.forward(&bound, x, None).unwrap().value();
        assert_eq!(out.data(), &[1.0, 0.25]);
    }

    #[test]
    fn zero_combiners_zero_output() {
        let (mut store, u) = build(3, 4, 2);
        for e in 0..2 {
            store.set(u.combiner(e), Tensor::zeros(&[4, 4]));
        }
        let tape = Tape::new();
        let bound = store.bind_all(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = tape.constant(Tensor::randn(&[3, 2], 1.0, &mut rng));
        let out = u.forward(&bound, x, None).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combiner_is_stored_upper_triangular() {
        let (store, u) = build(2, 5, 2);
        let c = store.get(u.combiner(0));
        for i in 0..5 {
            for j in 0..i {
                assert_eq!(c.at(&[i, j]), 0.0);
            }
        }
        assert_eq!(store.info(u.combiner(0)).live, 15);
    }

    /// With `d = 1` and no linear term, output position 1 is
    /// `(u11/x0 + u21/x1)(v11/x0 + v21/x1)`, which contains the cross term
    /// `1/(x0 x1)` that neither ensemble produces alone.
    #[test]
    fn product_creates_cross_terms() {
        let (mut store, u) = build(1, 2, 1);
        let c1 = Tensor::new(&[2, 2], vec![0.0, 0.7, 0.0, 1.3]).unwrap();
        let c2 = Tensor::new(&[2, 2], vec![0.0, -0.4, 0.0, 2.1]).unwrap();
        for (e, c) in [c1.clone(), c2.clone()].into_iter().enumerate() {
            store.set(u.weight(e, 0), Tensor::zeros(&[2]));
            store.set(u.weight(e, 1), Tensor::ones(&[2]));
            store.set(u.combiner(e), c);
        }
        let eval = |x0: f64, x1: f64| {
            let tape = Tape::new();
            let bound = store.bind_all(&tape);
            let x = tape.constant(Tensor::new(&[2, 1], vec![x0, x1]).unwrap());
            u.forward(&bound, x, None).unwrap().value().data()[1]
        };
        let (a, b) = (c1.at(&[0, 1]), c1.at(&[1, 1]));
        let (c, d) = (c2.at(&[0, 1]), c2.at(&[1, 1]));
        // coefficient of 1/(x0 x1) is a*d + b*c; recover it from four
        // evaluations by inclusion-exclusion over the reciprocal inputs.
        let (s, t) = (2.0, 4.0);
        let mixed = eval(1.0 / t, 1.0 / t) - eval(1.0 / t, 1.0 / s) - eval(1.0 / s, 1.0 / t) + eval(1.0 / s, 1.0 / s);
        let expect = (a * d + b * c) * (t - s) * (t - s);
        assert!((mixed - expect).abs() < 1e-9, "{mixed} vs {expect}");
        assert!((a * d + b * c).abs() > 0.1);
    }
}
