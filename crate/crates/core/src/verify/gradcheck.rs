use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ops, Tape, Tensor, Var};
use crate::blocks::{BlockConfig, CAttnM, CAttnU, Cffn, Mlp, MultiHeadAttention, Variant};
use crate::cfcore::{cf_grad, continuant, continuants_of, literal_of, ContinuantTable, PoleGuard};
use crate::error::Result;
use crate::ladders::{LadderConfig, LadderEnsemble, RangeSet};
use crate::params::{Bound, ParamStore};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Magnitude below which errors are measured absolutely: central
/// differences with `h = 1e-6` carry ~1e-10 of rounding noise, which would
/// otherwise dominate the relative error of near-zero gradients.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub component: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradSweepConfig {
    pub depth: usize,
    pub draws: usize,
    /// Magnitudes are drawn from `[lo, hi]`.
    pub lo: f64,
    pub hi: f64,
    /// Every other draw gets random signs.
    pub mixed_signs: bool,
    /// Literal intermediates `t_k` (each level's denominator) and the
    /// continuant `K_d = t_1 ⋯ t_d` must all have magnitude `>= margin`;
    /// draws closer to a pole of either route are rejected.
    pub margin: f64,
    pub seed: u64,
}

impl GradSweepConfig {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            draws: 1000,
            lo: 0.5,
            hi: 3.0,
            mixed_signs: true,
            margin: 0.25,
            seed: depth as u64,
        }
    }
}

/// Smallest literal denominator magnitude over all levels.
fn min_intermediate(a: &[f64]) -> f64 {
    let mut tail = a[a.len() - 1];
    let mut min = tail.abs();
    for &ak in a[..a.len() - 1].iter().rev() {
        tail = ak + 1.0 / tail;
        min = min.min(tail.abs());
    }
    min
}

/// Draws partial denominators that stay at least `margin` away from every
/// pole: no literal intermediate and no `K_d` below it. `K_d` is the
/// product of the intermediates, so bounding only the intermediates would
/// still let the single continuant guard fire where no literal guard does.
pub fn sample_pole_free<R: Rng + ?Sized>(cfg: &GradSweepConfig, signed: bool, rng: &mut R) -> Vec<f64> {
    loop {
        let a: Vec<f64> = (0..cfg.depth)
            .map(|_| {
                let m = rng.random_range(cfg.lo..=cfg.hi);
                if signed && rng.random_bool(0.5) {
                    -m
                } else {
                    m
                }
            })
            .collect();
        if min_intermediate(&a) >= cfg.margin && continuant(&a).abs() >= cfg.margin {
            return a;
        }
    }
}

/// Checks `grad` (normally [`cf_grad`]) against central differences of the
/// literal evaluation. Taking the gradient as a parameter lets tests
/// confirm that a corrupted formula is caught.
pub fn cf_gradient_sweep(cfg: &GradSweepConfig, grad: impl Fn(&ContinuantTable) -> Vec<f64>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let guard = PoleGuard::default();
    let mut max_rel_err: f64 = 0.0;
    for i in 0..cfg.draws {
        let a = sample_pole_free(cfg, cfg.mixed_signs && i % 2 == 1, &mut rng);
        let table = continuants_of(&a, guard)?;
        let analytic = grad(&table);
        let numeric = central_difference(|x| literal_of(x, 0.0, guard).value, &a, FD_STEP);
        for (g, n) in analytic.iter().zip(&numeric) {
            max_rel_err = max_rel_err.max(relative_error(*g, *n));
        }
    }
    Ok(GradCheckReport {
        component: format!("cf_grad d={}", cfg.depth),
        checked: cfg.draws * cfg.depth,
        max_rel_err,
        tolerance: GRAD_TOLERANCE,
    })
}

/// Analytic cf gradient, for use as the default argument of
/// [`cf_gradient_sweep`].
pub fn analytic_cf_grad(table: &ContinuantTable) -> Vec<f64> {
    cf_grad(table)
}

/// Finite-difference check of every live parameter entry in `store` for
/// the scalar loss `sum(forward(params) ⊙ R)`, `R` a fixed random tensor.
pub fn gradcheck_store(
    component: &str,
    store: &ParamStore,
    forward: impl for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
) -> Result<GradCheckReport> {
    let weights = {
        let tape = Tape::new();
        let bound = store.bind(&tape, |_| false);
        let shape = forward(&tape, &bound)?.shape();
        Tensor::uniform(&shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(99))
    };
    let loss_of = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let bound = s.bind(&tape, |_| false);
        let out = forward(&tape, &bound)?;
        Ok(ops::sum(ops::mul(out, tape.constant(weights.clone()))?).item())
    };

    let tape = Tape::new();
    let bound = store.bind_all(&tape);
    let out = forward(&tape, &bound)?;
    let loss = ops::sum(ops::mul(out, tape.constant(weights.clone()))?);
    let grads = tape.backward(loss)?;

    let mut probe = store.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for id in store.ids() {
        let analytic = grads.get(bound.var(id)).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let mask = store.mask(id).map(<[bool]>::to_vec);
        for j in 0..store.get(id).len() {
            if mask.as_ref().is_some_and(|m| !m[j]) {
                continue;
            }
            let x = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = x + FD_STEP;
            let up = loss_of(&probe)?;
            probe.get_mut(id).data_mut()[j] = x - FD_STEP;
            let down = loss_of(&probe)?;
            probe.get_mut(id).data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(relative_error(analytic.data()[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        component: component.to_string(),
        checked,
        max_rel_err,
        tolerance: GRAD_TOLERANCE,
    })
}

/// Full-parameter finite-difference checks of every network component on
/// small instances.
pub fn component_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let (l, p) = (4, 3);
    let x = Tensor::randn(&[2, l, p], 1.0, &mut rng);

    let mut cfg = BlockConfig::new(Variant::Cofrgenet, p, l);
    cfg.ladders = 2;
    cfg.depth = 3;

    let mut store = ParamStore::new();
    let mut ranges = RangeSet::new();
    let ens = LadderEnsemble::new(&mut store, &mut ranges, "ens", LadderConfig::new(p, 2, 2, 3), &mut rng)?;
    reports.push(gradcheck_store("ladder ensemble p=3 L=2 d=3", &store, |t, b| ens.forward(b, t.constant(x.clone()), None))?);

    let mut store = ParamStore::new();
    let cffn = Cffn::new(&mut store, &mut ranges, "cffn", &cfg, &mut rng)?;
    reports.push(gradcheck_store("cffn p=3 L=2 d=3", &store, |t, b| cffn.forward(b, t.constant(x.clone()), None))?);

    let mut store = ParamStore::new();
    let attn = CAttnM::new(&mut store, &mut ranges, "cattnm", &cfg, &mut rng)?;
    reports.push(gradcheck_store("cattnm p=3 L=2 d=3", &store, |t, b| attn.forward(b, t.constant(x.clone()), None))?);

    let mut store = ParamStore::new();
    let attn = CAttnU::new(&mut store, &mut ranges, "cattnu", &cfg, &mut rng)?;
    reports.push(gradcheck_store("cattnu l=4 d=3", &store, |t, b| attn.forward(b, t.constant(x.clone()), None))?);

    let x4 = Tensor::randn(&[2, l, 4], 1.0, &mut rng);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 4, 2, &mut rng)?;
    reports.push(gradcheck_store("attention p=4 heads=2", &store, |t, b| mha.forward(b, t.constant(x4.clone())))?);

    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", 4, 4, &mut rng);
    reports.push(gradcheck_store("ffn p=4 alpha=4", &store, |t, b| mlp.forward(b, t.constant(x4.clone())))?);
    Ok(reports)
}
