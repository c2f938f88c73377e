use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{sample_pole_free, GradSweepConfig};
use crate::cfcore::{
    cf_eval, check_continuant_identity, continuant, continuants_of, literal_of, tridiagonal_determinant, PoleGuard,
};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub name: String,
    pub cases: usize,
    pub max_relative: f64,
    pub tolerance: f64,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.max_relative <= self.tolerance
    }
}

/// The continuant identity for every `0 <= k <= d <= max_depth`, with
/// `(a0..ad)` uniform in `[0.5, 3]`.
pub fn identity_sweep(draws: usize, max_depth: usize, seed: u64) -> Result<SweepReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut cases) = (0.0f64, 0);
    for _ in 0..draws {
        for d in 1..=max_depth {
            let a: Vec<f64> = (0..=d).map(|_| rng.random_range(0.5..=3.0)).collect();
            for k in 0..=d {
                worst = worst.max(check_continuant_identity(&a, k)?.relative());
                cases += 1;
            }
        }
    }
    Ok(SweepReport {
        name: format!("continuant identity, d <= {max_depth}"),
        cases,
        max_relative: worst,
        tolerance: 1e-9,
    })
}

/// Tridiagonal determinant against the continuant recursion for every
/// length `1..=max_len`, with signed entries of magnitude `[0.5, 3]`.
pub fn determinant_sweep(draws: usize, max_len: usize, seed: u64) -> Result<SweepReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut cases) = (0.0f64, 0);
    for _ in 0..draws {
        for k in 1..=max_len {
            let a: Vec<f64> = (0..k)
                .map(|_| {
                    let m = rng.random_range(0.5..=3.0);
                    if rng.random_bool(0.5) {
                        -m
                    } else {
                        m
                    }
                })
                .collect();
            let det = tridiagonal_determinant(&a)?;
            let kk = continuant(&a);
            // the scale of the largest expansion term bounds cancellation
            let scale = continuant(&a.iter().map(|x| x.abs()).collect::<Vec<_>>());
            worst = worst.max((det - kk).abs() / scale.max(1.0));
            cases += 1;
        }
    }
    Ok(SweepReport {
        name: format!("tridiagonal determinant, k <= {max_len}"),
        cases,
        max_relative: worst,
        tolerance: 1e-10,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub sweep: SweepReport,
    /// Divisions per evaluation, as counted by each route.
    pub continuant_divisions: usize,
    pub literal_divisions: usize,
    pub depth: usize,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.sweep.passed() && self.continuant_divisions == 1 && self.literal_divisions == self.depth
    }
}

/// `cf_eval` against `cf_literal` on pole-free draws (every literal
/// intermediate and `K_d` above `10 ε`, so neither route's guard fires). Division counts must be the same on every
/// draw; the report carries them.
pub fn literal_equivalence_sweep(draws: usize, depth: usize, seed: u64) -> Result<EquivalenceReport> {
    let guard = PoleGuard::default();
    let cfg = GradSweepConfig {
        margin: 10.0 * guard.epsilon(),
        ..GradSweepConfig::new(depth)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let (mut cont_div, mut lit_div) = (None, None);
    let mut consistent = true;
    for i in 0..draws {
        let a = sample_pole_free(&cfg, i % 2 == 1, &mut rng);
        let a0 = rng.random_range(-2.0..=2.0);
        let table = continuants_of(&a, guard)?;
        let fast = cf_eval(&table, a0);
        let slow = literal_of(&a, a0, guard);
        worst = worst.max((fast - slow.value).abs() / (1.0 + fast.abs()));
        consistent &= *cont_div.get_or_insert(table.divisions_used()) == table.divisions_used();
        consistent &= *lit_div.get_or_insert(slow.divisions_used) == slow.divisions_used;
    }
    Ok(EquivalenceReport {
        sweep: SweepReport {
            name: format!("continuant vs literal, d = {depth}"),
            cases: draws,
            max_relative: worst,
            tolerance: 1e-10,
        },
        continuant_divisions: if consistent { cont_div.unwrap_or(0) } else { usize::MAX },
        literal_divisions: if consistent { lit_div.unwrap_or(0) } else { usize::MAX },
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweeps_pass() {
        assert!(identity_sweep(50, 8, 1).unwrap().passed());
        assert!(determinant_sweep(50, 8, 2).unwrap().passed());
        let eq = literal_equivalence_sweep(500, 5, 3).unwrap();
        assert!(eq.passed(), "{eq:?}");
        assert_eq!((eq.continuant_divisions, eq.literal_divisions), (1, 5));
    }
}
