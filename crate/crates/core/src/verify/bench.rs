use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::cfcore::{ContinuantBatch, LiteralBatch, PoleGuard};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub depth: usize,
    pub batch: usize,
    pub ladders: usize,
    pub warmup: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            depth: 7,
            batch: 4096,
            ladders: 8,
            warmup: 10,
            runs: 100,
            seed: 0,
        }
    }
}

/// Median wall times in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub forward: f64,
    pub backward: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchArm {
    pub name: &'static str,
    pub timing: Timing,
    /// Divisions per forward pass over the whole batch.
    pub divisions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub continuant: BenchArm,
    pub literal: BenchArm,
}

impl BenchReport {
    /// Literal time over continuant time for forward + backward.
    pub fn speedup(&self) -> f64 {
        self.literal.timing.total / self.continuant.timing.total
    }

    pub fn continuant_faster(&self) -> bool {
        self.continuant.timing.total < self.literal.timing.total
    }

    pub fn divisions_match(&self) -> bool {
        let rows = self.config.batch * self.config.ladders;
        self.continuant.divisions == rows && self.literal.divisions == rows * self.config.depth
    }
}

fn median(mut xs: Vec<Duration>) -> f64 {
    xs.sort();
    let n = xs.len();
    let mid = if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    };
    mid.as_secs_f64()
}

/// Times `forward` then `backward`, each run on fresh inputs identical
/// across arms.
fn time_arm<S>(
    cfg: &BenchConfig,
    a: &[f64],
    upstream: &[f64],
    forward: impl Fn(&[f64]) -> Result<(S, Vec<f64>)>,
    backward: impl Fn(&S, &[f64], &mut [f64]),
) -> Result<Timing> {
    let mut grad = vec![0.0; a.len()];
    let (mut fwd, mut bwd, mut tot) = (Vec::new(), Vec::new(), Vec::new());
    for run in 0..cfg.warmup + cfg.runs {
        let t0 = Instant::now();
        let (saved, out) = forward(black_box(a))?;
        let t1 = Instant::now();
        backward(&saved, black_box(upstream), &mut grad);
        let t2 = Instant::now();
        black_box((&out, &grad));
        if run >= cfg.warmup {
            fwd.push(t1 - t0);
            bwd.push(t2 - t1);
            tot.push(t2 - t0);
        }
    }
    Ok(Timing {
        forward: median(fwd),
        backward: median(bwd),
        total: median(tot),
    })
}

/// Continuant (one division per evaluation) against literal (`d`
/// divisions) forward + backward at identical shapes, on one thread.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows = cfg.batch * cfg.ladders;
    let d = cfg.depth;
    // the training-time regime: partial denominators near 1
    let a = Tensor::uniform(&[rows * d], 0.5, 1.5, &mut rng).into_data();
    let upstream = Tensor::randn(&[rows], 1.0, &mut rng).into_data();
    let guard = PoleGuard::default();

    let continuant = time_arm(
        cfg,
        &a,
        &upstream,
        |a| ContinuantBatch::forward(a, d, guard),
        |s, u, g| s.backward_into(u, g),
    )?;
    let literal = time_arm(
        cfg,
        &a,
        &upstream,
        |a| LiteralBatch::forward(a, d, guard),
        |s, u, g| s.backward_into(u, g),
    )?;
    let (cb, _) = ContinuantBatch::forward(&a, d, guard)?;
    let (lb, _) = LiteralBatch::forward(&a, d, guard)?;
    Ok(BenchReport {
        config: *cfg,
        continuant: BenchArm {
            name: "continuant",
            timing: continuant,
            divisions: cb.divisions_used(),
        },
        literal: BenchArm {
            name: "literal",
            timing: literal,
            divisions: lb.divisions_used(),
        },
    })
}
