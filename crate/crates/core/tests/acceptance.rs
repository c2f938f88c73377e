//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the criteria execute in
//! order on one thread; the benchmark timing in particular must not share
//! the machine with other tests.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cofrgenet::autodiff::{Tape, Tensor, Var};
use cofrgenet::blocks::{
    count_parameters, Attention, Block, BlockConfig, BlockKind, CAttnM, CAttnU, Cffn, FeedForward, Mlp, MultiHeadAttention,
    ScaleShape, Variant,
};
use cofrgenet::ladders::{LadderBank, RangeMode, RangeSet, DEPTH_GRID};
use cofrgenet::model::{count_model_parameters, LanguageModel, ModelConfig};
use cofrgenet::params::{Bound, ParamStore};
use cofrgenet::training::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Corpus, TrainConfig, Trainer};
use cofrgenet::verify::{self, BenchConfig, GradSweepConfig};
use cofrgenet::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- 1

fn gradient_exactness() -> Result<Outcome> {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for depth in DEPTH_GRID {
        let r = verify::cf_gradient_sweep(&GradSweepConfig::new(depth), verify::analytic_cf_grad)?;
        worst = worst.max(r.max_rel_err);
        parts.push(format!("d={depth}: {:.2e}", r.max_rel_err));
    }
    let elapsed = started.elapsed();
    Ok(Outcome::new(
        worst <= verify::GRAD_TOLERANCE && elapsed < Duration::from_secs(5),
        format!(
            "max rel err {worst:.2e} <= 1e-5 over 1000 draws per depth ({}), {:.2}s < 5s",
            parts.join(", "),
            secs(elapsed)
        ),
    ))
}

// ---------------------------------------------------------------- 2, 3, 4

fn continuant_identity() -> Result<Outcome> {
    let started = Instant::now();
    let r = verify::identity_sweep(1000, 8, 101)?;
    let elapsed = started.elapsed();
    Ok(Outcome::new(
        r.passed() && r.tolerance <= 1e-9 && elapsed < Duration::from_secs(5),
        format!(
            "max residual {:.2e} <= 1e-9 over {} (k, d <= 8) cases, {:.2}s < 5s",
            r.max_relative,
            r.cases,
            secs(elapsed)
        ),
    ))
}

fn determinant_form() -> Result<Outcome> {
    let r = verify::determinant_sweep(1000, 8, 102)?;
    Ok(Outcome::new(
        r.passed() && r.tolerance <= 1e-10,
        format!("max relative diff {:.2e} <= 1e-10 over {} matrices, k <= 8", r.max_relative, r.cases),
    ))
}

fn literal_equivalence() -> Result<Outcome> {
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut counts = Vec::new();
    for depth in 1..=8 {
        let r = verify::literal_equivalence_sweep(10_000, depth, 103 + depth as u64)?;
        ok &= r.passed() && r.sweep.tolerance <= 1e-10;
        worst = worst.max(r.sweep.max_relative);
        counts.push(format!("{}/{}", r.continuant_divisions, r.literal_divisions));
    }
    Ok(Outcome::new(
        ok,
        format!(
            "max relative diff {worst:.2e} <= 1e-10 on 10^4 draws per d in 1..=8; divisions continuant/literal {}",
            counts.join(" ")
        ),
    ))
}

// ---------------------------------------------------------------- 5

const CAUSAL_P: usize = 32;
const CAUSAL_L: usize = 16;
const CAUSAL_TRIALS: usize = 100;

fn eval(store: &ParamStore, x: &Tensor, f: &dyn for<'t> Fn(&Bound<'t>, Var<'t>) -> Result<Var<'t>>) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = store.bind_all(&tape);
    let y = f(&bound, tape.constant(x.clone()))?.value();
    Ok((*y).clone())
}

/// Largest change in rows before (and after) a randomly perturbed token,
/// over `CAUSAL_TRIALS` random `(t, perturbation)` pairs.
struct Leak {
    before: f64,
    after: f64,
}

fn leak_trials(rng: &mut ChaCha8Rng, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Leak> {
    let x = Tensor::randn(&[CAUSAL_L, CAUSAL_P], 1.0, rng);
    let base = f(&x)?;
    let (mut before, mut after) = (0.0f64, 0.0f64);
    for _ in 0..CAUSAL_TRIALS {
        let t = rng.random_range(0..CAUSAL_L);
        let mut xp = x.clone();
        for j in 0..CAUSAL_P {
            xp.set(&[t, j], x.at(&[t, j]) + rng.random_range(-2.0..2.0));
        }
        let y = f(&xp)?;
        for s in 0..CAUSAL_L {
            let d = y.row(s).iter().zip(base.row(s)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if s < t {
                before = before.max(d);
            } else if s > t {
                after = after.max(d);
            }
        }
    }
    Ok(Leak { before, after })
}

fn causality() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut checked = Vec::new();
    let mut record = |name: &str, leak: &Leak, per_token: bool, ok: &mut bool| {
        let leaked = if per_token { leak.before.max(leak.after) } else { leak.before };
        worst = worst.max(leaked);
        *ok &= leaked <= 1e-12;
        checked.push(name.to_string());
    };

    for variant in Variant::ALL {
        let mut store = ParamStore::new();
        let mut ranges = RangeSet::new();
        let cfg = BlockConfig::new(variant, CAUSAL_P, CAUSAL_L);
        let block = Block::new(&mut store, &mut ranges, "b", cfg, &mut rng)?;
        let leak = leak_trials(&mut rng, |x| eval(&store, x, &|b, v| block.forward(b, v, None)))?;
        record(&format!("block:{variant}"), &leak, false, &mut ok);
    }

    let cfg = BlockConfig::new(Variant::CofrgenetU, CAUSAL_P, CAUSAL_L);
    {
        let (mut store, mut ranges) = (ParamStore::new(), RangeSet::new());
        let m = CAttnU::new(&mut store, &mut ranges, "u", &cfg, &mut rng)?;
        let leak = leak_trials(&mut rng, |x| eval(&store, x, &|b, v| m.forward(b, v, None)))?;
        record("cattnu", &leak, false, &mut ok);
    }
    {
        let (mut store, mut ranges) = (ParamStore::new(), RangeSet::new());
        let m = CAttnM::new(&mut store, &mut ranges, "m", &cfg, &mut rng)?;
        let leak = leak_trials(&mut rng, |x| eval(&store, x, &|b, v| m.forward(b, v, None)))?;
        record("cattnm", &leak, false, &mut ok);
    }
    {
        let mut store = ParamStore::new();
        let m = MultiHeadAttention::new(&mut store, "a", CAUSAL_P, cfg.heads, &mut rng)?;
        let leak = leak_trials(&mut rng, |x| eval(&store, x, &|b, v| m.forward(b, v)))?;
        record("attention", &leak, false, &mut ok);
    }
    {
        let (mut store, mut ranges) = (ParamStore::new(), RangeSet::new());
        let m = Cffn::new(&mut store, &mut ranges, "f", &cfg, &mut rng)?;
        let leak = leak_trials(&mut rng, |x| eval(&store, x, &|b, v| m.forward(b, v, None)))?;
        record("cffn (per-token)", &leak, true, &mut ok);
    }
    {
        let mut store = ParamStore::new();
        let m = Mlp::new(&mut store, "f", CAUSAL_P, cfg.alpha, &mut rng);
        let leak = leak_trials(&mut rng, |x| eval(&store, x, &|b, v| m.forward(b, v)))?;
        record("ffn (per-token)", &leak, true, &mut ok);
    }

    // the assembled 2-layer model, perturbing token ids
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            n_layers: 2,
            p: CAUSAL_P,
            seq_len: CAUSAL_L,
            ..ModelConfig::default()
        };
        let lm = LanguageModel::new(&cfg, &mut rng)?;
        let ids: Vec<usize> = (0..CAUSAL_L).map(|_| rng.random_range(0..256)).collect();
        let base = lm.logits(&ids)?;
        let mut before = 0.0f64;
        let mut moved = true;
        for _ in 0..CAUSAL_TRIALS {
            let t = rng.random_range(0..CAUSAL_L);
            let mut changed = ids.clone();
            changed[t] = (ids[t] + rng.random_range(1..256)) % 256;
            let y = lm.logits(&changed)?;
            for s in 0..t {
                let d = y.row(s).iter().zip(base.row(s)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                before = before.max(d);
            }
            moved &= y.row(t) != base.row(t);
        }
        ok &= moved;
        record(&format!("model:{variant}"), &Leak { before, after: 0.0 }, false, &mut ok);
    }

    Ok(Outcome::new(
        ok,
        format!(
            "max leak {worst:.1e} <= 1e-12 at p={CAUSAL_P} l={CAUSAL_L}, {CAUSAL_TRIALS} trials each: {}",
            checked.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------- 6

fn parameter_direction() -> Result<Outcome> {
    let base = ModelConfig {
        p: 64,
        seq_len: 64,
        alpha: 4,
        ladders: 8,
        depth: 5,
        n_layers: 4,
        ..ModelConfig::default()
    };
    let count = |variant| count_model_parameters(&ModelConfig { variant, ..base.clone() });
    let (full, f_only, gpt) = (count(Variant::Cofrgenet)?, count(Variant::CofrgenetF)?, count(Variant::Gpt)?);
    let ratio = full as f64 / gpt as f64;

    let shape = ScaleShape {
        p: base.p,
        l: base.seq_len,
        ladders: base.ladders,
        depth: base.depth,
        alpha: base.alpha,
        heads: base.heads,
    };
    let mut scales_ok = true;
    let mut scale_parts = Vec::new();
    for kind in BlockKind::ALL {
        let c = count_parameters(kind, &shape)?;
        scales_ok &= (0.5..=2.0).contains(&c.ratio());
        scale_parts.push(format!("{} {:.2}", kind.name(), c.ratio()));
    }
    Ok(Outcome::new(
        full < f_only && f_only < gpt && ratio <= 0.75 && scales_ok,
        format!(
            "cofrgenet {full} < cofrgenet-f {f_only} < gpt {gpt}, ratio {ratio:.3} <= 0.75; exact/scale in [0.5, 2]: {}",
            scale_parts.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn performance_direction() -> Result<Outcome> {
    let cfg = BenchConfig::default();
    let r = verify::run_bench(&cfg)?;
    Ok(Outcome::new(
        r.divisions_match() && r.continuant_faster(),
        format!(
            "d={} batch {}x{}: continuant {:.3} ms vs literal {:.3} ms (median of {}), speedup {:.2}x; divisions {} vs {}",
            cfg.depth,
            cfg.batch,
            cfg.ladders,
            r.continuant.timing.total * 1e3,
            r.literal.timing.total * 1e3,
            cfg.runs,
            r.speedup(),
            r.continuant.divisions,
            r.literal.divisions
        ),
    ))
}

// ---------------------------------------------------------------- 8, 9

const CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/kjv_pentateuch.txt");

struct Trained {
    scheduled: Trainer,
    corpus: Corpus,
}

/// Trains one arm; with `check_frozen` every parameter is compared bit for
/// bit with its initial value at every iteration up to and including its
/// unfreeze iteration.
fn train_arm(corpus: &Corpus, schedule: bool, check_frozen: bool) -> Result<(Trainer, bool)> {
    let mut tr = Trainer::new(TrainConfig {
        schedule,
        ..TrainConfig::default()
    })?;
    let init = tr.model().store.clone();
    let mask = tr.config().freeze_mask();
    let mut frozen_ok = true;
    while tr.iteration() < tr.config().iters {
        if check_frozen {
            let i = tr.iteration();
            for id in init.ids() {
                if i <= mask.activation(init.info(id).group) {
                    let (now, then) = (tr.model().store.get(id), init.get(id));
                    frozen_ok &= now.data().iter().zip(then.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                }
            }
        }
        tr.step(corpus.train())?;
    }
    Ok((tr, frozen_ok))
}

fn training_smoke() -> Result<(Outcome, Option<Trained>)> {
    let started = Instant::now();
    let corpus = Corpus::load(CORPUS)?;
    let (scheduled, frozen_ok) = train_arm(&corpus, true, true)?;
    let val = scheduled.eval_loss(corpus.val())?;
    let (ablation, _) = train_arm(&corpus, false, false)?;
    let ablation_val = ablation.eval_loss(corpus.val())?;
    let elapsed = started.elapsed();
    let (uniform, unigram) = (256f64.ln(), corpus.unigram_entropy());
    let outcome = Outcome::new(
        val < uniform && val < unigram && frozen_ok && ablation_val.is_finite() && elapsed < Duration::from_secs(900),
        format!(
            "{} KiB corpus, 2-layer p=64 cofrgenet, {} iters: val loss {val:.4} < uniform {uniform:.4} and unigram {unigram:.4}; \
             frozen bit-identity {}; schedule-off arm val loss {ablation_val:.4}; {:.0}s < 900s",
            corpus.ids().len() / 1024,
            scheduled.iteration(),
            if frozen_ok { "held" } else { "VIOLATED" },
            secs(elapsed)
        ),
    );
    Ok((outcome, Some(Trained { scheduled, corpus })))
}

/// Pushes `rows` through `bank` in clipping mode and counts outputs that
/// fall outside the tracker's recorded range.
fn clip_violations(bank: &LadderBank, store: &ParamStore, ranges: &mut RangeSet, x: Tensor) -> Result<(usize, usize)> {
    let tape = Tape::new();
    let bound = store.bind_all(&tape);
    let z = bank.forward(&bound, tape.constant(x), Some(ranges))?.value();
    let tracker = ranges.get(bank.tracker());
    let (lo, hi) = (tracker.min(), tracker.max());
    let mut bad = 0;
    for row in z.data().chunks_exact(bank.ladders()) {
        for (j, v) in row.iter().enumerate() {
            if !(lo[j] <= *v && *v <= hi[j]) {
                bad += 1;
            }
        }
    }
    Ok((z.len() / bank.ladders(), bad))
}

fn range_clipping(trained: &mut Trained) -> Result<Outcome> {
    let lm = trained.scheduled.model_mut();
    lm.ranges.set_mode(RangeMode::Clipping);
    let p = lm.config().p;
    let banks: Vec<LadderBank> = lm
        .model
        .blocks()
        .iter()
        .flat_map(|b| {
            let attn = match b.attention() {
                Attention::CAttnM(m) => Some(m.bank().clone()),
                _ => None,
            };
            let ffn = match b.feed_forward() {
                FeedForward::Cffn(f) => Some(f.ensemble().bank().clone()),
                _ => None,
            };
            attn.into_iter().chain(ffn)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let (mut evaluations, mut violations) = (0usize, 0usize);
    for bank in &banks {
        // in-distribution scale, then increasingly far out of distribution
        for (rows, std) in [(4000, 1.0), (2000, 10.0), (2000, 1e3), (1000, 1e6), (1000, 1e12)] {
            let (n, bad) = clip_violations(bank, &lm.store, &mut lm.ranges, Tensor::randn(&[rows, p], std, &mut rng))?;
            evaluations += n;
            violations += bad;
        }
        // inputs that drive the first partial denominator of every ladder to zero
        let w1 = lm.store.get(bank.weight(1)).clone();
        let b1 = bank.bias(1).map(|b| lm.store.get(b).clone());
        let mut adversarial = Tensor::zeros(&[bank.ladders() * 100, p]);
        for j in 0..bank.ladders() {
            let col: Vec<f64> = (0..p).map(|i| w1.at(&[i, j])).collect();
            let norm2: f64 = col.iter().map(|c| c * c).sum();
            let bias = b1.as_ref().map_or(0.0, |b| b.data()[j]);
            for r in 0..100 {
                let offset = rng.random_range(-1e-3..1e-3);
                let row = j * 100 + r;
                for i in 0..p {
                    adversarial.set(&[row, i], (offset - bias) * col[i] / norm2);
                }
            }
        }
        let (n, bad) = clip_violations(bank, &lm.store, &mut lm.ranges, adversarial)?;
        evaluations += n;
        violations += bad;
    }
    // end-to-end generation in clipping mode must also stay finite
    let logits = lm.logits_tracked(&trained.corpus.val()[..64])?;
    Ok(Outcome::new(
        violations == 0 && evaluations >= 10_000 && logits.all_finite(),
        format!(
            "{evaluations} clipped evaluations over {} trained ladder banks (std 1 .. 1e12 and pole-seeking inputs): {violations} outside [min, max]",
            banks.len()
        ),
    ))
}

// ---------------------------------------------------------------- 10

fn small_run() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            p: 32,
            seq_len: 32,
            ladders: 4,
            depth: 3,
            ..ModelConfig::default()
        },
        iters: 60,
        batch: 4,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn metrics_csv(cfg: TrainConfig, ids: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    Trainer::new(cfg)?.run(ids, Some(&mut out))?;
    Ok(out)
}

fn determinism(dir: &Path) -> Result<Outcome> {
    let corpus = Corpus::load(CORPUS)?;
    let ids = &corpus.train()[..100_000];
    let (a, b) = (metrics_csv(small_run(), ids)?, metrics_csv(small_run(), ids)?);
    let csv_identical = a == b && a.len() > 1000;

    // interrupt halfway, persist, restore, finish: must equal the straight run
    let mut first = Trainer::new(small_run())?;
    for _ in 0..30 {
        first.step(ids)?;
    }
    let path = dir.join("halfway.cfgn");
    save_checkpoint(&first, &path)?;
    let mut resumed = load_checkpoint(&path)?;
    let probe: Vec<usize> = corpus.val()[..32].to_vec();
    let (x, y) = (first.model().logits(&probe)?, resumed.model().logits(&probe)?);
    let logits_exact = x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits());
    let bytes_exact = checkpoint_bytes(&resumed)? == std::fs::read(&path)?;
    let mut tail = Vec::new();
    resumed.run(ids, Some(&mut tail))?;
    let straight = String::from_utf8(a).expect("utf-8 csv");
    let resumed_rows: Vec<&str> = std::str::from_utf8(&tail).expect("utf-8 csv").lines().collect();
    let resume_exact = straight.lines().skip(1 + 30).eq(resumed_rows.iter().copied());
    let truncated_rejected = checkpoint_from_bytes(&std::fs::read(&path)?[..100]).is_err();

    Ok(Outcome::new(
        csv_identical && logits_exact && bytes_exact && resume_exact && truncated_rejected,
        format!(
            "two seeded runs byte-identical CSVs: {csv_identical}; reload logits bit-exact: {logits_exact}; \
             re-serialisation identical: {bytes_exact}; resumed trajectory equals uninterrupted: {resume_exact}"
        ),
    ))
}

// ----------------------------------------------------------------

fn report(n: usize, name: &str, outcome: Result<Outcome>, failures: &mut usize) {
    match outcome {
        Ok(o) => {
            println!("[{}] {n:>2}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
            if !o.passed {
                *failures += 1;
            }
        }
        Err(e) => {
            println!("[FAIL] {n:>2}. {name}: error: {e}");
            *failures += 1;
        }
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    report(1, "gradient exactness", gradient_exactness(), &mut failures);
    report(2, "continuant identity", continuant_identity(), &mut failures);
    report(3, "determinant form", determinant_form(), &mut failures);
    report(4, "continuant/literal equivalence", literal_equivalence(), &mut failures);
    report(5, "causality", causality(), &mut failures);
    report(6, "parameter direction", parameter_direction(), &mut failures);
    report(7, "performance direction", performance_direction(), &mut failures);
    let trained = match training_smoke() {
        Ok((outcome, trained)) => {
            report(8, "training smoke with dyadic schedule", Ok(outcome), &mut failures);
            trained
        }
        Err(e) => {
            report(8, "training smoke with dyadic schedule", Err(e), &mut failures);
            None
        }
    };
    match trained {
        Some(mut t) => report(9, "range clipping", range_clipping(&mut t), &mut failures),
        None => {
            println!("[FAIL]  9. range clipping: no trained model");
            failures += 1;
        }
    }
    let dir = tempfile::tempdir().expect("temporary directory");
    report(10, "determinism and persistence", determinism(dir.path()), &mut failures);

    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
