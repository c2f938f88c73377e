use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};

use cofrgenet::blocks::{count_parameters, BlockKind, ScaleShape, Variant};
use cofrgenet::model::{count_model_parameters, LanguageModel, ModelConfig};
use cofrgenet::training::{self, load_checkpoint, save_checkpoint, Corpus, Trainer};
use cofrgenet::verify::{self, BenchConfig, GradSweepConfig};

use crate::config::RunConfig;

fn eval_slice<'a>(corpus: &'a Corpus, cfg: &RunConfig) -> &'a [usize] {
    let val = corpus.val();
    match cfg.data.eval_tokens {
        0 => val,
        n => &val[..n.min(val.len())],
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<bool> {
    let corpus = Corpus::load(&cfg.data.corpus).with_context(|| format!("loading {}", cfg.data.corpus.display()))?;
    let mut trainer = match resume {
        Some(path) => {
            let mut t = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            t.extend_to(cfg.train.iters);
            println!("resumed at iteration {} of {}", t.iteration(), t.config().iters);
            t
        }
        None => Trainer::new(cfg.train_config())?,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let metrics_path = out.join("metrics.csv");
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;
    let mut metrics = BufWriter::new(file);

    let model_cfg = &trainer.config().model;
    println!(
        "variant {} | {} layers | p {} | seq_len {} | parameters {}",
        model_cfg.variant,
        model_cfg.n_layers,
        model_cfg.p,
        model_cfg.seq_len,
        trainer.model().parameter_count()
    );
    let started = Instant::now();
    let reports = trainer.run(corpus.train(), Some(&mut metrics))?;
    metrics.flush()?;
    if let Some(last) = reports.last() {
        println!(
            "trained {} iterations in {:.1}s, last batch loss {:.4}",
            reports.len(),
            started.elapsed().as_secs_f64(),
            last.loss
        );
    }
    let val = trainer.eval_loss(eval_slice(&corpus, cfg))?;
    println!("val loss {val:.4} nats (uniform {:.4}, unigram {:.4})", 256f64.ln(), corpus.unigram_entropy());
    let ckpt = out.join("checkpoint.cfgn");
    save_checkpoint(&trainer, &ckpt)?;
    println!("wrote {} and {}", metrics_path.display(), ckpt.display());
    Ok(true)
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path) -> Result<bool> {
    let trainer = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let corpus = Corpus::load(&cfg.data.corpus)?;
    let ids = eval_slice(&corpus, cfg);
    let loss = trainer.eval_loss(ids)?;
    println!(
        "iteration {} | {} validation tokens | loss {loss:.4} nats | perplexity {:.3}",
        trainer.iteration(),
        ids.len(),
        loss.exp()
    );
    Ok(true)
}

pub fn generate(
    cfg: &RunConfig,
    checkpoint: &Path,
    prompt: Option<String>,
    tokens: Option<usize>,
    temperature: Option<f64>,
) -> Result<bool> {
    let mut lm: LanguageModel = load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?
        .into_model();
    let prompt = prompt.unwrap_or_else(|| cfg.generate.prompt.clone());
    let ids: Vec<usize> = prompt.bytes().map(usize::from).collect();
    let out = training::generate(
        &mut lm,
        &ids,
        tokens.unwrap_or(cfg.generate.tokens),
        temperature.unwrap_or(cfg.generate.temperature),
        cfg.train.seed,
    )?;
    let bytes: Vec<u8> = out.iter().map(|&t| t as u8).collect();
    println!("{}", String::from_utf8_lossy(&bytes));
    Ok(true)
}

pub fn gradcheck(cfg: &RunConfig) -> Result<bool> {
    let mut ok = true;
    for &depth in &cfg.check.depths {
        let sweep = GradSweepConfig {
            draws: cfg.check.draws,
            seed: cfg.check.seed.wrapping_add(depth as u64),
            ..GradSweepConfig::new(depth)
        };
        let r = verify::cf_gradient_sweep(&sweep, verify::analytic_cf_grad)?;
        println!(
            "{} {:<32} max rel err {:.3e} (<= {:.0e}, {} partials)",
            verdict(r.passed()),
            r.component,
            r.max_rel_err,
            r.tolerance,
            r.checked
        );
        ok &= r.passed();
    }
    for r in verify::component_suite(cfg.check.seed)? {
        println!(
            "{} {:<32} max rel err {:.3e} (<= {:.0e}, {} parameters)",
            verdict(r.passed()),
            r.component,
            r.max_rel_err,
            r.tolerance,
            r.checked
        );
        ok &= r.passed();
    }
    Ok(ok)
}

pub fn identities(cfg: &RunConfig) -> Result<bool> {
    let (draws, seed) = (cfg.check.draws, cfg.check.seed);
    let mut ok = true;
    for r in [verify::identity_sweep(draws, 8, seed)?, verify::determinant_sweep(draws, 8, seed)?] {
        println!(
            "{} {:<36} max relative residual {:.3e} (<= {:.0e}, {} cases)",
            verdict(r.passed()),
            r.name,
            r.max_relative,
            r.tolerance,
            r.cases
        );
        ok &= r.passed();
    }
    for &depth in &cfg.check.depths {
        let r = verify::literal_equivalence_sweep(draws * 10, depth, seed)?;
        println!(
            "{} {:<36} max relative diff {:.3e} (<= {:.0e}), divisions {} vs {}",
            verdict(r.passed()),
            r.sweep.name,
            r.sweep.max_relative,
            r.sweep.tolerance,
            r.continuant_divisions,
            r.literal_divisions
        );
        ok &= r.passed();
    }
    Ok(ok)
}

pub fn params(cfg: &RunConfig) -> Result<bool> {
    let m = &cfg.model;
    let shape = ScaleShape {
        p: m.p,
        l: m.seq_len,
        ladders: m.ladders,
        depth: m.depth,
        alpha: m.alpha,
        heads: m.heads,
    };
    println!(
        "components at p={} l={} L={} d={} alpha={}",
        shape.p, shape.l, shape.ladders, shape.depth, shape.alpha
    );
    println!("{:<10} {:>10} {:>10} {:>7}  formula", "component", "exact", "scale", "ratio");
    for kind in BlockKind::ALL {
        let c = count_parameters(kind, &shape)?;
        println!(
            "{:<10} {:>10} {:>10} {:>7.3}  {}",
            kind.name(),
            c.exact,
            c.scale,
            c.ratio(),
            kind.formula()
        );
    }
    println!("\nwhole models ({} layers, vocab {})", m.n_layers, m.vocab);
    let count = |variant| count_model_parameters(&ModelConfig { variant, ..m.clone() });
    let baseline = count(Variant::Gpt)?;
    for variant in Variant::ALL {
        let n = count(variant)?;
        println!("{:<12} {:>10}  {:.3} of gpt", variant.name(), n, n as f64 / baseline as f64);
    }
    Ok(true)
}

pub fn bench(cfg: &RunConfig) -> Result<bool> {
    let b = &cfg.bench;
    let bc = BenchConfig {
        depth: b.depth,
        batch: b.batch,
        ladders: b.ladders,
        warmup: b.warmup,
        runs: b.runs,
        seed: cfg.check.seed,
    };
    let r = verify::run_bench(&bc)?;
    println!(
        "d={} batch {}x{} | warmup {} | median of {} runs, one thread",
        bc.depth, bc.batch, bc.ladders, bc.warmup, bc.runs
    );
    for arm in [&r.continuant, &r.literal] {
        println!(
            "{:<10} forward {:>9.3} ms  backward {:>9.3} ms  total {:>9.3} ms  divisions {}",
            arm.name,
            arm.timing.forward * 1e3,
            arm.timing.backward * 1e3,
            arm.timing.total * 1e3,
            arm.divisions
        );
    }
    println!("speedup (literal / continuant) {:.2}x", r.speedup());
    let counts = r.divisions_match();
    println!("{} division counts: {} vs {}", verdict(counts), r.continuant.divisions, r.literal.divisions);
    let mut ok = counts;
    if b.require_faster && bc.depth > 1 {
        println!("{} continuant arm faster", verdict(r.continuant_faster()));
        ok &= r.continuant_faster();
    }
    Ok(ok)
}
