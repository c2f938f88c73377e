//! Causal language-model training with the dyadic unfreeze schedule.

mod checkpoint;
mod data;
mod eval;
mod optim;
mod schedule;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use data::{sample_batch, Corpus};
pub use eval::{evaluate_perplexity, strided_nll, token_nll};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::{unfreeze_iter, FreezeMask};

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Tape};
use crate::error::{Error, Result};
use crate::ladders::RangeMode;
use crate::model::{LanguageModel, ModelConfig};
use crate::params::ParamId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optim: AdamWConfig,
    /// Total iterations `t` of the schedule.
    pub iters: u64,
    pub batch: usize,
    pub seed: u64,
    /// Dyadic unfreezing of ladder depths; off trains everything from
    /// the start.
    pub schedule: bool,
    pub eval_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optim: AdamWConfig::default(),
            iters: 2000,
            batch: 16,
            seed: 0,
            schedule: true,
            eval_stride: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.eval_stride == 0 || self.eval_stride > self.model.seq_len {
            return Err(Error::Config(format!(
                "eval_stride must be in 1..={}",
                self.model.seq_len
            )));
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive (got {})", self.optim.lr)));
        }
        Ok(())
    }

    pub fn freeze_mask(&self) -> FreezeMask {
        FreezeMask::new(self.iters, self.schedule)
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Iteration that was just executed (0-based).
    pub iter: u64,
    pub loss: f64,
    pub lr: f64,
    pub active_depths: Vec<usize>,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "iter,loss,lr,active_depths";

    pub fn csv_row(&self) -> String {
        let depths = self
            .active_depths
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        format!("{},{},{},{}", self.iter, self.loss, self.lr, depths)
    }
}

/// Model, optimizer, iteration counter and sampling RNG.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    lm: LanguageModel,
    opt: AdamW,
    iter: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let lm = LanguageModel::new(&cfg.model, &mut rng)?;
        let opt = AdamW::new(cfg.optim, &lm.store);
        Ok(Self {
            cfg,
            lm,
            opt,
            iter: 0,
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &LanguageModel {
        &self.lm
    }

    pub fn model_mut(&mut self) -> &mut LanguageModel {
        &mut self.lm
    }

    pub fn into_model(self) -> LanguageModel {
        self.lm
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.opt
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub(crate) fn restore(&mut self, iter: u64, rng: ChaCha8Rng) {
        self.iter = iter;
        self.rng = rng;
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut LanguageModel, &mut AdamW) {
        (&mut self.lm, &mut self.opt)
    }

    /// Raises the iteration budget to `iters` (never lowers it). The
    /// dyadic schedule is recomputed for the new total.
    pub fn extend_to(&mut self, iters: u64) {
        self.cfg.iters = self.cfg.iters.max(iters);
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.cfg.freeze_mask().is_active(self.lm.store.info(id).group, self.iter)
    }

    pub fn active_depths(&self) -> Vec<usize> {
        self.cfg.freeze_mask().active_depths(self.iter, self.cfg.model.depth)
    }

    /// Samples a batch from `train_ids`, takes one optimizer step on the
    /// currently unfrozen groups and records ladder ranges.
    pub fn step(&mut self, train_ids: &[usize]) -> Result<StepReport> {
        let (batch, len) = (self.cfg.batch, self.cfg.model.seq_len);
        let (inputs, targets) = sample_batch(train_ids, batch, len, &mut self.rng)?;
        let mask = self.cfg.freeze_mask();
        let iter = self.iter;
        let LanguageModel { model, store, ranges } = &mut self.lm;
        ranges.set_mode(RangeMode::Recording);
        let tape = Tape::new();
        let bound = store.bind(&tape, |id| mask.is_active(store.info(id).group, iter));
        let logits = model.forward(&bound, &inputs, batch, len, Some(ranges))?;
        let loss = ops::cross_entropy(logits, &targets)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter,
                loss: value,
                ranges: ranges.summary(),
            });
        }
        let mut grads = tape.backward(loss)?;
        let mut active: Vec<(ParamId, _)> = store
            .ids()
            .filter_map(|id| grads.take(bound.var(id)).map(|g| (id, g)))
            .collect();
        self.opt.clip(&mut active);
        self.opt.step(store, &active);
        let report = StepReport {
            iter,
            loss: value,
            lr: self.cfg.optim.lr,
            active_depths: self.active_depths(),
        };
        self.iter += 1;
        Ok(report)
    }

    /// Runs until `iters` iterations are complete, writing one CSV row per
    /// step (header first when starting from iteration 0).
    pub fn run<W: Write>(&mut self, train_ids: &[usize], mut metrics: Option<&mut W>) -> Result<Vec<StepReport>> {
        if self.iter == 0 {
            if let Some(w) = metrics.as_deref_mut() {
                writeln!(w, "{}", StepReport::CSV_HEADER)?;
            }
        }
        let mut reports = Vec::new();
        while self.iter < self.cfg.iters {
            let r = self.step(train_ids)?;
            if let Some(w) = metrics.as_deref_mut() {
                writeln!(w, "{}", r.csv_row())?;
            }
            reports.push(r);
        }
        Ok(reports)
    }

    /// Mean next-token loss (nats) over `ids` with the configured stride.
    pub fn eval_loss(&self, ids: &[usize]) -> Result<f64> {
        Ok(evaluate_perplexity(&self.lm, ids, self.cfg.eval_stride)?.ln())
    }
}

/// Autoregressive byte generation with range trackers in clipping mode.
/// Temperature 0 is greedy; otherwise sampling uses a generator seeded
/// with `seed`.
pub fn generate(lm: &mut LanguageModel, prompt: &[usize], n_tokens: usize, temperature: f64, seed: u64) -> Result<Vec<usize>> {
    if prompt.is_empty() && n_tokens > 0 {
        return Err(Error::Config("generation needs a non-empty prompt".into()));
    }
    lm.ranges.set_mode(RangeMode::Clipping);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = lm.config().seq_len;
    let mut out = prompt.to_vec();
    for _ in 0..n_tokens {
        let ctx = &out[out.len().saturating_sub(window)..];
        let logits = lm.logits_tracked(ctx)?;
        let last = logits.row(ctx.len() - 1);
        let next = if temperature <= 0.0 {
            // first maximum, for determinism under ties
            last.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        } else {
            let mx = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = last.iter().map(|v| ((v - mx) / temperature).exp()).collect();
            WeightedIndex::new(&w)
                .map_err(|e| Error::Config(format!("sampling weights: {e}")))?
                .sample(&mut rng)
        };
        out.push(next);
    }
    Ok(out)
}
