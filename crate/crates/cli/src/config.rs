//! Run configuration: a TOML file with dotted sections, overridable with
//! `--set section.key=value`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use cofrgenet::model::ModelConfig;
use cofrgenet::training::{AdamWConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub corpus: PathBuf,
    /// Validation tokens scored by `train` and `eval` (0 = all).
    pub eval_tokens: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("data/kjv_pentateuch.txt"),
            eval_tokens: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iters: u64,
    pub batch: usize,
    pub seed: u64,
    pub schedule: bool,
    pub eval_stride: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iters: t.iters,
            batch: t.batch,
            seed: t.seed,
            schedule: t.schedule,
            eval_stride: t.eval_stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub prompt: String,
    pub tokens: usize,
    pub temperature: f64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            prompt: "In the beginning".into(),
            tokens: 200,
            temperature: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    /// Random draws per depth for the gradient and identity sweeps.
    pub draws: usize,
    pub depths: Vec<usize>,
    pub seed: u64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            draws: 1000,
            depths: cofrgenet::ladders::DEPTH_GRID.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub depth: usize,
    pub batch: usize,
    pub ladders: usize,
    pub warmup: usize,
    pub runs: usize,
    /// Fail when the continuant arm is not faster (only for depth > 1).
    pub require_faster: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = cofrgenet::verify::BenchConfig::default();
        Self {
            depth: b.depth,
            batch: b.batch,
            ladders: b.ladders,
            warmup: b.warmup,
            runs: b.runs,
            require_faster: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub optim: AdamWConfig,
    pub train: TrainSection,
    pub generate: GenerateSection,
    pub check: CheckSection,
    pub bench: BenchSection,
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<toml::Table>().with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            optim: self.optim,
            iters: self.train.iters,
            batch: self.train.batch,
            seed: self.train.seed,
            schedule: self.train.schedule,
            eval_stride: self.train.eval_stride,
        }
    }
}

/// `a.b.c=value`; the value is parsed as a TOML value, falling back to a
/// plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("bad key `{key}` in override");
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{p}` in `{key}` is not a section"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Every configuration key with a one-line description.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("data.corpus", "path of the training text (bytes are tokens)"),
    ("data.eval_tokens", "validation tokens scored after training and by eval (0 = all)"),
    ("model.variant", "gpt | cofrgenet-a | cofrgenet-f | cofrgenet | cofrgenet-u"),
    ("model.n_layers", "number of residual blocks"),
    ("model.p", "embedding width"),
    ("model.seq_len", "context length (l_max of every block)"),
    ("model.vocab", "vocabulary size, at most 256 (byte tokens)"),
    ("model.heads", "heads of baseline attention"),
    ("model.alpha", "expansion factor of the baseline feed-forward network"),
    ("model.ladders", "ladders per ensemble (L)"),
    ("model.depth", "continued-fraction depth (d)"),
    ("model.epsilon", "pole guard: denominators are kept at magnitude >= epsilon"),
    ("model.kernel", "continuant (one division) | literal (d divisions)"),
    ("model.gate", "Cffn gate non-linearity: sigmoid | silu"),
    ("optim.lr", "learning rate (constant)"),
    ("optim.beta1", "first-moment decay"),
    ("optim.beta2", "second-moment decay"),
    ("optim.eps", "denominator offset of the Adam update"),
    ("optim.weight_decay", "decoupled weight decay, matrices only"),
    ("optim.grad_clip", "global gradient-norm bound (<= 0 disables)"),
    ("train.iters", "total iterations t; depth k unfreezes at ceil(t (1 - 2^-k))"),
    ("train.batch", "sequences per step"),
    ("train.seed", "seed of initialisation and batch sampling"),
    ("train.schedule", "dyadic unfreezing of ladder depths (false trains all from step 0)"),
    ("train.eval_stride", "stride of sliding-window evaluation, 1..=seq_len"),
    ("generate.prompt", "prompt text"),
    ("generate.tokens", "bytes to generate"),
    ("generate.temperature", "sampling temperature; 0 is greedy"),
    ("check.draws", "random draws per depth in gradcheck and identities"),
    ("check.depths", "depths swept by gradcheck"),
    ("check.seed", "seed of the check sweeps"),
    ("bench.depth", "continued-fraction depth"),
    ("bench.batch", "batch rows"),
    ("bench.ladders", "ladders per row"),
    ("bench.warmup", "untimed warm-up runs"),
    ("bench.runs", "timed runs (median reported)"),
    ("bench.require_faster", "fail unless the continuant arm is faster (depth > 1)"),
];

/// Flattened `(key, value)` pairs of the default configuration.
pub fn default_entries() -> Vec<(String, String)> {
    let value = toml::Value::try_from(RunConfig::default()).expect("default config serializes");
    let mut out = Vec::new();
    if let toml::Value::Table(sections) = value {
        for (section, body) in sections {
            if let toml::Value::Table(keys) = body {
                for (k, v) in keys {
                    out.push((format!("{section}.{k}"), v.to_string()));
                }
            }
        }
    }
    out
}

/// The generated configuration reference: every key, its default and
/// its meaning, as a valid TOML document.
pub fn reference() -> String {
    let entries = default_entries();
    let mut out = String::from("# cofrgenet configuration reference (all keys, with defaults)\n");
    let mut section = "";
    for (key, doc) in KEY_DOCS {
        let (s, k) = key.split_once('.').expect("dotted key");
        if s != section {
            out.push_str(&format!("\n[{s}]\n"));
            section = s;
        }
        let default = entries
            .iter()
            .find(|(e, _)| e == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or("\"\"");
        out.push_str(&format!("# {doc}\n{k} = {default}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_documented() {
        let documented: Vec<&str> = KEY_DOCS.iter().map(|(k, _)| *k).collect();
        for (key, _) in default_entries() {
            assert!(documented.contains(&key.as_str()), "{key} undocumented");
        }
        assert_eq!(documented.len(), default_entries().len());
    }

    #[test]
    fn reference_parses_back_to_defaults() {
        let cfg: RunConfig = toml::from_str(&reference()).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = RunConfig::load(None, &["model.p=32".into(), "model.variant=gpt".into(), "train.schedule=false".into()]).unwrap();
        assert_eq!(cfg.model.p, 32);
        assert_eq!(cfg.model.variant, cofrgenet::blocks::Variant::Gpt);
        assert!(!cfg.train.schedule);
        assert!(RunConfig::load(None, &["model.width=3".into()]).is_err());
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
        assert!(RunConfig::load(None, &["model.variant=gpt5".into()]).is_err());
    }
}
