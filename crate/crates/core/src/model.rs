//! Byte-level causal language model: token and position embeddings, a
//! stack of residual blocks, a final norm and a linear head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, CfKernel, Tensor, Var};
use crate::blocks::{Block, BlockConfig, GateActivation, LayerNorm, Linear, Variant};
use crate::cfcore::{PoleGuard, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::ladders::RangeSet;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

pub const BYTE_VOCAB: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_layers: usize,
    pub p: usize,
    /// Context length; also the `l_max` of every block.
    pub seq_len: usize,
    pub vocab: usize,
    pub heads: usize,
    pub alpha: usize,
    pub ladders: usize,
    pub depth: usize,
    pub epsilon: f64,
    pub kernel: CfKernel,
    pub gate: GateActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cofrgenet,
            n_layers: 2,
            p: 64,
            seq_len: 64,
            vocab: BYTE_VOCAB,
            heads: 4,
            alpha: 4,
            ladders: 8,
            depth: 5,
            epsilon: DEFAULT_EPSILON,
            kernel: CfKernel::Continuant,
            gate: GateActivation::default(),
        }
    }
}

impl ModelConfig {
    pub fn block_config(&self) -> Result<BlockConfig> {
        let mut cfg = BlockConfig::new(self.variant, self.p, self.seq_len);
        cfg.heads = self.heads;
        cfg.alpha = self.alpha;
        cfg.ladders = self.ladders;
        cfg.depth = self.depth;
        cfg.guard = PoleGuard::new(self.epsilon)?;
        cfg.kernel = self.kernel;
        cfg.gate = self.gate;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.vocab == 0 || self.vocab > BYTE_VOCAB {
            return Err(Error::Config(format!(
                "need n_layers >= 1 and 1 <= vocab <= {BYTE_VOCAB} (got {} and {})",
                self.n_layers, self.vocab
            )));
        }
        self.block_config().map(|_| ())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    tokens: ParamId,
    positions: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    head: Linear,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, ranges: &mut RangeSet, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let block_cfg = cfg.block_config()?;
        cfg.validate()?;
        let tokens = store.add("tok_emb", ParamGroup::Linear, Tensor::randn(&[cfg.vocab, cfg.p], 0.02, rng));
        let positions = store.add("pos_emb", ParamGroup::Linear, Tensor::randn(&[cfg.seq_len, cfg.p], 0.02, rng));
        let blocks = (0..cfg.n_layers)
            .map(|i| Block::new(store, ranges, &format!("h{i}"), block_cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, "ln_f", cfg.p);
        let head = Linear::new(store, "head", cfg.p, cfg.vocab, 0.02, rng);
        Ok(Self {
            cfg: cfg.clone(),
            tokens,
            positions,
            blocks,
            norm,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Final hidden states `[batch, len, p]` for `ids` laid out row-major
    /// as `batch` sequences of `len` tokens.
    pub fn hidden<'t>(
        &self,
        bound: &Bound<'t>,
        ids: &[usize],
        batch: usize,
        len: usize,
        mut ranges: Option<&mut RangeSet>,
    ) -> Result<Var<'t>> {
        if len == 0 || len > self.cfg.seq_len {
            return Err(Error::SequenceTooLong {
                len,
                max: self.cfg.seq_len,
            });
        }
        let tok = ops::embedding(bound.var(self.tokens), ids, &[batch, len])?;
        let pos_ids: Vec<usize> = (0..len).collect();
        let pos = ops::embedding(bound.var(self.positions), &pos_ids, &[len])?;
        let mut x = ops::add(tok, pos)?;
        for block in &self.blocks {
            x = block.forward(bound, x, ranges.as_deref_mut())?;
        }
        self.norm.forward(bound, x)
    }

    /// Next-token logits `[batch, len, vocab]`.
    pub fn forward<'t>(
        &self,
        bound: &Bound<'t>,
        ids: &[usize],
        batch: usize,
        len: usize,
        ranges: Option<&mut RangeSet>,
    ) -> Result<Var<'t>> {
        let h = self.hidden(bound, ids, batch, len, ranges)?;
        self.head.forward(bound, h)
    }
}

/// A model together with the parameters and range trackers it reads.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub model: Model,
    pub store: ParamStore,
    pub ranges: RangeSet,
}

impl LanguageModel {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut ranges = RangeSet::new();
        let model = Model::new(&mut store, &mut ranges, cfg, rng)?;
        Ok(Self { model, store, ranges })
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    /// Logits for one sequence, `[len, vocab]`, without recording or
    /// clipping ranges.
    pub fn logits(&self, ids: &[usize]) -> Result<Tensor> {
        let tape = crate::autodiff::Tape::new();
        let bound = self.store.bind(&tape, |_| false);
        let out = self.model.forward(&bound, ids, 1, ids.len(), None)?.value();
        let v = self.config().vocab;
        (*out).clone().reshaped(&[ids.len(), v])
    }

    /// Like [`LanguageModel::logits`] but passes ladder outputs through the
    /// range trackers in their current mode.
    pub fn logits_tracked(&mut self, ids: &[usize]) -> Result<Tensor> {
        let tape = crate::autodiff::Tape::new();
        let bound = self.store.bind(&tape, |_| false);
        let out = self.model.forward(&bound, ids, 1, ids.len(), Some(&mut self.ranges))?.value();
        let v = self.config().vocab;
        (*out).clone().reshaped(&[ids.len(), v])
    }
}

/// Live parameter count of the model described by `cfg`.
pub fn count_model_parameters(cfg: &ModelConfig) -> Result<usize> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    Ok(LanguageModel::new(cfg, &mut rng)?.parameter_count())
}
