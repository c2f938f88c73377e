use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{BlockConfig, CAttnM, CAttnU, Cffn, Mlp, MultiHeadAttention, Variant};
use crate::error::{Error, Result};
use crate::ladders::RangeSet;
use crate::params::ParamStore;

/// Components with a parameter-scale formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BlockKind {
    CAttnU,
    CAttnM,
    Cffn,
    Attention,
    Ffn,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::CAttnU,
        BlockKind::CAttnM,
        BlockKind::Cffn,
        BlockKind::Attention,
        BlockKind::Ffn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::CAttnU => "cattnu",
            BlockKind::CAttnM => "cattnm",
            BlockKind::Cffn => "cffn",
            BlockKind::Attention => "attention",
            BlockKind::Ffn => "ffn",
        }
    }

    /// Printable form of the scale formula.
    pub fn formula(self) -> &'static str {
        match self {
            BlockKind::CAttnU => "l(2d+l+1)",
            BlockKind::CAttnM => "L(p+l)+p^2",
            BlockKind::Cffn => "Lp(d+1)+2p^2",
            BlockKind::Attention => "4p^2",
            BlockKind::Ffn => "2*alpha*p^2",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Dimensions entering the scale formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ScaleShape {
    pub p: usize,
    pub l: usize,
    pub ladders: usize,
    pub depth: usize,
    pub alpha: usize,
    pub heads: usize,
}

impl ScaleShape {
    pub fn scale(&self, kind: BlockKind) -> usize {
        let ScaleShape {
            p, l, ladders, depth, alpha, ..
        } = *self;
        match kind {
            BlockKind::CAttnU => l * (2 * depth + l + 1),
            BlockKind::CAttnM => ladders * (p + l) + p * p,
            BlockKind::Cffn => ladders * p * (depth + 1) + 2 * p * p,
            BlockKind::Attention => 4 * p * p,
            BlockKind::Ffn => 2 * alpha * p * p,
        }
    }

    fn block_config(&self) -> BlockConfig {
        let mut cfg = BlockConfig::new(Variant::Gpt, self.p, self.l);
        cfg.ladders = self.ladders;
        cfg.depth = self.depth;
        cfg.alpha = self.alpha;
        cfg.heads = self.heads;
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParameterCount {
    pub kind: BlockKind,
    /// Every live stored entry of the constructed component.
    pub exact: usize,
    /// The scale formula evaluated at the same shape.
    pub scale: usize,
}

impl ParameterCount {
    pub fn ratio(&self) -> f64 {
        self.exact as f64 / self.scale as f64
    }
}

/// Builds the component in a fresh store and counts its live entries.
pub fn count_parameters(kind: BlockKind, shape: &ScaleShape) -> Result<ParameterCount> {
    let cfg = shape.block_config();
    let mut store = ParamStore::new();
    let mut ranges = RangeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match kind {
        BlockKind::CAttnU => {
            CAttnU::new(&mut store, &mut ranges, "c", &cfg, &mut rng)?;
        }
        BlockKind::CAttnM => {
            CAttnM::new(&mut store, &mut ranges, "c", &cfg, &mut rng)?;
        }
        BlockKind::Cffn => {
            Cffn::new(&mut store, &mut ranges, "c", &cfg, &mut rng)?;
        }
        BlockKind::Attention => {
            MultiHeadAttention::new(&mut store, "c", cfg.p, cfg.heads, &mut rng)?;
        }
        BlockKind::Ffn => {
            if cfg.alpha == 0 {
                return Err(Error::Config("alpha must be positive".into()));
            }
            Mlp::new(&mut store, "c", cfg.p, cfg.alpha, &mut rng);
        }
    }
    Ok(ParameterCount {
        kind,
        exact: store.count(),
        scale: shape.scale(kind),
    })
}
