//! The continued-fraction layer as a custom tape function.
//!
//! Forward runs the continuant recursion over the last axis and keeps the
//! tables; backward multiplies the upstream gradient into the saved ratios
//! without dividing again. The literal kernel is available behind the same
//! interface as the baseline arm.

use super::tape::Function;
use super::{Tensor, Var};
use crate::cfcore::{ContinuantBatch, LiteralBatch, PoleGuard};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfKernel {
    /// One division per evaluation.
    #[default]
    Continuant,
    /// One division per level.
    Literal,
}

#[derive(Debug)]
enum Saved {
    Continuant(ContinuantBatch),
    Literal(LiteralBatch),
}

/// Saved state of one CF layer application.
#[derive(Debug)]
pub struct CfLayerFunction {
    saved: Saved,
    guard: PoleGuard,
}

impl CfLayerFunction {
    pub fn guard(&self) -> PoleGuard {
        self.guard
    }

    pub fn forward_divisions(&self) -> usize {
        match &self.saved {
            Saved::Continuant(b) => b.divisions_used(),
            Saved::Literal(b) => b.divisions_used(),
        }
    }

    /// `upstream ⊙ grad f~` laid out like the layer input.
    pub fn backward_values(&self, upstream: &[f64]) -> Vec<f64> {
        match &self.saved {
            Saved::Continuant(b) => b.backward(upstream),
            Saved::Literal(b) => b.backward(upstream),
        }
    }

    pub fn continuants(&self) -> Option<&ContinuantBatch> {
        match &self.saved {
            Saved::Continuant(b) => Some(b),
            Saved::Literal(_) => None,
        }
    }
}

/// Evaluates `f~` along the last axis without recording anything.
pub fn cf_layer_eval(a: &Tensor, guard: PoleGuard, kernel: CfKernel) -> Result<(CfLayerFunction, Tensor)> {
    if a.ndim() == 0 {
        return Err(Error::ZeroDepth);
    }
    let d = a.last_dim();
    let (saved, values) = match kernel {
        CfKernel::Continuant => {
            let (b, v) = ContinuantBatch::forward(a.data(), d, guard)?;
            (Saved::Continuant(b), v)
        }
        CfKernel::Literal => {
            let (b, v) = LiteralBatch::forward(a.data(), d, guard)?;
            (Saved::Literal(b), v)
        }
    };
    let shape = if a.ndim() == 1 {
        vec![1]
    } else {
        a.shape()[..a.ndim() - 1].to_vec()
    };
    Ok((CfLayerFunction { saved, guard }, Tensor::from_parts(shape, values)))
}

impl Function for CfLayerFunction {
    fn name(&self) -> &'static str {
        "cf_layer"
    }

    fn backward(&self, grad_output: &Tensor, inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Tensor>> {
        let g = self.backward_values(grad_output.data());
        vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), g))]
    }
}

/// `[..., d] -> [...]` fractional parts, recorded on the tape.
pub fn cf_layer<'t>(a: Var<'t>, guard: PoleGuard, kernel: CfKernel) -> Result<Var<'t>> {
    let (function, out) = cf_layer_eval(&a.value(), guard, kernel)?;
    Ok(a.tape().record(out, &[a], Box::new(function)))
}
