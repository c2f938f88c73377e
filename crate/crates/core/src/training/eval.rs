use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::LanguageModel;

/// Negative log-likelihood of `target` under row `row` of `logits`.
pub fn token_nll(logits: &Tensor, row: usize, target: usize) -> f64 {
    let r = logits.row(row);
    let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = r.iter().map(|x| (x - mx).exp()).sum();
    -(r[target] - mx - z.ln())
}

/// Sliding-window scoring. Windows of up to `window` inputs start every
/// `stride` tokens; each window scores only the targets not scored by an
/// earlier window, so every token after the first is scored exactly once
/// with as much context as the window allows.
///
/// `logits` maps an input slice to `[len, vocab]` next-token logits.
/// Returns the summed negative log-likelihood and the number of scored
/// tokens.
pub fn strided_nll(
    ids: &[usize],
    window: usize,
    stride: usize,
    mut logits: impl FnMut(&[usize]) -> Result<Tensor>,
) -> Result<(f64, usize)> {
    if stride == 0 || stride > window {
        return Err(Error::Config(format!(
            "stride must be in 1..={window} (got {stride})"
        )));
    }
    if ids.len() < 2 {
        return Err(Error::EmptyCorpus("need at least two tokens to score".into()));
    }
    let n_targets = ids.len() - 1;
    let (mut total, mut scored, mut begin) = (0.0, 0usize, 0usize);
    loop {
        let end = (begin + window).min(n_targets);
        let out = logits(&ids[begin..end])?;
        for j in scored.max(begin)..end {
            total += token_nll(&out, j - begin, ids[j + 1]);
        }
        scored = end;
        if end == n_targets {
            break;
        }
        begin += stride;
    }
    Ok((total, scored))
}

/// `exp` of the mean strided negative log-likelihood, using the model's
/// context length as the window.
pub fn evaluate_perplexity(lm: &LanguageModel, ids: &[usize], stride: usize) -> Result<f64> {
    let (nll, n) = strided_nll(ids, lm.config().seq_len, stride, |w| lm.logits(w))?;
    Ok((nll / n as f64).exp())
}
