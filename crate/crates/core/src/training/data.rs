use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Byte-level corpus split 90/10 by prefix into training and validation
/// ids.
#[derive(Clone, Debug)]
pub struct Corpus {
    ids: Vec<usize>,
    split: usize,
}

impl Corpus {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::EmptyCorpus("no bytes".into()));
        }
        let ids: Vec<usize> = bytes.iter().map(|&b| b as usize).collect();
        let split = ids.len() * 9 / 10;
        Ok(Self { ids, split })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        if bytes.is_empty() {
            return Err(Error::EmptyCorpus(path.display().to_string()));
        }
        Self::from_bytes(&bytes)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn train(&self) -> &[usize] {
        &self.ids[..self.split]
    }

    pub fn val(&self) -> &[usize] {
        &self.ids[self.split..]
    }

    /// Entropy (nats) of the byte distribution of the whole corpus, the
    /// loss of the best context-free predictor.
    pub fn unigram_entropy(&self) -> f64 {
        let mut counts = [0usize; 256];
        for &i in &self.ids {
            counts[i] += 1;
        }
        let n = self.ids.len() as f64;
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
}

/// `batch` random windows of `len + 1` tokens, split into inputs and
/// next-token targets, each laid out row-major.
pub fn sample_batch<R: Rng + ?Sized>(ids: &[usize], batch: usize, len: usize, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if ids.len() < len + 1 {
        return Err(Error::EmptyCorpus(format!(
            "{} tokens cannot fill a window of {}",
            ids.len(),
            len + 1
        )));
    }
    let mut inputs = Vec::with_capacity(batch * len);
    let mut targets = Vec::with_capacity(batch * len);
    for _ in 0..batch {
        let start = rng.random_range(0..=ids.len() - len - 1);
        inputs.extend_from_slice(&ids[start..start + len]);
        targets.extend_from_slice(&ids[start + 1..start + len + 1]);
    }
    Ok((inputs, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn byte_ids() {
        let c = Corpus::from_bytes(b"ab").unwrap();
        assert_eq!(c.ids(), &[97, 98]);
    }

    #[test]
    fn split_is_prefix() {
        let bytes: Vec<u8> = (0..100).collect();
        let c = Corpus::from_bytes(&bytes).unwrap();
        assert_eq!(c.train().len(), 90);
        assert_eq!(c.val()[0], 90);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(Corpus::from_bytes(b""), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn targets_are_shifted_inputs() {
        let ids: Vec<usize> = (0..50).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = sample_batch(&ids, 3, 5, &mut rng).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(a + 1, *b);
        }
    }

    #[test]
    fn uniform_entropy() {
        let bytes: Vec<u8> = (0..=255).collect();
        let c = Corpus::from_bytes(&bytes).unwrap();
        assert!((c.unigram_entropy() - 256f64.ln()).abs() < 1e-12);
    }
}
