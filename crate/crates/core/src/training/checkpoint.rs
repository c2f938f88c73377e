//! Binary checkpoint container.
//!
//! ```text
//! "CFGN" | u32 version | u64 header length | JSON header | payload
//! ```
//!
//! All integers are little-endian. The header echoes the training config
//! and indexes every array (name, shape, dtype, byte offset into the
//! payload); the payload holds the raw little-endian `f64` data of the
//! parameters, both optimizer moments and the range-tracker extrema (kept
//! out of the JSON so they round-trip bit-exactly, infinities included).

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, Trainer};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ladders::{RangeMode, RangeSet, RangeTracker};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CFGN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    /// Decimal, since JSON numbers cannot carry a `u128`.
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackerState {
    mode: RangeMode,
    observed: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    iteration: u64,
    rng: RngState,
    ranges: Vec<TrackerState>,
    /// Optimizer step count per parameter, in store order.
    optimizer_steps: Vec<u64>,
    arrays: Vec<ArrayEntry>,
}

fn push_array(arrays: &mut Vec<ArrayEntry>, payload: &mut Vec<u8>, name: String, shape: &[usize], data: &[f64]) {
    arrays.push(ArrayEntry {
        name,
        shape: shape.to_vec(),
        dtype: "f64".into(),
        offset: payload.len(),
    });
    for v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the full training state to bytes.
pub fn checkpoint_bytes(trainer: &Trainer) -> Result<Vec<u8>> {
    let store = &trainer.model().store;
    let opt = trainer.optimizer();
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    let mut steps = Vec::new();
    for id in store.ids() {
        let name = &store.info(id).name;
        let value = store.get(id);
        let (m, v) = opt.moments(id);
        push_array(&mut arrays, &mut payload, format!("param/{name}"), value.shape(), value.data());
        push_array(&mut arrays, &mut payload, format!("adam_m/{name}"), value.shape(), m);
        push_array(&mut arrays, &mut payload, format!("adam_v/{name}"), value.shape(), v);
        steps.push(opt.steps(id));
    }
    let mut ranges = Vec::new();
    for (i, t) in trainer.model().ranges.iter().enumerate() {
        push_array(&mut arrays, &mut payload, format!("range_min/{i}"), &[t.ladders()], t.min());
        push_array(&mut arrays, &mut payload, format!("range_max/{i}"), &[t.ladders()], t.max());
        ranges.push(TrackerState {
            mode: t.mode(),
            observed: t.observed().to_vec(),
        });
    }
    let rng = trainer.rng();
    let header = Header {
        config: trainer.config().clone(),
        iteration: trainer.iteration(),
        rng: RngState {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        },
        ranges,
        optimizer_steps: steps,
        arrays,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let bytes = checkpoint_bytes(trainer)?;
    // write-then-rename so a crash never leaves a half-written checkpoint
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn truncated(what: &str) -> Error {
    Error::Checkpoint(format!("truncated checkpoint: missing {what}"))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(truncated(what));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Rebuilds a trainer from checkpoint bytes. Nothing is returned unless
/// every array is present and consistent with the recorded config.
pub fn checkpoint_from_bytes(mut bytes: &[u8]) -> Result<Trainer> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(take(&mut bytes, 8, "header length")?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| truncated("header"))?;
    let header: Header = serde_json::from_slice(take(&mut bytes, header_len, "header")?)?;
    let payload = bytes;

    let mut trainer = Trainer::new(header.config)?;
    let read = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let entry = header
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("array {name} missing")))?;
        if entry.shape != shape || entry.dtype != "f64" {
            return Err(Error::Checkpoint(format!(
                "array {name}: expected f64 {shape:?}, found {} {:?}",
                entry.dtype, entry.shape
            )));
        }
        let n = shape.iter().product::<usize>() * 8;
        let raw = payload
            .get(entry.offset..entry.offset + n)
            .ok_or_else(|| truncated(&format!("data of {name}")))?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };

    let ids: Vec<_> = trainer.model().store.ids().collect();
    if header.optimizer_steps.len() != ids.len() {
        return Err(Error::Checkpoint(format!(
            "{} optimizer step counts for {} parameters",
            header.optimizer_steps.len(),
            ids.len()
        )));
    }
    let mut restored = Vec::with_capacity(ids.len());
    for &id in &ids {
        let store = &trainer.model().store;
        let name = store.info(id).name.clone();
        let shape = store.get(id).shape().to_vec();
        let value = read(&format!("param/{name}"), &shape)?;
        let m = read(&format!("adam_m/{name}"), &shape)?;
        let v = read(&format!("adam_v/{name}"), &shape)?;
        restored.push((id, Tensor::new(&shape, value)?, m, v));
    }
    if header.ranges.len() != trainer.model().ranges.len() {
        return Err(Error::Checkpoint("range tracker count does not match the model".into()));
    }
    let ranges = header
        .ranges
        .iter()
        .zip(trainer.model().ranges.iter())
        .enumerate()
        .map(|(i, (state, fresh))| {
            let n = fresh.ladders();
            let min = read(&format!("range_min/{i}"), &[n])?;
            let max = read(&format!("range_max/{i}"), &[n])?;
            RangeTracker::from_parts(min, max, state.observed.clone(), state.mode)
                .map_err(|_| Error::Checkpoint(format!("range tracker {i} does not match the model")))
        })
        .collect::<Result<RangeSet>>()?;

    let seed: [u8; 32] = header
        .rng
        .seed
        .as_slice()
        .try_into()
        .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);

    let (lm, opt) = trainer.parts_mut();
    for ((id, value, m, v), steps) in restored.into_iter().zip(header.optimizer_steps) {
        lm.store.set(id, value);
        opt.restore(id, steps, m, v);
    }
    lm.ranges = ranges;
    trainer.restore(header.iteration, rng);
    Ok(trainer)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    checkpoint_from_bytes(&fs::read(path)?)
}
