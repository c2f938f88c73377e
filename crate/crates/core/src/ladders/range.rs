use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeMode {
    Recording,
    Clipping,
}

/// Running output extrema of a group of ladders, one slot per ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeTracker {
    min: Vec<f64>,
    max: Vec<f64>,
    observed: Vec<u64>,
    mode: RangeMode,
}

impl RangeTracker {
    pub fn new(ladders: usize) -> Self {
        Self {
            min: vec![f64::INFINITY; ladders],
            max: vec![f64::NEG_INFINITY; ladders],
            observed: vec![0; ladders],
            mode: RangeMode::Recording,
        }
    }

    /// Rebuilds a tracker from saved extrema, counts and mode.
    pub fn from_parts(min: Vec<f64>, max: Vec<f64>, observed: Vec<u64>, mode: RangeMode) -> Result<Self> {
        if max.len() != min.len() || observed.len() != min.len() {
            return Err(Error::ShapeMismatch {
                op: "range_tracker",
                expected: vec![min.len(); 3],
                actual: vec![min.len(), max.len(), observed.len()],
            });
        }
        Ok(Self { min, max, observed, mode })
    }

    pub fn ladders(&self) -> usize {
        self.min.len()
    }

    pub fn mode(&self) -> RangeMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: RangeMode) {
        self.mode = mode;
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn observed(&self) -> &[u64] {
        &self.observed
    }

    /// Folds `z` (ladder index on the last axis, possibly covering only the
    /// first `z.last_dim()` ladders) into the running extrema.
    pub fn update(&mut self, z: &Tensor) -> Result<()> {
        if self.mode != RangeMode::Recording {
            return Err(Error::TrackerNotRecording);
        }
        let w = z.last_dim();
        if w > self.ladders() {
            return Err(Error::ShapeMismatch {
                op: "update_range",
                expected: vec![self.ladders()],
                actual: vec![w],
            });
        }
        for row in z.data().chunks_exact(w) {
            for (j, &v) in row.iter().enumerate() {
                if v < self.min[j] {
                    self.min[j] = v;
                }
                if v > self.max[j] {
                    self.max[j] = v;
                }
                self.observed[j] += 1;
            }
        }
        Ok(())
    }

    /// Clamps into the recorded range. Ladders never observed pass through.
    pub fn clip<'t>(&self, z: Var<'t>) -> Result<Var<'t>> {
        let w = *z.shape().last().expect("non-scalar");
        if w > self.ladders() {
            return Err(Error::ShapeMismatch {
                op: "clip_range",
                expected: vec![self.ladders()],
                actual: vec![w],
            });
        }
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..w)
            .map(|j| {
                if self.observed[j] == 0 {
                    (f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    (self.min[j], self.max[j])
                }
            })
            .unzip();
        ops::clamp_last(z, &lo, &hi)
    }

    /// Records or clips depending on the mode.
    pub fn process<'t>(&mut self, z: Var<'t>) -> Result<Var<'t>> {
        match self.mode {
            RangeMode::Recording => {
                self.update(&z.value())?;
                Ok(z)
            }
            RangeMode::Clipping => self.clip(z),
        }
    }

    pub fn summary(&self) -> String {
        let lo = self.min.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.max.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!("[{lo:.4e}, {hi:.4e}] over {} ladders", self.ladders())
    }
}

/// All trackers of a model, addressed by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RangeSet {
    trackers: Vec<RangeTracker>,
}

impl RangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, ladders: usize) -> usize {
        self.trackers.push(RangeTracker::new(ladders));
        self.trackers.len() - 1
    }

    pub fn len(&self) -> usize {
        self.trackers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trackers.is_empty()
    }

    pub fn get(&self, i: usize) -> &RangeTracker {
        &self.trackers[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut RangeTracker {
        &mut self.trackers[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &RangeTracker> {
        self.trackers.iter()
    }

    pub fn set_mode(&mut self, mode: RangeMode) {
        for t in &mut self.trackers {
            t.set_mode(mode);
        }
    }

    pub fn summary(&self) -> String {
        self.trackers
            .iter()
            .enumerate()
            .map(|(i, t)| format!("#{i} {}", t.summary()))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl FromIterator<RangeTracker> for RangeSet {
    fn from_iter<I: IntoIterator<Item = RangeTracker>>(iter: I) -> Self {
        Self {
            trackers: iter.into_iter().collect(),
        }
    }
}
