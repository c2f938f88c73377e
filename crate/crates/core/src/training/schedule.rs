use serde::{Deserialize, Serialize};

use crate::params::ParamGroup;

/// First iteration (0-based) at which depth-`k` ladder parameters are
/// updated: 0 for the linear path, `ceil(t (1 - 2^-k))` otherwise, so
/// depth `k` trains for the last `t / 2^k` iterations.
pub fn unfreeze_iter(depth: usize, total: u64) -> u64 {
    if depth == 0 {
        return 0;
    }
    // t - floor(t / 2^k) == ceil(t (1 - 2^-k)) exactly, without floating point
    let span = if depth >= 64 { 0 } else { total >> depth };
    total - span
}

/// Which parameter groups an iteration may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub total: u64,
    /// With the schedule disabled every group trains from iteration 0.
    pub enabled: bool,
}

impl FreezeMask {
    pub fn new(total: u64, enabled: bool) -> Self {
        Self { total, enabled }
    }

    pub fn activation(&self, group: ParamGroup) -> u64 {
        if self.enabled {
            unfreeze_iter(group.depth(), self.total)
        } else {
            0
        }
    }

    pub fn is_active(&self, group: ParamGroup, iter: u64) -> bool {
        self.activation(group) <= iter
    }

    /// Depths `0..=max_depth` that train at `iter`.
    pub fn active_depths(&self, iter: u64, max_depth: usize) -> Vec<usize> {
        (0..=max_depth)
            .filter(|&k| self.is_active(group_of(k), iter))
            .collect()
    }
}

fn group_of(depth: usize) -> ParamGroup {
    if depth == 0 {
        ParamGroup::Linear
    } else {
        ParamGroup::LadderDepth(depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_points() {
        assert_eq!(unfreeze_iter(0, 1000), 0);
        assert_eq!(unfreeze_iter(1, 1000), 500);
        assert_eq!(unfreeze_iter(2, 1000), 750);
        assert_eq!(unfreeze_iter(3, 1000), 875);
    }

    #[test]
    fn matches_ceiling_formula() {
        for t in [1u64, 7, 100, 999, 1000, 2000, 12345] {
            for k in 1..=10usize {
                let expect = (t as f64 * (1.0 - 0.5f64.powi(k as i32))).ceil() as u64;
                assert_eq!(unfreeze_iter(k, t), expect, "t={t} k={k}");
                assert_eq!(t - unfreeze_iter(k, t), t >> k);
            }
        }
    }

    #[test]
    fn disabled_schedule_activates_everything() {
        let m = FreezeMask::new(1000, false);
        assert_eq!(m.active_depths(0, 5), vec![0, 1, 2, 3, 4, 5]);
        let m = FreezeMask::new(1000, true);
        assert_eq!(m.active_depths(0, 5), vec![0]);
        assert_eq!(m.active_depths(760, 5), vec![0, 1, 2]);
    }
}
