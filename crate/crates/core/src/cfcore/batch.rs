//! Row-batched continued-fraction kernels.
//!
//! Both kernels take a row-major `[n, d]` buffer of partial denominators
//! `a1..ad` and produce `n` fractional parts. They save exactly what their
//! backward pass needs, and neither backward pass divides.

use super::{check_overflow, fill_continuants, within_bound, ContinuantTable, PoleGuard};
use crate::error::{Error, Result};

fn check_input(a: &[f64], d: usize) -> Result<usize> {
    if d == 0 {
        return Err(Error::ZeroDepth);
    }
    if a.len() % d != 0 {
        return Err(Error::ShapeMismatch {
            op: "cf_batch",
            expected: vec![a.len() / d * d],
            actual: vec![a.len()],
        });
    }
    if let Some(i) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: i,
            value: a[i],
        });
    }
    Ok(a.len() / d)
}

/// Continuant tables for `n` rows: one division per row.
#[derive(Clone, Debug)]
pub struct ContinuantBatch {
    d: usize,
    k: Vec<f64>,
    inv_kd: Vec<f64>,
    kd_guarded: Vec<f64>,
}

impl ContinuantBatch {
    /// Returns the saved tables and the fractional parts `K_{d-1} / K_d`.
    pub fn forward(a: &[f64], d: usize, guard: PoleGuard) -> Result<(Self, Vec<f64>)> {
        let n = check_input(a, d)?;
        let mut k = vec![0.0; n * (d + 1)];
        let mut inv_kd = vec![0.0; n];
        let mut kd_guarded = vec![0.0; n];
        let mut out = vec![0.0; n];
        let rows = k.chunks_exact_mut(d + 1).zip(a.chunks_exact(d));
        let slots = inv_kd.iter_mut().zip(kd_guarded.iter_mut()).zip(out.iter_mut());
        for ((row, a_row), ((inv_slot, g_slot), o)) in rows.zip(slots) {
            fill_continuants(a_row, row);
            let g = guard.apply(row[d]);
            let inv = 1.0 / g;
            *g_slot = g;
            *inv_slot = inv;
            *o = row[d - 1] * inv;
        }
        if !within_bound(&k) {
            for row in k.chunks_exact(d + 1) {
                check_overflow(row)?;
            }
        }
        Ok((
            Self {
                d,
                k,
                inv_kd,
                kd_guarded,
            },
            out,
        ))
    }

    pub fn rows(&self) -> usize {
        self.inv_kd.len()
    }

    pub fn depth(&self) -> usize {
        self.d
    }

    pub fn divisions_used(&self) -> usize {
        self.rows()
    }

    pub fn table(&self, row: usize) -> ContinuantTable {
        let d = self.d;
        ContinuantTable {
            k: self.k[row * (d + 1)..(row + 1) * (d + 1)].to_vec(),
            kd_guarded: self.kd_guarded[row],
            inv_kd: self.inv_kd[row],
            divisions_used: 1,
        }
    }

    /// `upstream[i] * d f~_i / d a_{i,k}` laid out as `[n, d]`.
    pub fn backward(&self, upstream: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.rows() * self.d];
        self.backward_into(upstream, &mut grad);
        grad
    }

    pub fn backward_into(&self, upstream: &[f64], grad: &mut [f64]) {
        let d = self.d;
        assert_eq!(upstream.len(), self.rows());
        assert_eq!(grad.len(), self.rows() * d);
        let rows = self.k.chunks_exact(d + 1).zip(grad.chunks_exact_mut(d));
        for ((k, g), (&up, &inv)) in rows.zip(upstream.iter().zip(&self.inv_kd)) {
            // slot j holds d/da_{j+1}, which reads K_{d-1-j}
            let mut sign = -up;
            for (slot, &kj) in g.iter_mut().zip(k[..d].iter().rev()) {
                let r = kj * inv;
                *slot = sign * r * r;
                sign = -sign;
            }
        }
    }
}

/// Literal bottom-up evaluation for `n` rows: `d` divisions per row.
///
/// Saves `-r_k^2` (zeroed where the guard clamped) for every level so the
/// backward pass is a running product.
#[derive(Clone, Debug)]
pub struct LiteralBatch {
    d: usize,
    local: Vec<f64>,
}

impl LiteralBatch {
    pub fn forward(a: &[f64], d: usize, guard: PoleGuard) -> Result<(Self, Vec<f64>)> {
        let n = check_input(a, d)?;
        let eps = guard.epsilon();
        let mut local = vec![0.0; n * d];
        let mut out = vec![0.0; n];
        for i in 0..n {
            let row = &a[i * d..(i + 1) * d];
            let saved = &mut local[i * d..(i + 1) * d];
            let mut tail = row[d - 1];
            for lvl in (0..d).rev() {
                // tail holds t_{lvl+1}
                let g = guard.apply(tail);
                let r = 1.0 / g;
                saved[lvl] = if tail.abs() >= eps { -r * r } else { 0.0 };
                if lvl == 0 {
                    out[i] = r;
                } else {
                    tail = row[lvl - 1] + r;
                }
            }
        }
        Ok((Self { d, local }, out))
    }

    pub fn rows(&self) -> usize {
        self.local.len() / self.d
    }

    pub fn depth(&self) -> usize {
        self.d
    }

    pub fn divisions_used(&self) -> usize {
        self.rows() * self.d
    }

    pub fn backward(&self, upstream: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.local.len()];
        self.backward_into(upstream, &mut grad);
        grad
    }

    pub fn backward_into(&self, upstream: &[f64], grad: &mut [f64]) {
        let d = self.d;
        assert_eq!(upstream.len(), self.rows());
        assert_eq!(grad.len(), self.local.len());
        for (i, &up) in upstream.iter().enumerate() {
            let saved = &self.local[i * d..(i + 1) * d];
            let g = &mut grad[i * d..(i + 1) * d];
            let mut carry = up;
            for (slot, &s) in g.iter_mut().zip(saved) {
                carry *= s;
                *slot = carry;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfcore::{cf_eval, cf_grad, continuants_of, literal_of};

    #[test]
    fn batch_matches_scalar_routes() {
        let guard = PoleGuard::default();
        let a = [2.0, 3.0, 1.0, 1.0, 0.5, -1.5, 2.5, 0.75, -0.9];
        let d = 3;
        let (cb, cv) = ContinuantBatch::forward(&a, d, guard).unwrap();
        let (lb, lv) = LiteralBatch::forward(&a, d, guard).unwrap();
        assert_eq!(cb.divisions_used(), 3);
        assert_eq!(lb.divisions_used(), 9);
        let up = [1.0, -2.0, 0.5];
        let cg = cb.backward(&up);
        let lg = lb.backward(&up);
        for i in 0..3 {
            let row = &a[i * d..(i + 1) * d];
            let t = continuants_of(row, guard).unwrap();
            assert_eq!(cv[i], cf_eval(&t, 0.0));
            assert!((lv[i] - literal_of(row, 0.0, guard).value).abs() < 1e-15);
            assert!((cv[i] - lv[i]).abs() < 1e-12);
            for (j, g) in cf_grad(&t).iter().enumerate() {
                assert!((cg[i * d + j] - up[i] * g).abs() < 1e-14);
                assert!((lg[i * d + j] - up[i] * g).abs() < 1e-12);
            }
            assert_eq!(cb.table(i), t);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (cb, _) = ContinuantBatch::forward(&[2.0, 3.0], 2, PoleGuard::default()).unwrap();
        assert_eq!(cb.backward(&[0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_nan_with_flat_index() {
        let r = ContinuantBatch::forward(&[1.0, 2.0, f64::INFINITY, 1.0], 2, PoleGuard::default());
        assert!(matches!(r, Err(Error::NonFinite { index: 2, .. })));
    }
}
