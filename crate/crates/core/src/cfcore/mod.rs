//! Continued fractions in canonical form and their continuants.
//!
//! A depth-`d` continued fraction
//!
//! ```text
//! f(a0, a) = a0 + 1/(a1 + 1/(a2 + ... + 1/ad))
//! ```
//!
//! is the ratio `K_{d+1}(a0..ad) / K_d(a1..ad)` of two continuants. The
//! fractional part `f~(a) = K_{d-1}(a2..ad) / K_d(a1..ad)` and its whole
//! gradient are obtained from the continuant sequence with a single division
//! by the (pole-guarded) `K_d`. [`cf_literal`] is the bottom-up evaluation
//! with one division per level, kept as an oracle and as the baseline arm of
//! the benchmarks.

mod batch;

pub use batch::{ContinuantBatch, LiteralBatch};

use crate::error::{Error, Result};

/// Default pole-guard threshold.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Any `|K_j|` above this is treated as overflow.
pub const OVERFLOW_BOUND: f64 = 1e100;

/// Pole guard `K -> sgn(K) * max(|K|, eps)`, with `sgn(0) = +1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoleGuard {
    epsilon: f64,
}

impl PoleGuard {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn apply(&self, denominator: f64) -> f64 {
        guard_denominator(denominator, self.epsilon)
    }
}

impl Default for PoleGuard {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// `sgn(kd) * max(|kd|, eps)`; zero (of either sign) maps to `+eps`.
#[inline]
pub fn guard_denominator(kd: f64, eps: f64) -> f64 {
    let magnitude = kd.abs().max(eps);
    if kd < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Partial denominators `a1..ad` and an optional leading term `a0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialDenominators {
    a0: Option<f64>,
    a: Vec<f64>,
}

impl PartialDenominators {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        validate(&a)?;
        Ok(Self { a0: None, a })
    }

    pub fn with_leading(a0: f64, a: Vec<f64>) -> Result<Self> {
        if !a0.is_finite() {
            return Err(Error::NonFinite {
                index: 0,
                value: a0,
            });
        }
        validate(&a)?;
        Ok(Self { a0: Some(a0), a })
    }

    pub fn depth(&self) -> usize {
        self.a.len()
    }

    pub fn leading(&self) -> Option<f64> {
        self.a0
    }

    /// `a1..ad`.
    pub fn values(&self) -> &[f64] {
        &self.a
    }
}

/// Rejects empty or non-finite inputs. Reported indices are 1-based
/// (`a1` is index 1) so they line up with the usual notation.
pub(crate) fn validate(a: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::ZeroDepth);
    }
    match a.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            index: i + 1,
            value: a[i],
        }),
        None => Ok(()),
    }
}

/// Tail-aligned continuants `K_0..K_d` of one continued fraction, with the
/// guarded reciprocal of `K_d`.
///
/// Entry `j` of [`ContinuantTable::continuants`] is `K_j(a_{d-j+1}, .., a_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuantTable {
    k: Vec<f64>,
    kd_guarded: f64,
    inv_kd: f64,
    divisions_used: usize,
}

impl ContinuantTable {
    pub fn depth(&self) -> usize {
        self.k.len() - 1
    }

    pub fn continuants(&self) -> &[f64] {
        &self.k
    }

    pub fn kd_guarded(&self) -> f64 {
        self.kd_guarded
    }

    pub fn inv_kd(&self) -> f64 {
        self.inv_kd
    }

    pub fn divisions_used(&self) -> usize {
        self.divisions_used
    }
}

/// Fills `k` (length `d + 1`) with the tail-aligned continuants of `a` and
/// returns the guarded `K_d`. No division happens here.
#[inline]
pub(crate) fn fill_continuants(a: &[f64], k: &mut [f64]) {
    let d = a.len();
    debug_assert_eq!(k.len(), d + 1);
    let (mut prev, mut cur) = (1.0, a[d - 1]);
    k[0] = prev;
    k[1] = cur;
    for (slot, &x) in k[2..].iter_mut().zip(a[..d - 1].iter().rev()) {
        let next = x * cur + prev;
        *slot = next;
        prev = cur;
        cur = next;
    }
}

/// True when every entry is within the overflow bound. Branch-free so the
/// scan vectorises; the offending index is only looked up on failure.
#[inline]
pub(crate) fn within_bound(k: &[f64]) -> bool {
    k.iter().fold(true, |ok, v| ok & (v.abs() <= OVERFLOW_BOUND))
}

pub(crate) fn check_overflow(k: &[f64]) -> Result<()> {
    match k.iter().position(|v| !(v.abs() <= OVERFLOW_BOUND)) {
        Some(j) => Err(Error::ContinuantOverflow {
            index: j,
            value: k[j],
        }),
        None => Ok(()),
    }
}

/// Runs the continuant recursion and takes the one reciprocal of the
/// guarded `K_d`.
pub fn continuants_forward(a: &PartialDenominators, guard: PoleGuard) -> Result<ContinuantTable> {
    continuants_of(a.values(), guard)
}

/// Slice form of [`continuants_forward`].
pub fn continuants_of(a: &[f64], guard: PoleGuard) -> Result<ContinuantTable> {
    validate(a)?;
    let d = a.len();
    let mut k = vec![0.0; d + 1];
    fill_continuants(a, &mut k);
    check_overflow(&k)?;
    let kd_guarded = guard.apply(k[d]);
    Ok(ContinuantTable {
        k,
        kd_guarded,
        inv_kd: 1.0 / kd_guarded,
        divisions_used: 1,
    })
}

/// `a0 + K_{d-1} / K_d`, reusing the stored reciprocal.
pub fn cf_eval(table: &ContinuantTable, a0: f64) -> f64 {
    let d = table.depth();
    a0 + table.k[d - 1] * table.inv_kd
}

/// `d f~ / d a_k = (-1)^k (K_{d-k} / K_d)^2` for `k = 1..d`.
///
/// The derivative with respect to `a0` is identically one and is not part of
/// the result.
pub fn cf_grad(table: &ContinuantTable) -> Vec<f64> {
    let d = table.depth();
    (1..=d)
        .map(|k| {
            let r = table.k[d - k] * table.inv_kd;
            let sq = r * r;
            if k % 2 == 1 {
                -sq
            } else {
                sq
            }
        })
        .collect()
}

/// A value together with the number of divisions spent computing it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Counted {
    pub value: f64,
    pub divisions_used: usize,
}

/// Bottom-up evaluation with one guarded division per level.
pub fn cf_literal(a: &PartialDenominators, a0: f64, guard: PoleGuard) -> Counted {
    literal_of(a.values(), a0, guard)
}

pub(crate) fn literal_of(a: &[f64], a0: f64, guard: PoleGuard) -> Counted {
    let d = a.len();
    let mut tail = a[d - 1];
    let mut divisions = 0;
    for &ak in a[..d - 1].iter().rev() {
        tail = ak + 1.0 / guard.apply(tail);
        divisions += 1;
    }
    let frac = 1.0 / guard.apply(tail);
    divisions += 1;
    Counted {
        value: a0 + frac,
        divisions_used: divisions,
    }
}

/// Continuant `K_n(x_1, .., x_n)` of an arbitrary slice; `K_0() = 1`.
pub fn continuant(x: &[f64]) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for &v in x.iter().rev() {
        let next = v * cur + prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `dK_k / da_l = K_{l-1}(a_1..a_{l-1}) * K_{k-l}(a_{l+1}..a_k)`, `1 <= l <= k`.
pub fn continuant_partial(a: &[f64], l: usize) -> Result<f64> {
    let k = a.len();
    if l < 1 || l > k {
        return Err(Error::IndexOutOfRange {
            index: l,
            lo: 1,
            hi: k,
        });
    }
    Ok(continuant(&a[..l - 1]) * continuant(&a[l..]))
}

/// Residual of the continuant identity
///
/// ```text
/// K_k(a0..a_{k-1}) K_d(a1..ad) - K_{k-1}(a1..a_{k-1}) K_{d+1}(a0..ad) = (-1)^k K_{d-k}(a_{k+1}..ad)
/// ```
///
/// along with the largest magnitude among the three terms, for relative
/// comparisons. `K_{-1}` is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityResidual {
    pub residual: f64,
    pub magnitude: f64,
}

impl IdentityResidual {
    pub fn relative(&self) -> f64 {
        self.residual.abs() / self.magnitude.max(1.0)
    }
}

/// `with_leading` is `(a0, a1, .., ad)`; requires `0 <= k <= d`.
pub fn check_continuant_identity(with_leading: &[f64], k: usize) -> Result<IdentityResidual> {
    if with_leading.len() < 2 {
        return Err(Error::ZeroDepth);
    }
    let d = with_leading.len() - 1;
    if k > d {
        return Err(Error::IndexOutOfRange {
            index: k,
            lo: 0,
            hi: d,
        });
    }
    let s = with_leading;
    let first = continuant(&s[..k]) * continuant(&s[1..]);
    let second = if k == 0 {
        0.0
    } else {
        continuant(&s[1..k]) * continuant(s)
    };
    let tail = continuant(&s[k + 1..]);
    let signed_tail = if k % 2 == 0 { tail } else { -tail };
    Ok(IdentityResidual {
        residual: first - second - signed_tail,
        magnitude: first.abs().max(second.abs()).max(tail.abs()),
    })
}

/// Determinant of the tridiagonal matrix with diagonal `a`, `+1` above and
/// `-1` below the diagonal, by dense LU factorisation.
pub fn tridiagonal_determinant(a: &[f64]) -> Result<f64> {
    validate(a)?;
    let n = a.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            a[i]
        } else if j == i + 1 {
            1.0
        } else if i == j + 1 {
            -1.0
        } else {
            0.0
        }
    });
    Ok(m.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(a: &[f64]) -> ContinuantTable {
        continuants_of(a, PoleGuard::default()).unwrap()
    }

    fn pd(a: &[f64]) -> PartialDenominators {
        PartialDenominators::new(a.to_vec()).unwrap()
    }

    #[test]
    fn continuant_tables() {
        assert_eq!(table(&[2.0, 3.0]).continuants(), &[1.0, 3.0, 7.0]);
        assert_eq!(
            table(&[1.0, 1.0, 1.0, 1.0]).continuants(),
            &[1.0, 1.0, 2.0, 3.0, 5.0]
        );
        assert_eq!(table(&[4.0]).continuants(), &[1.0, 4.0]);
        assert_eq!(table(&[2.0, 3.0]).divisions_used(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            PartialDenominators::new(vec![]),
            Err(Error::ZeroDepth)
        ));
        match continuants_of(&[1.0, f64::NAN, 2.0], PoleGuard::default()) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        assert!(PoleGuard::new(0.0).is_err());
        assert!(PoleGuard::new(-1.0).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let a = vec![1e60; 3];
        assert!(matches!(
            continuants_of(&a, PoleGuard::default()),
            Err(Error::ContinuantOverflow { .. })
        ));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(cf_eval(&table(&[1.0, 1.0]), 0.0), 0.5);
        assert!((cf_eval(&table(&[2.0, 3.0]), 0.0) - 3.0 / 7.0).abs() < 1e-15);
        assert!((cf_eval(&table(&[1.0, 1.0, 1.0, 1.0]), 2.0) - 2.6).abs() < 1e-15);
    }

    #[test]
    fn grad_examples() {
        let g = cf_grad(&table(&[2.0, 3.0]));
        assert!((g[0] + 9.0 / 49.0).abs() < 1e-15);
        assert!((g[1] - 1.0 / 49.0).abs() < 1e-15);
        let g = cf_grad(&table(&[1.0, 1.0, 1.0, 1.0]));
        for (x, y) in g.iter().zip([-0.36, 0.16, -0.04, 0.04]) {
            assert!((x - y).abs() < 1e-15, "{g:?}");
        }
        assert_eq!(cf_grad(&table(&[4.0])), vec![-1.0 / 16.0]);
    }

    #[test]
    fn literal_examples() {
        let g = PoleGuard::default();
        let r = cf_literal(&pd(&[1.0, 1.0]), 0.0, g);
        assert_eq!(r.value, 0.5);
        assert_eq!(r.divisions_used, 2);
        let r = cf_literal(&pd(&[2.0, 3.0]), 0.0, g);
        assert!((r.value - 3.0 / 7.0).abs() < 1e-15);
        let a = [1.0, 1.0, 1.0, 1.0];
        let r = cf_literal(&pd(&a), 0.0, g);
        assert_eq!(r.divisions_used, 4);
        assert!((r.value - cf_eval(&table(&a), 0.0)).abs() <= 1e-12);
    }

    #[test]
    fn guard_examples() {
        assert_eq!(guard_denominator(0.001, 0.01), 0.01);
        assert_eq!(guard_denominator(-0.005, 0.01), -0.01);
        assert_eq!(guard_denominator(5.0, 0.01), 5.0);
        assert_eq!(guard_denominator(0.0, 0.01), 0.01);
        assert_eq!(guard_denominator(-0.0, 0.01), 0.01);
    }

    #[test]
    fn guarded_table_near_pole() {
        // K_2 = 1 * -1 + 1 = 0 exactly
        let t = table(&[1.0, -1.0]);
        assert_eq!(t.continuants()[2], 0.0);
        assert_eq!(t.kd_guarded(), 0.01);
        assert!((t.inv_kd() * t.kd_guarded() - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn partial_examples() {
        assert_eq!(continuant_partial(&[2.0, 3.0], 1).unwrap(), 3.0);
        assert_eq!(continuant_partial(&[2.0, 3.0], 2).unwrap(), 2.0);
        assert_eq!(continuant_partial(&[1.0, 1.0, 1.0], 2).unwrap(), 1.0);
        assert!(continuant_partial(&[1.0, 2.0], 0).is_err());
        assert!(continuant_partial(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn identity_examples() {
        let r = check_continuant_identity(&[0.7, 1.3, -2.0, 0.4], 0).unwrap();
        assert_eq!(r.residual, 0.0);
        let r = check_continuant_identity(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(check_continuant_identity(&[1.0, 2.0, 3.0], 3).is_err());
    }

    #[test]
    fn determinant_examples() {
        assert!((tridiagonal_determinant(&[2.0, 3.0]).unwrap() - 7.0).abs() < 1e-12);
        assert!((tridiagonal_determinant(&[4.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!((tridiagonal_determinant(&[1.0; 5]).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn continuant_is_reversal_symmetric() {
        let a = [0.3, -1.7, 2.2, 0.9, -0.6];
        let mut r = a;
        r.reverse();
        assert!((continuant(&a) - continuant(&r)).abs() < 1e-12);
        assert_eq!(continuant(&a), table(&a).continuants()[5]);
    }
}
