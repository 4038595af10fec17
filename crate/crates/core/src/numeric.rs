//! Scalar abstraction and the small dense linear algebra the cost model and
//! the surrogate need.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64` literals and measurements.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every float type")
    }

    fn from_count(v: u64) -> Self {
        Self::from_u64(v).expect("u64 converts to every float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Symmetric ratio error, `max(a/b, b/a)`.
pub fn qerror<F: Scalar>(measured: F, target: F) -> F {
    let a = measured / target;
    let b = target / measured;
    if a > b {
        a
    } else {
        b
    }
}

/// Q-error with both inputs floored at `eta` first.
pub fn qerror_floored<F: Scalar>(measured: F, target: F, eta: F) -> F {
    qerror(measured.max(eta), target.max(eta))
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) over an unsorted slice.
pub fn percentile<F: Scalar>(values: &[F], q: F) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<F> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q.max(F::zero()).min(F::one()) * F::from_count(sorted.len() as u64 - 1);
    let lo = pos.floor();
    let lo_idx = lo.to_usize().unwrap_or(0);
    let hi_idx = (lo_idx + 1).min(sorted.len() - 1);
    let frac = pos - lo;
    Some(sorted[lo_idx] + (sorted[hi_idx] - sorted[lo_idx]) * frac)
}

pub fn median<F: Scalar>(values: &[F]) -> Option<F> {
    percentile(values, F::lit(0.5))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveError {
    /// Column `usize` is (numerically) a combination of earlier columns.
    RankDeficient(usize),
    Shape,
}

/// Least squares `min ||A x - y||` via Householder QR. `a` is row-major,
/// `rows x cols`, rows ≥ cols. Columns are rescaled to unit max-norm first.
pub fn least_squares<F: Scalar>(a: &[Vec<F>], y: &[F]) -> Result<Vec<F>, SolveError> {
    let m = a.len();
    if m == 0 || y.len() != m {
        return Err(SolveError::Shape);
    }
    let n = a[0].len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if m < n || a.iter().any(|r| r.len() != n) {
        return Err(SolveError::Shape);
    }
    let mut scale = vec![F::zero(); n];
    for row in a {
        for (j, v) in row.iter().enumerate() {
            scale[j] = scale[j].max(v.abs());
        }
    }
    if let Some(j) = scale.iter().position(|s| *s == F::zero()) {
        return Err(SolveError::RankDeficient(j));
    }
    // column-major working copy
    let mut r: Vec<Vec<F>> = (0..n)
        .map(|j| a.iter().map(|row| row[j] / scale[j]).collect())
        .collect();
    let mut b: Vec<F> = y.to_vec();
    let mut diag_ref = F::zero();
    for k in 0..n {
        let norm = r[k][k..].iter().fold(F::zero(), |s, v| s + *v * *v).sqrt();
        diag_ref = diag_ref.max(norm);
        let tol = diag_ref * F::epsilon() * F::from_count((m * n) as u64).max(F::lit(1e3));
        if norm <= tol {
            return Err(SolveError::RankDeficient(k));
        }
        let alpha = if r[k][k] > F::zero() { -norm } else { norm };
        let mut v: Vec<F> = r[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = v.iter().fold(F::zero(), |s, x| s + *x * *x);
        if vnorm2 == F::zero() {
            continue;
        }
        for col in r.iter_mut().skip(k) {
            let dot = v
                .iter()
                .zip(&col[k..])
                .fold(F::zero(), |s, (p, q)| s + *p * *q);
            let f = (dot + dot) / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(&v) {
                *c -= f * *vi;
            }
        }
        let dot = v.iter().zip(&b[k..]).fold(F::zero(), |s, (p, q)| s + *p * *q);
        let f = (dot + dot) / vnorm2;
        for (c, vi) in b[k..].iter_mut().zip(&v) {
            *c -= f * *vi;
        }
    }
    let mut x = vec![F::zero(); n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in (k + 1)..n {
            s -= r[j][k] * x[j];
        }
        x[k] = s / r[k][k];
    }
    Ok(x.into_iter().zip(scale).map(|(v, s)| v / s).collect())
}

/// Nonnegative least squares by clamp-and-refit: solve, zero the most
/// negative coefficient, refit the remaining columns, repeat.
/// Columns that turn out to be linearly dependent on the active set are
/// dropped unless they are listed in `required`.
pub fn nonneg_least_squares<F: Scalar>(
    a: &[Vec<F>],
    y: &[F],
    required: &[usize],
) -> Result<Vec<F>, SolveError> {
    let n = a.first().map(|r| r.len()).unwrap_or(0);
    let mut active: Vec<usize> = (0..n).collect();
    loop {
        if active.is_empty() {
            return Ok(vec![F::zero(); n]);
        }
        let sub: Vec<Vec<F>> = a
            .iter()
            .map(|row| active.iter().map(|&j| row[j]).collect())
            .collect();
        match least_squares(&sub, y) {
            Err(SolveError::RankDeficient(k)) => {
                let col = active[k];
                if required.contains(&col) {
                    return Err(SolveError::RankDeficient(col));
                }
                active.remove(k);
            }
            Err(e) => return Err(e),
            Ok(coef) => {
                let worst = coef
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c < F::zero())
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal));
                match worst {
                    Some((k, _)) => {
                        active.remove(k);
                    }
                    None => {
                        let mut full = vec![F::zero(); n];
                        for (k, &j) in active.iter().enumerate() {
                            full[j] = coef[k];
                        }
                        return Ok(full);
                    }
                }
            }
        }
    }
}

/// Cholesky factor `L` of a symmetric positive definite matrix (row-major).
pub fn cholesky<F: Scalar>(m: &[Vec<F>]) -> Option<Vec<Vec<F>>> {
    let n = m.len();
    let mut l = vec![vec![F::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= F::zero() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L z = b` for lower-triangular `L`.
pub fn forward_sub<F: Scalar>(l: &[Vec<F>], b: &[F]) -> Vec<F> {
    let n = b.len();
    let mut z = vec![F::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    z
}

/// Solves `L^T x = z` for lower-triangular `L`.
pub fn backward_sub_t<F: Scalar>(l: &[Vec<F>], z: &[F]) -> Vec<F> {
    let n = z.len();
    let mut x = vec![F::zero(); n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qerror_basic() {
        assert_eq!(qerror(1.5f64, 1.5), 1.0);
        assert_eq!(qerror(2.0f64, 1.0), 2.0);
        assert_eq!(qerror(1.0f64, 2.0), 2.0);
        assert_eq!(qerror_floored(0.0f64, 0.0, 1.0), 1.0);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0f64, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 1.0), Some(4.0));
        assert_eq!(median(&v), Some(2.5));
        assert!((percentile(&v, 0.9).unwrap() - 3.7).abs() < 1e-12);
        assert_eq!(percentile::<f64>(&[], 0.5), None);
    }

    #[test]
    fn least_squares_recovers_line() {
        let a: Vec<Vec<f64>> = (1..=10).map(|i| vec![i as f64 * 100.0, 1.0]).collect();
        let y: Vec<f64> = (1..=10).map(|i| 0.001 * i as f64 * 100.0 + 5.0).collect();
        let x = least_squares(&a, &y).unwrap();
        assert!((x[0] - 0.001).abs() < 1e-12);
        assert!((x[1] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn least_squares_detects_collinear_columns() {
        let a: Vec<Vec<f64>> = (1..=5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (1..=5).map(|i| i as f64).collect();
        assert_eq!(least_squares(&a, &y), Err(SolveError::RankDeficient(1)));
    }

    #[test]
    fn nonneg_clamps_and_refits() {
        // y = 2 x exactly; an intercept column would fit slightly negative with noise
        let a: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 + 1.0, 1.0]).collect();
        let y: Vec<f64> = (0..8)
            .map(|i| 2.0 * (i as f64 + 1.0) - 0.5 + if i % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let x = nonneg_least_squares(&a, &y, &[0]).unwrap();
        assert_eq!(x[1], 0.0);
        assert!(x[0] > 0.0);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let m = vec![vec![4.0f64, 2.0], vec![2.0, 3.0]];
        let l = cholesky(&m).unwrap();
        let b = [2.0, 1.0];
        let x = backward_sub_t(&l, &forward_sub(&l, &b));
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn works_for_f32() {
        let a: Vec<Vec<f32>> = (1..=6).map(|i| vec![i as f32, 1.0]).collect();
        let y: Vec<f32> = (1..=6).map(|i| 3.0 * i as f32 + 1.0).collect();
        let x = least_squares(&a, &y).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-4);
        assert!((x[1] - 1.0).abs() < 1e-3);
    }
}
