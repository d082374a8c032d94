//! Rank-one reduction of a symmetric matrix whose diagonal is unknown.

use super::fit::{fit_smooth, FitFamily, SmoothFit};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_desc;
use nalgebra::DMatrix;

/// Refinement sweeps used by [`rank_one_approx`].
pub const DEFAULT_REFINE_ITERS: usize = 2000;

/// Output of [`rank_one_approx`].
#[derive(Debug, Clone, PartialEq)]
pub struct RankOne {
    /// `k̃` with `Σ k̃ ≥ 0`.
    pub k: Vec<f64>,
    /// `λ₁ / |λ₂|` of the input; infinite when `λ₂ = 0`.
    pub eigenvalue_ratio: f64,
    pub iterations: usize,
}

impl RankOne {
    /// Exponential fit of `k̃` on lags `1..=len`.
    pub fn smoothed(&self) -> Result<SmoothFit> {
        fit_smooth(&self.k, FitFamily::Exp)
    }
}

/// Scaled leading eigenvector with the sign and tie-break conventions.
fn leading(m: &DMatrix<f64>) -> (Vec<f64>, f64, f64) {
    let n = m.nrows();
    let (vals, vecs) = symmetric_eigen_desc(m.clone());
    let normalize = |c: usize| -> Vec<f64> {
        let mut v: Vec<f64> = vecs.column(c).iter().copied().collect();
        let s: f64 = v.iter().sum();
        let flip = if s != 0.0 {
            s < 0.0
        } else {
            v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
        };
        if flip {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let mut v = normalize(0);
    let l1 = vals[0];
    let l2 = if n > 1 { vals[1] } else { 0.0 };
    if n > 1 && (l1 - l2).abs() <= 1e-12 * l1.abs().max(1e-300) {
        let w = normalize(1);
        if w.iter()
            .zip(&v)
            .find(|(a, b)| a != b)
            .is_some_and(|(a, b)| a > b)
        {
            v = w;
        }
    }
    let scale = l1.max(0.0).sqrt();
    (v.into_iter().map(|x| x * scale).collect(), l1, l2)
}

/// Rank-one approximation `k̃ k̃ᵀ` of the off-diagonal of a symmetric matrix,
/// with [`DEFAULT_REFINE_ITERS`] diagonal-imputation sweeps.
pub fn rank_one_approx(offdiag: &[Vec<f64>]) -> Result<RankOne> {
    rank_one_approx_with(offdiag, DEFAULT_REFINE_ITERS)
}

/// Rank-one approximation of the off-diagonal of `offdiag`; its diagonal is
/// ignored. With `refine_iters = 0` the result is the scaled leading
/// eigenpair `√λ₁·v`. Each refinement sweep replaces the diagonal by the
/// current `k̃²` and recomputes the leading eigenpair, which converges to a
/// vector whose outer product matches the off-diagonal exactly when the
/// input is rank one off the diagonal.
pub fn rank_one_approx_with(offdiag: &[Vec<f64>], refine_iters: usize) -> Result<RankOne> {
    let n = offdiag.len();
    if offdiag.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("rank-one input must be square".into()));
    }
    let mut m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { offdiag[i][j] });
    let scale = m.amax();
    let asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0, f64::max);
    if asym > 1e-12 * scale.max(1e-300) {
        return Err(Error::NonSymmetric(asym));
    }
    if n == 0 || scale == 0.0 {
        return Ok(RankOne {
            k: vec![0.0; n],
            eigenvalue_ratio: f64::INFINITY,
            iterations: 0,
        });
    }
    let (mut k, l1, l2) = leading(&m);
    let eigenvalue_ratio = if l2 == 0.0 {
        f64::INFINITY
    } else {
        l1 / l2.abs()
    };
    let mut iterations = 0;
    for _ in 0..refine_iters {
        if k.iter().all(|x| *x == 0.0) {
            break;
        }
        for (i, ki) in k.iter().enumerate() {
            m[(i, i)] = ki * ki;
        }
        let (next, _, _) = leading(&m);
        iterations += 1;
        let delta = next
            .iter()
            .zip(&k)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let size = next.iter().map(|x| x.abs()).fold(0.0, f64::max);
        k = next;
        if delta <= 1e-15 * size {
            break;
        }
    }
    Ok(RankOne {
        k,
        eigenvalue_ratio,
        iterations,
    })
}
