//! The five calibration-matrix layouts.
//!
//! Single-lag kernels are indexed by `τ = 1..q`; two-lag kernels by pairs
//! `τ₁ < τ₂` in [`pair_index`](crate::model::pair_index) order. The
//! rectangular variants allow the row grid and the column grid to differ,
//! which happens when kernels of size `q` feed structures of size `q_aux`.

use crate::error::{Error, Result};
use crate::model::{n_pairs, pair_index, pairs};
use nalgebra::DMatrix;

/// Wraps a two-lag structure so that any negative argument gives zero.
pub fn causal<F: Fn(usize, usize) -> f64>(f: F) -> impl Fn(isize, isize) -> f64 {
    move |a, b| {
        if a < 0 || b < 0 {
            0.0
        } else {
            f(a as usize, b as usize)
        }
    }
}

/// Row `n`, column `m` (both 1-based): `Σ` on the diagonal, `up(m − n)`
/// above it and `down(n − m)` below it.
pub fn a1_rect(
    up: impl Fn(usize) -> f64,
    down: impl Fn(usize) -> f64,
    sigma: f64,
    rows: usize,
    cols: usize,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |r, c| {
        let (n, m) = (r + 1, c + 1);
        match m.cmp(&n) {
            std::cmp::Ordering::Equal => sigma,
            std::cmp::Ordering::Greater => up(m - n),
            std::cmp::Ordering::Less => down(n - m),
        }
    })
}

/// Row `n`, column `(k₁,k₂)`: `2·D(k₁ − n, k₂ − n)`.
pub fn a2_rect(d: impl Fn(isize, isize) -> f64, rows: usize, cols: usize) -> DMatrix<f64> {
    let ps = pairs(cols);
    DMatrix::from_fn(rows, ps.len(), |r, c| {
        let n = (r + 1) as isize;
        let (k1, k2) = ps[c];
        2.0 * d(k1 as isize - n, k2 as isize - n)
    })
}

/// Row `(k₁,k₂)`, column `n`: `D(k₁ − n, k₂ − n)`.
pub fn a3_rect(d: impl Fn(isize, isize) -> f64, rows: usize, cols: usize) -> DMatrix<f64> {
    let ps = pairs(rows);
    DMatrix::from_fn(ps.len(), cols, |r, c| {
        let n = (c + 1) as isize;
        let (k1, k2) = ps[r];
        d(k1 as isize - n, k2 as isize - n)
    })
}

/// Row `(τ₁,τ₂)`, column `(a,b)`: `2·D(b − τ₁, τ₂ − τ₁)` when `a = τ₁`,
/// zero otherwise.
pub fn a4_rect(d: impl Fn(usize, usize) -> f64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_pairs(rows), n_pairs(cols));
    for (r, (t1, t2)) in pairs(rows).into_iter().enumerate() {
        if t1 >= cols {
            continue;
        }
        for b in (t1 + 1)..=cols {
            m[(r, pair_index(t1, b, cols))] = 2.0 * d(b - t1, t2 - t1);
        }
    }
    m
}

/// Row `τ`, column `(τ, b)`: `D(b − τ)`; zero elsewhere.
pub fn a5_rect(d: impl Fn(usize) -> f64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, n_pairs(cols));
    for tau in 1..=rows.min(cols) {
        for b in (tau + 1)..=cols {
            m[(tau - 1, pair_index(tau, b, cols))] = d(b - tau);
        }
    }
    m
}

fn check_len(what: &'static str, v: &[f64], q: usize) -> Result<()> {
    let need = q.saturating_sub(1);
    if v.len() < need {
        return Err(Error::LengthMismatch {
            what,
            expected: need,
            got: v.len(),
        });
    }
    Ok(())
}

/// `q × q` layout with `Σ` on the diagonal, `d_up[k−1]` at distance `k`
/// above it and `d_down[k−1]` at distance `k` below it.
pub fn build_a1(d_up: &[f64], d_down: &[f64], sigma: f64, q: usize) -> Result<DMatrix<f64>> {
    check_len("A1 upper structure", d_up, q)?;
    check_len("A1 lower structure", d_down, q)?;
    Ok(a1_rect(|k| d_up[k - 1], |k| d_down[k - 1], sigma, q, q))
}

/// `q × q(q−1)/2` layout, row `n` holding `2·D(k₁−n, k₂−n)`.
pub fn build_a2(d: &dyn Fn(isize, isize) -> f64, q: usize) -> DMatrix<f64> {
    a2_rect(d, q, q)
}

/// `q(q−1)/2 × q` layout, equal to `build_a2(d, q)ᵀ / 2`.
pub fn build_a3(d: &dyn Fn(isize, isize) -> f64, q: usize) -> DMatrix<f64> {
    a3_rect(d, q, q)
}

/// Square layout of side `q(q−1)/2`, block diagonal by the first lag.
pub fn build_a4(d: &dyn Fn(usize, usize) -> f64, q: usize) -> DMatrix<f64> {
    a4_rect(d, q, q)
}

/// `q × q(q−1)/2` layout, row `τ` holding `D(1), D(2), …` from column `(τ, τ+1)`.
pub fn build_a5(d: &[f64], q: usize) -> Result<DMatrix<f64>> {
    check_len("A5 structure", d, q)?;
    Ok(a5_rect(|k| d[k - 1], q, q))
}
