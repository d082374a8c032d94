//! Dense least squares and symmetric eigen helpers on top of `nalgebra`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Condition number above which an unregularized system is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Householder QR factorization of a (possibly ridge-augmented) design
/// matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    n_rows: usize,
    n_cols: usize,
    aug_rows: usize,
    ridge: f64,
    cond: f64,
}

impl LeastSquares {
    /// Factors `[A; √ridge·I]`. Requires at least as many rows as columns
    /// once augmented.
    pub fn new(a: DMatrix<f64>, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ridge must be >= 0, got {ridge}"
            )));
        }
        let (n_rows, n_cols) = a.shape();
        let a = if ridge > 0.0 {
            let mut aug = DMatrix::zeros(n_rows + n_cols, n_cols);
            aug.view_mut((0, 0), (n_rows, n_cols)).copy_from(&a);
            let s = ridge.sqrt();
            for k in 0..n_cols {
                aug[(n_rows + k, k)] = s;
            }
            aug
        } else {
            a
        };
        if a.nrows() < n_cols {
            return Err(Error::InvalidInput(format!(
                "underdetermined system: {} rows for {} unknowns",
                a.nrows(),
                n_cols
            )));
        }
        let aug_rows = a.nrows();
        let qr = a.qr();
        let r = qr.r();
        let cond = cond1_upper(&r);
        Ok(Self {
            qr,
            r,
            n_rows,
            n_cols,
            aug_rows,
            ridge,
            cond,
        })
    }

    /// Estimated 1-norm condition number of the triangular factor.
    pub fn cond(&self) -> f64 {
        self.cond
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Minimizes `‖Ax − b‖² + ridge·‖x‖²`. A zero right-hand side returns the
    /// zero vector even for a singular design.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n_rows {
            return Err(Error::LengthMismatch {
                what: "right-hand side",
                expected: self.n_rows,
                got: b.len(),
            });
        }
        if b.iter().all(|v| *v == 0.0) {
            return Ok(vec![0.0; self.n_cols]);
        }
        if self.ridge == 0.0 && !(self.cond <= MAX_CONDITION) {
            return Err(Error::SingularSystem { cond: self.cond });
        }
        let mut rhs = DVector::zeros(self.aug_rows);
        rhs.rows_mut(0, self.n_rows).copy_from_slice(b);
        self.qr.q_tr_mul(&mut rhs);
        let top = rhs.rows(0, self.n_cols).into_owned();
        let x = self
            .r
            .solve_upper_triangular(&top)
            .ok_or(Error::SingularSystem {
                cond: f64::INFINITY,
            })?;
        Ok(x.iter().copied().collect())
    }
}

/// One-shot least squares; returns the solution and the condition estimate.
pub fn solve_least_squares(a: DMatrix<f64>, b: &[f64], ridge: f64) -> Result<(Vec<f64>, f64)> {
    let ls = LeastSquares::new(a, ridge)?;
    let x = ls.solve(b)?;
    Ok((x, ls.cond()))
}

/// Hager's estimate of `‖R‖₁·‖R⁻¹‖₁` for an upper-triangular `R`. Returns
/// infinity when `R` has a zero on its diagonal.
pub fn cond1_upper(r: &DMatrix<f64>) -> f64 {
    let n = r.ncols();
    if n == 0 {
        return 1.0;
    }
    if (0..n).any(|k| r[(k, k)] == 0.0 || !r[(k, k)].is_finite()) {
        return f64::INFINITY;
    }
    let norm_r = (0..n)
        .map(|j| r.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let rt = r.transpose();
    let solve = |m: &DMatrix<f64>, v: &DVector<f64>, upper: bool| -> Option<DVector<f64>> {
        if upper {
            m.solve_upper_triangular(v)
        } else {
            m.solve_lower_triangular(v)
        }
    };
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let Some(y) = solve(r, &x, true) else {
            return f64::INFINITY;
        };
        let y_norm: f64 = y.iter().map(|v| v.abs()).sum();
        if !y_norm.is_finite() {
            return f64::INFINITY;
        }
        if y_norm <= est {
            break;
        }
        est = y_norm;
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = solve(&rt, &xi, false) else {
            return f64::INFINITY;
        };
        let (jmax, zmax) =
            z.iter().enumerate().fold(
                (0, 0.0),
                |acc, (j, v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc },
            );
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[jmax] = 1.0;
    }
    norm_r * est
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing algebraic order. Column `k` of the returned matrix is the
/// eigenvector for the `k`-th eigenvalue.
pub fn symmetric_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Builds a dense matrix from row vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}
