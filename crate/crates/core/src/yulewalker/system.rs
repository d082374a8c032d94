//! Assembly of the moment equations from a covariance suite.
//!
//! For a target asset `j` the unknowns come in blocks: one block per source
//! asset `i` holding `[φ^j_i(1..q), K^j_i(pairs)]`, and for two assets an
//! extra block `[φ^j_×(1..q_aux), K^j_× upper pairs, K^j_× lower pairs]`.
//! Rows come from probing `σ²_j` against squared returns and return pairs
//! of each asset `l` (the `C` and `D` rows) and against cross products
//! `r_j r_j̄` (the `Dx` rows). The probe blocks `G[l][i]` and `H[l]` do not
//! depend on the target; only their right-hand sides do.

use super::builders::{a1_rect, a2_rect, a3_rect, a4_rect, causal};
use crate::exec::{map_range, Exec};
use crate::model::{n_pairs, pairs};
use crate::moments::CovarianceSuite;
use nalgebra::DMatrix;

/// Row of the calibration system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    /// `C_jl(τ)`.
    C { probe: usize, tau: usize },
    /// `D_jl(τ₁,τ₂)`, `τ₁ < τ₂`.
    D {
        probe: usize,
        tau1: usize,
        tau2: usize,
    },
    /// `Dx_j(τ₁,τ₂)` with `r_j` at lag `τ₁` and `r_j̄` at lag `τ₂`.
    Dx { tau1: usize, tau2: usize },
}

/// Unknown of the calibration system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownLabel {
    Phi {
        source: usize,
        tau: usize,
    },
    K {
        source: usize,
        tau1: usize,
        tau2: usize,
    },
    PhiCross {
        tau: usize,
    },
    /// `K_×(τ₁,τ₂)` multiplying `r_{j,t−τ₁} r_{j̄,t−τ₂}`.
    KCross {
        tau1: usize,
        tau2: usize,
    },
}

/// All blocks of the moment equations for every target.
#[derive(Debug, Clone)]
pub(crate) struct Blocks {
    pub n: usize,
    pub q: usize,
    pub q_aux: usize,
    pub k_cross: bool,
    /// `g[l][i]`: probe-`l` rows against source-`i` unknowns.
    pub g: Vec<Vec<DMatrix<f64>>>,
    /// `h[l]`: probe-`l` rows against the cross block.
    pub h: Vec<DMatrix<f64>>,
    /// `xs[j][i]`: `Dx_j` rows against source-`i` unknowns.
    pub xs: Vec<Vec<DMatrix<f64>>>,
    /// `xx[j]`: `Dx_j` rows against the cross block.
    pub xx: Vec<DMatrix<f64>>,
    /// `rhs_probe[j][l]`.
    pub rhs_probe: Vec<Vec<Vec<f64>>>,
    /// `rhs_x[j]`.
    pub rhs_x: Vec<Vec<f64>>,
}

pub(crate) fn vstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.view_mut((r, 0), p.shape()).copy_from(*p);
        r += p.nrows();
    }
    out
}

pub(crate) fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), p.shape()).copy_from(*p);
        c += p.ncols();
    }
    out
}

fn g_block(s: &CovarianceSuite, l: usize, i: usize, q: usize) -> DMatrix<f64> {
    let c_phi = a1_rect(
        |u| s.cr(l, i, u as isize),
        |u| s.cr(i, l, u as isize),
        s.cr(i, l, 0),
        q,
        q,
    );
    let c_k = a2_rect(causal(|a, b| s.dp(l, l, i, i, a, b)), q, q);
    let d_phi = a3_rect(causal(|a, b| s.dp(i, i, l, l, a, b)), q, q);
    let d_k = a4_rect(|a, b| s.dp(i, l, i, l, a, b), q, q);
    vstack(&[&hstack(&[&c_phi, &c_k]), &hstack(&[&d_phi, &d_k])])
}

fn h_block(s: &CovarianceSuite, l: usize, q: usize, q_aux: usize, k_cross: bool) -> DMatrix<f64> {
    let cc = s.equal_time_cov();
    let ml = s.return_moment(l, l);
    let c_x = a1_rect(
        |u| s.dp(l, l, 0, 1, u, u) - cc * ml,
        |u| s.dp(0, 1, l, l, u, u) - cc * ml,
        s.dp(0, 1, l, l, 0, 0) - cc * ml,
        q,
        q_aux,
    );
    let d_x = a3_rect(causal(|a, b| s.dp(0, 1, l, l, a, b)), q, q_aux);
    let base = vstack(&[&c_x, &d_x]);
    if k_cross {
        // K_× contributions to the C and D rows are not modelled.
        hstack(&[&base, &DMatrix::zeros(base.nrows(), 2 * n_pairs(q_aux))])
    } else {
        base
    }
}

fn xs_block(s: &CovarianceSuite, j: usize, i: usize, q: usize, q_aux: usize) -> DMatrix<f64> {
    let jb = 1 - j;
    let shift = s.equal_time_cov() * s.mean_sigma2[i];
    let diag_phi = a1_rect(
        |u| s.dp(j, jb, i, i, u, u),
        |u| s.dp(i, i, j, jb, u, u),
        s.dp(i, i, j, jb, 0, 0),
        q_aux,
        q,
    )
    .add_scalar(-shift);
    let diag_k = a2_rect(causal(|a, b| s.dp(j, jb, i, i, a, b)), q_aux, q);
    let up_phi = a3_rect(causal(|a, b| s.dp(i, i, j, jb, a, b)), q_aux, q);
    let up_k = a4_rect(|a, b| s.dp(i, j, i, jb, a, b), q_aux, q);
    let lo_phi = a3_rect(causal(|a, b| s.dp(i, i, jb, j, a, b)), q_aux, q);
    let lo_k = a4_rect(|a, b| s.dp(i, jb, i, j, a, b), q_aux, q);
    vstack(&[
        &hstack(&[&diag_phi, &diag_k]),
        &hstack(&[&up_phi, &up_k]),
        &hstack(&[&lo_phi, &lo_k]),
    ])
}

fn xx_block(s: &CovarianceSuite, j: usize, q_aux: usize, k_cross: bool) -> DMatrix<f64> {
    let jb = 1 - j;
    let c2 = s.equal_time_cov().powi(2);
    let diag_x = a1_rect(
        |u| s.dp(j, jb, j, jb, u, u) - c2,
        |u| s.dp(j, jb, j, jb, u, u) - c2,
        s.dp(j, jb, j, jb, 0, 0) - c2,
        q_aux,
        q_aux,
    );
    let up_x = a3_rect(causal(|a, b| s.dp(j, jb, j, jb, a, b)), q_aux, q_aux);
    let lo_x = a3_rect(causal(|a, b| s.dp(j, jb, jb, j, a, b)), q_aux, q_aux);
    if !k_cross {
        return vstack(&[&diag_x, &up_x, &lo_x]);
    }
    // The layouts carry a factor 2 for symmetric kernels; K_× is summed over
    // ordered lag pairs, so each half enters once.
    let diag_u = a2_rect(causal(|a, b| s.dp(j, jb, j, jb, a, b)), q_aux, q_aux) / 2.0;
    let diag_l = a2_rect(causal(|a, b| s.dp(j, jb, jb, j, a, b)), q_aux, q_aux) / 2.0;
    let up_u = a4_rect(|a, b| s.dp(j, j, jb, jb, a, b), q_aux, q_aux) / 2.0;
    let up_l = a4_rect(|a, b| s.dp(j, jb, j, jb, a, b), q_aux, q_aux) / 2.0;
    let lo_u = a4_rect(|a, b| s.dp(j, jb, jb, j, a, b), q_aux, q_aux) / 2.0;
    let lo_l = a4_rect(|a, b| s.dp(jb, jb, j, j, a, b), q_aux, q_aux) / 2.0;
    vstack(&[
        &hstack(&[&diag_x, &diag_u, &diag_l]),
        &hstack(&[&up_x, &up_u, &up_l]),
        &hstack(&[&lo_x, &lo_u, &lo_l]),
    ])
}

fn probe_rhs(s: &CovarianceSuite, j: usize, l: usize, q: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (1..=q).map(|t| s.c(j, l, t)).collect();
    v.extend(pairs(q).into_iter().map(|(a, b)| s.d(j, l, a, b)));
    v
}

fn x_rhs(s: &CovarianceSuite, j: usize, q_aux: usize) -> Vec<f64> {
    let shift = s.equal_time_cov() * s.mean_sigma2[j];
    let mut v: Vec<f64> = (1..=q_aux).map(|t| s.dx(j, t, t) - shift).collect();
    v.extend(pairs(q_aux).into_iter().map(|(a, b)| s.dx(j, a, b)));
    v.extend(pairs(q_aux).into_iter().map(|(c, d)| s.dx(j, d, c)));
    v
}

impl Blocks {
    pub fn build(s: &CovarianceSuite, q: usize, q_aux: usize, k_cross: bool, exec: Exec) -> Self {
        let n = s.n_assets;
        let mut g_flat = map_range(exec, n * n, |k| g_block(s, k / n, k % n, q)).into_iter();
        let g = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| g_flat.next().expect("block count"))
                    .collect()
            })
            .collect();
        let rhs_probe = (0..n)
            .map(|j| (0..n).map(|l| probe_rhs(s, j, l, q)).collect())
            .collect();
        let (h, xs, xx, rhs_x) = if n == 2 {
            let h = map_range(exec, 2, |l| h_block(s, l, q, q_aux, k_cross));
            let mut xs_flat =
                map_range(exec, 4, |k| xs_block(s, k / 2, k % 2, q, q_aux)).into_iter();
            let xs = (0..2)
                .map(|_| {
                    (0..2)
                        .map(|_| xs_flat.next().expect("block count"))
                        .collect()
                })
                .collect();
            let xx = map_range(exec, 2, |j| xx_block(s, j, q_aux, k_cross));
            let rhs_x = (0..2).map(|j| x_rhs(s, j, q_aux)).collect();
            (h, xs, xx, rhs_x)
        } else {
            (Vec::new(), Vec::new(), Vec::new(), Vec::new())
        };
        Self {
            n,
            q,
            q_aux,
            k_cross,
            g,
            h,
            xs,
            xx,
            rhs_probe,
            rhs_x,
        }
    }

    /// Length of a source block `[φ, K]`.
    pub fn quad_len(&self) -> usize {
        self.q + n_pairs(self.q)
    }

    /// Length of the cross block `[φ_×, K_×]`.
    pub fn x_len(&self) -> usize {
        self.q_aux
            + if self.k_cross {
                2 * n_pairs(self.q_aux)
            } else {
                0
            }
    }

    pub fn probe_rows(&self, probe: usize) -> Vec<RowLabel> {
        let mut v: Vec<RowLabel> = (1..=self.q).map(|tau| RowLabel::C { probe, tau }).collect();
        v.extend(
            pairs(self.q)
                .into_iter()
                .map(|(tau1, tau2)| RowLabel::D { probe, tau1, tau2 }),
        );
        v
    }

    pub fn x_rows(&self) -> Vec<RowLabel> {
        let qa = self.q_aux;
        let mut v: Vec<RowLabel> = (1..=qa)
            .map(|t| RowLabel::Dx { tau1: t, tau2: t })
            .collect();
        v.extend(
            pairs(qa)
                .into_iter()
                .map(|(a, b)| RowLabel::Dx { tau1: a, tau2: b }),
        );
        v.extend(
            pairs(qa)
                .into_iter()
                .map(|(c, d)| RowLabel::Dx { tau1: d, tau2: c }),
        );
        v
    }

    pub fn source_unknowns(&self, source: usize) -> Vec<UnknownLabel> {
        let mut v: Vec<UnknownLabel> = (1..=self.q)
            .map(|tau| UnknownLabel::Phi { source, tau })
            .collect();
        v.extend(
            pairs(self.q)
                .into_iter()
                .map(|(tau1, tau2)| UnknownLabel::K { source, tau1, tau2 }),
        );
        v
    }

    pub fn x_unknowns(&self) -> Vec<UnknownLabel> {
        let qa = self.q_aux;
        let mut v: Vec<UnknownLabel> = (1..=qa).map(|tau| UnknownLabel::PhiCross { tau }).collect();
        if self.k_cross {
            v.extend(
                pairs(qa)
                    .into_iter()
                    .map(|(a, b)| UnknownLabel::KCross { tau1: a, tau2: b }),
            );
            v.extend(
                pairs(qa)
                    .into_iter()
                    .map(|(c, d)| UnknownLabel::KCross { tau1: d, tau2: c }),
            );
        }
        v
    }
}
