//! Replaces noisy structures by their parametric fits: power-law-exponential
//! for `C` and the time-diagonal of `Dx`, a rank-one product of exponentials
//! for the off-diagonal of `D`, and an exponential for `V`.

use super::{fit_smooth, rank_one_approx, CovarianceSuite, FitFamily, FitRecord, SmoothFit};
use crate::error::Result;

/// Which structures to smooth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothingConfig {
    pub c: bool,
    pub d: bool,
    pub dx_diag: bool,
    pub v: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            c: true,
            d: true,
            dx_diag: true,
            v: true,
        }
    }
}

fn try_fit(curve: &[f64], family: FitFamily, what: &str) -> Option<SmoothFit> {
    match fit_smooth(curve, family) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("smoothing of {what} failed ({e}); keeping raw values");
            None
        }
    }
}

/// Returns a smoothed copy of `suite` and the fits used. Raw values are
/// kept wherever a fit fails.
pub fn smooth_suite(
    suite: &CovarianceSuite,
    cfg: &SmoothingConfig,
) -> Result<(CovarianceSuite, Vec<FitRecord>)> {
    let mut out = suite.clone();
    let mut fits = Vec::new();
    let n = suite.n_assets;
    let q = suite.max_lag;
    let pair = |a: usize, b: usize| super::unordered_index(a, b, n);
    for j in 0..n {
        let w = suite.weight_sigma(j);
        for l in 0..n {
            let ll = pair(l, l);
            if cfg.d && q >= 3 {
                let m: Vec<Vec<f64>> = (1..=q)
                    .map(|a| {
                        (1..=q)
                            .map(|b| if a == b { 0.0 } else { suite.d(j, l, a, b) })
                            .collect()
                    })
                    .collect();
                let r1 = rank_one_approx(&m)?;
                if let Some(f) = try_fit(&r1.k, FitFamily::Exp, "D eigenvector") {
                    for a in 1..=q {
                        for b in 1..=q {
                            if a != b {
                                let v = f.eval(a as f64) * f.eval(b as f64)
                                    + suite.mean_sigma2[j] * suite.gamma_at(l, l, a.abs_diff(b));
                                out.t3[w][ll].set(a, b, v);
                            }
                        }
                    }
                    fits.push(FitRecord {
                        structure: "D".into(),
                        i: j,
                        j: l,
                        fit: f,
                    });
                }
            }
            if cfg.c {
                let curve: Vec<f64> = (1..=q).map(|t| suite.c(j, l, t)).collect();
                if let Some(f) = try_fit(&curve, FitFamily::PowerLawExp, "C") {
                    for t in 1..=q {
                        let v = f.eval(t as f64) + suite.mean_sigma2[j] * suite.return_moment(l, l);
                        out.t3[w][ll].set(t, t, v);
                    }
                    fits.push(FitRecord {
                        structure: "C".into(),
                        i: j,
                        j: l,
                        fit: f,
                    });
                }
            }
            if cfg.v && !suite.symmetric {
                let curve: Vec<f64> = (1..=q).map(|t| suite.v(j, l, t)).collect();
                if let Some(f) = try_fit(&curve, FitFamily::Exp, "V") {
                    for t in 1..=q {
                        out.t2[w][l][t] = f.eval(t as f64);
                    }
                    fits.push(FitRecord {
                        structure: "V".into(),
                        i: j,
                        j: l,
                        fit: f,
                    });
                }
            }
        }
        if cfg.dx_diag && n == 2 {
            let curve: Vec<f64> = (1..=q).map(|t| suite.dx(j, t, t)).collect();
            if let Some(f) = try_fit(&curve, FitFamily::PowerLawExp, "Dx diagonal") {
                let cd = pair(0, 1);
                for t in 1..=q {
                    out.t3[w][cd].set(t, t, f.eval(t as f64));
                }
                fits.push(FitRecord {
                    structure: "Dx".into(),
                    i: j,
                    j: 1 - j,
                    fit: f,
                });
            }
        }
    }
    Ok((out, fits))
}
