//! Bounded nonlinear least squares for the two smoothing families.
//!
//! The amplitude enters linearly and is profiled out at every start; the
//! remaining parameters are refined by a projected Levenberg-Marquardt
//! iteration with decay rates in log coordinates. Parameters that settle
//! next to a bound are snapped onto it and the rest re-polished.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub const ALPHA_BOUNDS: (f64, f64) = (0.0, 5.0);
pub const RATE_BOUNDS: (f64, f64) = (1e-8, 1e2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFamily {
    /// `n·e^{−βτ}·(1+γτ)^{−α}`, parameters `[n, α, β, γ]`
    PowerLawExp,
    /// `a·e^{−bτ}`, parameters `[a, b]`
    Exp,
}

impl FitFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            FitFamily::PowerLawExp => "power_law_exp",
            FitFamily::Exp => "exp",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            FitFamily::PowerLawExp => &["n", "alpha", "beta", "gamma"],
            FitFamily::Exp => &["a", "b"],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "power_law_exp" => Ok(FitFamily::PowerLawExp),
            "exp" => Ok(FitFamily::Exp),
            _ => Err(Error::Parse(format!("unknown fit family '{s}'"))),
        }
    }
}

/// Result of [`fit_smooth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFit {
    pub family: FitFamily,
    pub params: Vec<f64>,
    pub sse: f64,
}

impl SmoothFit {
    pub fn eval(&self, tau: f64) -> f64 {
        model(self.family, &self.params, tau)
    }

    /// Values on `τ = 1..=q`.
    pub fn tabulate(&self, q: usize) -> Vec<f64> {
        (1..=q).map(|t| self.eval(t as f64)).collect()
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.family
            .param_names()
            .iter()
            .position(|p| *p == name)
            .map(|k| self.params[k])
    }
}

fn model(family: FitFamily, p: &[f64], tau: f64) -> f64 {
    match family {
        FitFamily::PowerLawExp => p[0] * (-p[2] * tau).exp() * (1.0 + p[3] * tau).powf(-p[1]),
        FitFamily::Exp => p[0] * (-p[1] * tau).exp(),
    }
}

/// Shape without the amplitude and its derivatives with respect to the
/// internal coordinates (`α`, `ln β`, `ln γ`) or (`ln b`).
fn shape_and_jacobian(family: FitFamily, nl: &[f64], tau: f64) -> (f64, [f64; 3]) {
    match family {
        FitFamily::PowerLawExp => {
            let (alpha, beta, gamma) = (nl[0], nl[1], nl[2]);
            let base = 1.0 + gamma * tau;
            let g = (-beta * tau).exp() * base.powf(-alpha);
            (
                g,
                [
                    -g * base.ln(),
                    -g * tau * beta,
                    -g * alpha * tau * gamma / base,
                ],
            )
        }
        FitFamily::Exp => {
            let b = nl[0];
            let g = (-b * tau).exp();
            (g, [-g * tau * b, 0.0, 0.0])
        }
    }
}

/// Internal coordinates: α stays linear, rates go to logs.
fn to_internal(family: FitFamily, nl: &[f64]) -> Vec<f64> {
    match family {
        FitFamily::PowerLawExp => vec![nl[0], nl[1].ln(), nl[2].ln()],
        FitFamily::Exp => vec![nl[0].ln()],
    }
}

fn from_internal(family: FitFamily, x: &[f64]) -> Vec<f64> {
    let (lo, hi) = RATE_BOUNDS;
    match family {
        FitFamily::PowerLawExp => {
            vec![
                x[0].clamp(ALPHA_BOUNDS.0, ALPHA_BOUNDS.1),
                x[1].exp().clamp(lo, hi),
                x[2].exp().clamp(lo, hi),
            ]
        }
        FitFamily::Exp => vec![x[0].exp().clamp(lo, hi)],
    }
}

fn clamp_internal(family: FitFamily, x: &mut [f64]) {
    let (lo, hi) = (RATE_BOUNDS.0.ln(), RATE_BOUNDS.1.ln());
    match family {
        FitFamily::PowerLawExp => {
            x[0] = x[0].clamp(ALPHA_BOUNDS.0, ALPHA_BOUNDS.1);
            x[1] = x[1].clamp(lo, hi);
            x[2] = x[2].clamp(lo, hi);
        }
        FitFamily::Exp => x[0] = x[0].clamp(lo, hi),
    }
}

struct Problem<'a> {
    family: FitFamily,
    taus: &'a [f64],
    ys: &'a [f64],
    /// Internal coordinates pinned at their current value.
    frozen: Vec<bool>,
}

impl Problem<'_> {
    fn n_nl(&self) -> usize {
        match self.family {
            FitFamily::PowerLawExp => 3,
            FitFamily::Exp => 1,
        }
    }

    /// Best amplitude for fixed shape, and the resulting sse.
    fn profile(&self, x: &[f64]) -> (f64, f64) {
        let nl = from_internal(self.family, x);
        let (mut gy, mut gg) = (0.0, 0.0);
        for (&t, &y) in self.taus.iter().zip(self.ys) {
            let g = shape_and_jacobian(self.family, &nl, t).0;
            gy += g * y;
            gg += g * g;
        }
        let amp = if gg > 0.0 { gy / gg } else { 0.0 };
        let sse = self
            .taus
            .iter()
            .zip(self.ys)
            .map(|(&t, &y)| {
                let r = amp * shape_and_jacobian(self.family, &nl, t).0 - y;
                r * r
            })
            .sum();
        (amp, sse)
    }

    /// Full Levenberg-Marquardt over `[amplitude, internal…]`.
    fn refine(&self, x0: &[f64], max_iter: usize) -> (f64, Vec<f64>, f64) {
        let k = self.n_nl();
        let (mut amp, mut sse) = self.profile(x0);
        let mut x = x0.to_vec();
        let mut mu = 1e-3;
        let m = self.taus.len();
        for _ in 0..max_iter {
            let nl = from_internal(self.family, &x);
            let mut jac = DMatrix::zeros(m, k + 1);
            let mut res = DVector::zeros(m);
            for (row, (&t, &y)) in self.taus.iter().zip(self.ys).enumerate() {
                let (g, dg) = shape_and_jacobian(self.family, &nl, t);
                res[row] = amp * g - y;
                jac[(row, 0)] = g;
                for c in 0..k {
                    jac[(row, c + 1)] = if self.frozen[c] { 0.0 } else { amp * dg[c] };
                }
            }
            let mut jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * &res;
            for c in 0..k {
                if self.frozen[c] {
                    jtj[(c + 1, c + 1)] = 1.0;
                }
            }
            if jtr.amax() <= 1e-300 {
                break;
            }
            let mut improved = false;
            for _ in 0..30 {
                let mut a = jtj.clone();
                for d in 0..=k {
                    a[(d, d)] += mu * jtj[(d, d)].max(1e-300);
                }
                let Some(step) = a.clone().cholesky().map(|c| c.solve(&(-&jtr))) else {
                    mu *= 10.0;
                    continue;
                };
                let new_amp = amp + step[0];
                let mut nx: Vec<f64> = x
                    .iter()
                    .zip(step.iter().skip(1))
                    .map(|(a, s)| a + s)
                    .collect();
                clamp_internal(self.family, &mut nx);
                for c in 0..k {
                    if self.frozen[c] {
                        nx[c] = x[c];
                    }
                }
                let nnl = from_internal(self.family, &nx);
                let new_sse: f64 = self
                    .taus
                    .iter()
                    .zip(self.ys)
                    .map(|(&t, &y)| {
                        let r = new_amp * shape_and_jacobian(self.family, &nnl, t).0 - y;
                        r * r
                    })
                    .sum();
                if new_sse.is_finite() && new_sse < sse {
                    let rel = (sse - new_sse) / sse.max(1e-300);
                    amp = new_amp;
                    x = nx;
                    sse = new_sse;
                    mu = (mu * 0.3).max(1e-15);
                    improved = rel > 1e-15;
                    break;
                }
                mu *= 10.0;
                if mu > 1e20 {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
        (amp, x, sse)
    }
}

fn starts(family: FitFamily) -> Vec<Vec<f64>> {
    match family {
        FitFamily::PowerLawExp => {
            let mut v = Vec::with_capacity(8);
            for &alpha in &[0.5, 1.5] {
                for &beta in &[1e-3, 0.1] {
                    for &gamma in &[0.1, 10.0] {
                        v.push(vec![alpha, beta, gamma]);
                    }
                }
            }
            v
        }
        FitFamily::Exp => [1e-3, 3e-3, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0]
            .iter()
            .map(|b| vec![*b])
            .collect(),
    }
}

/// Fits `family` to `curve` sampled at `τ = 1..=curve.len()`.
pub fn fit_smooth(curve: &[f64], family: FitFamily) -> Result<SmoothFit> {
    let taus: Vec<f64> = (1..=curve.len()).map(|t| t as f64).collect();
    fit_smooth_at(&taus, curve, family)
}

/// Fits `family` to the points `(taus[k], values[k])`.
pub fn fit_smooth_at(taus: &[f64], values: &[f64], family: FitFamily) -> Result<SmoothFit> {
    if taus.len() != values.len() {
        return Err(Error::LengthMismatch {
            what: "fit abscissae",
            expected: values.len(),
            got: taus.len(),
        });
    }
    let n_params = family.param_names().len();
    if values.len() < n_params + 2 {
        return Err(Error::InvalidInput(format!(
            "curve of length {} too short for {} parameters",
            values.len(),
            n_params
        )));
    }
    if values.iter().chain(taus).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in curve".into()));
    }
    let mut prob = Problem {
        family,
        taus,
        ys: values,
        frozen: vec![false; 3],
    };
    let k = prob.n_nl();
    let scale: f64 = values.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for s in starts(family) {
        let x0 = to_internal(family, &s);
        let (amp, x, sse) = prob.refine(&x0, 500);
        if !sse.is_finite() || !amp.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| sse < b.2) {
            best = Some((amp, x, sse));
        }
    }
    let Some((mut amp, mut x, mut sse)) = best else {
        return Err(Error::FitDiverged);
    };

    // Snap parameters sitting near a bound and polish the others.
    let bounds_internal: Vec<(f64, f64)> = match family {
        FitFamily::PowerLawExp => vec![
            ALPHA_BOUNDS,
            (RATE_BOUNDS.0.ln(), RATE_BOUNDS.1.ln()),
            (RATE_BOUNDS.0.ln(), RATE_BOUNDS.1.ln()),
        ],
        FitFamily::Exp => vec![(RATE_BOUNDS.0.ln(), RATE_BOUNDS.1.ln())],
    };
    for c in 0..k {
        let (lo, hi) = bounds_internal[c];
        let width = hi - lo;
        for bound in [lo, hi] {
            if (x[c] - bound).abs() < 0.25 * width && x[c] != bound {
                let mut trial = x.clone();
                trial[c] = bound;
                prob.frozen = vec![false; 3];
                prob.frozen[c] = true;
                let (a2, x2, s2) = prob.refine(&trial, 500);
                if s2.is_finite() && s2 <= sse + 1e-14 * scale {
                    amp = a2;
                    x = x2;
                    sse = s2;
                }
            }
        }
    }
    prob.frozen = (0..3)
        .map(|c| c < k && (x[c] == bounds_internal[c].0 || x[c] == bounds_internal[c].1))
        .collect();
    let (a2, x2, s2) = prob.refine(&x, 200);
    if s2 <= sse {
        amp = a2;
        x = x2;
        sse = s2;
    }
    let nl = from_internal(family, &x);
    let mut params = vec![amp];
    params.extend(nl);
    Ok(SmoothFit {
        family,
        params,
        sse,
    })
}
