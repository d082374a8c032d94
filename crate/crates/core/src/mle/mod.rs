//! Parametric maximum likelihood for exponential quadratic Hawkes processes.
//!
//! Two data modes are supported. With exact event times the likelihood is
//! `Σ ln λ(tᵢ) − ∫₀ᵀ λ`, evaluated in one pass with recursive kernel states.
//! With binned data the intensity proxy `λ̂ = σ²/dt` is treated as a Poisson
//! count per bin and scored with the Stirling form
//! `λ̂ (ln λ − ln λ̂) + λ̂ − λ`, the model intensity being driven by the
//! observed `λ̂` and returns. Positive parameters are optimized through
//! `θ = eᵘ`, and every gradient is returned with respect to `u`.

mod exact;
mod optimize;
mod proxy;

pub use exact::loglik_exact;
pub use optimize::{fisher_standard_errors, maximize, MaximizeOptions, MleFit};
pub use proxy::loglik_binned_proxy;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{ExponentialKernelParams, KernelKind, ModelSpec, PointProcessSpec};
use crate::moments::{fit_smooth, FitFamily};
use crate::preprocess::BinnedPanel;
use crate::simulate::EventStream;
use std::io::{BufRead, Write};

/// Likelihood flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MleMode {
    /// One stream, `φ` only.
    ExactLinear,
    /// One stream, `φ` and `k`.
    ExactZHawkes,
    /// Two streams.
    Exact2D,
    /// Binned intensity proxy, one or two assets.
    BinnedProxy,
}

impl MleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MleMode::ExactLinear => "exact-linear",
            MleMode::ExactZHawkes => "exact-zhawkes",
            MleMode::Exact2D => "exact-2d",
            MleMode::BinnedProxy => "binned-proxy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "exact-linear" => Ok(MleMode::ExactLinear),
            "exact-zhawkes" => Ok(MleMode::ExactZHawkes),
            "exact-2d" => Ok(MleMode::Exact2D),
            "binned-proxy" => Ok(MleMode::BinnedProxy),
            other => Err(Error::InvalidInput(format!(
                "unknown likelihood mode '{other}'"
            ))),
        }
    }
}

/// Observations entering the likelihood.
#[derive(Debug, Clone)]
pub enum MleData {
    Events(Vec<EventStream>),
    /// Panel whose `sigma2` is the per-bin event count `λ̂·dt`.
    Proxy {
        panel: BinnedPanel,
        dt: f64,
    },
}

/// A free parameter of the exponential family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Baseline(usize),
    PhiNorm(usize, usize),
    PhiRate(usize, usize),
    KNorm(usize, usize),
    KRate(usize, usize),
}

impl Param {
    /// Key used in parameter files, e.g. `n_h_0_1` for `φ^0_1`.
    pub fn name(self) -> String {
        match self {
            Param::Baseline(i) => format!("lambda_inf_{i}"),
            Param::PhiNorm(i, j) => format!("n_h_{i}_{j}"),
            Param::PhiRate(i, j) => format!("beta_{i}_{j}"),
            Param::KNorm(i, j) => format!("n_z_{i}_{j}"),
            Param::KRate(i, j) => format!("omega_{i}_{j}"),
        }
    }
}

/// Gradient with respect to every natural parameter.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NaturalGrad {
    pub mu: Vec<f64>,
    pub phi_n: Vec<Vec<f64>>,
    pub phi_b: Vec<Vec<f64>>,
    pub k_n: Vec<Vec<f64>>,
    pub k_w: Vec<Vec<f64>>,
}

impl NaturalGrad {
    pub fn zeros(n: usize) -> Self {
        let z = vec![vec![0.0; n]; n];
        Self {
            mu: vec![0.0; n],
            phi_n: z.clone(),
            phi_b: z.clone(),
            k_n: z.clone(),
            k_w: z,
        }
    }

    pub fn add(&mut self, o: &NaturalGrad) {
        let n = self.mu.len();
        for i in 0..n {
            self.mu[i] += o.mu[i];
            for j in 0..n {
                self.phi_n[i][j] += o.phi_n[i][j];
                self.phi_b[i][j] += o.phi_b[i][j];
                self.k_n[i][j] += o.k_n[i][j];
                self.k_w[i][j] += o.k_w[i][j];
            }
        }
    }

    fn get(&self, p: Param) -> f64 {
        match p {
            Param::Baseline(i) => self.mu[i],
            Param::PhiNorm(i, j) => self.phi_n[i][j],
            Param::PhiRate(i, j) => self.phi_b[i][j],
            Param::KNorm(i, j) => self.k_n[i][j],
            Param::KRate(i, j) => self.k_w[i][j],
        }
    }
}

/// Per-pair constants of an exponential spec.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairConst {
    pub n: f64,
    pub beta: f64,
    pub nz: f64,
    pub omega: f64,
}

impl PairConst {
    pub fn of(spec: &PointProcessSpec, i: usize, j: usize) -> Self {
        Self {
            n: spec.phi[i][j].norm,
            beta: spec.phi[i][j].rate,
            nz: spec.k[i][j].norm,
            omega: spec.k[i][j].rate,
        }
    }
}

/// A likelihood together with the set of free parameters.
#[derive(Debug, Clone)]
pub struct MleProblem {
    pub mode: MleMode,
    pub data: MleData,
    /// Free parameters; kernels with zero norm in the template stay at zero.
    pub params: Vec<Param>,
    /// Template holding the fixed values.
    pub template: PointProcessSpec,
    pub exec: Exec,
}

impl MleProblem {
    /// Builds a problem whose free parameters are the baselines and every
    /// kernel with non-zero norm in `init`.
    pub fn new(mode: MleMode, data: MleData, init: &PointProcessSpec, exec: Exec) -> Result<Self> {
        init.validate()?;
        let n = init.n_assets();
        let n_data = match &data {
            MleData::Events(s) => {
                if mode == MleMode::BinnedProxy {
                    return Err(Error::InvalidInput(
                        "binned-proxy mode needs a panel".into(),
                    ));
                }
                for st in s {
                    st.validate()?;
                }
                s.len()
            }
            MleData::Proxy { panel, dt } => {
                if mode != MleMode::BinnedProxy {
                    return Err(Error::InvalidInput(format!(
                        "{} mode needs event streams",
                        mode.as_str()
                    )));
                }
                if !(*dt > 0.0) {
                    return Err(Error::InvalidInput("dt must be > 0".into()));
                }
                panel.validate()?;
                panel.n_assets()
            }
        };
        let expected = match mode {
            MleMode::ExactLinear | MleMode::ExactZHawkes => 1,
            MleMode::Exact2D => 2,
            MleMode::BinnedProxy => n,
        };
        if n_data != expected || n != expected {
            return Err(Error::LengthMismatch {
                what: "assets in likelihood data",
                expected,
                got: if n_data != expected { n_data } else { n },
            });
        }
        if init.leverage.iter().flatten().any(|l| l.norm != 0.0) {
            return Err(Error::InvalidInput(
                "likelihood refinement does not support leverage kernels".into(),
            ));
        }
        if mode == MleMode::ExactLinear && init.k.iter().flatten().any(|k| k.norm != 0.0) {
            return Err(Error::InvalidInput(
                "exact-linear mode needs zero quadratic kernels".into(),
            ));
        }
        if !init.lambda_inf.iter().all(|v| *v > 0.0) {
            return Err(Error::InvalidInput(
                "baseline intensities must be > 0".into(),
            ));
        }
        let mut params: Vec<Param> = (0..n).map(Param::Baseline).collect();
        for i in 0..n {
            for j in 0..n {
                if init.phi[i][j].norm > 0.0 {
                    params.extend([Param::PhiNorm(i, j), Param::PhiRate(i, j)]);
                }
                if init.k[i][j].norm > 0.0 {
                    params.extend([Param::KNorm(i, j), Param::KRate(i, j)]);
                }
            }
        }
        Ok(Self {
            mode,
            data,
            params,
            template: init.clone(),
            exec,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.template.n_assets()
    }

    /// Natural values of the free parameters of `spec`.
    pub fn theta_of(&self, spec: &PointProcessSpec) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| match *p {
                Param::Baseline(i) => spec.lambda_inf[i],
                Param::PhiNorm(i, j) => spec.phi[i][j].norm,
                Param::PhiRate(i, j) => spec.phi[i][j].rate,
                Param::KNorm(i, j) => spec.k[i][j].norm,
                Param::KRate(i, j) => spec.k[i][j].rate,
            })
            .collect()
    }

    /// The template with the free parameters replaced by `theta`.
    pub fn spec_of(&self, theta: &[f64]) -> PointProcessSpec {
        let mut s = self.template.clone();
        for (p, v) in self.params.iter().zip(theta) {
            match *p {
                Param::Baseline(i) => s.lambda_inf[i] = *v,
                Param::PhiNorm(i, j) => s.phi[i][j].norm = *v,
                Param::PhiRate(i, j) => s.phi[i][j].rate = *v,
                Param::KNorm(i, j) => s.k[i][j].norm = *v,
                Param::KRate(i, j) => s.k[i][j].rate = *v,
            }
        }
        s
    }

    fn natural(&self, spec: &PointProcessSpec, want_grad: bool) -> Result<(f64, NaturalGrad)> {
        match &self.data {
            MleData::Events(s) => exact::engine(s, spec, want_grad),
            MleData::Proxy { panel, dt } => proxy::engine(panel, *dt, spec, want_grad, self.exec),
        }
    }

    /// `ln L` at `theta`.
    pub fn loglik(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.natural(&self.spec_of(theta), false)?.0)
    }

    /// `ln L` and its gradient with respect to `u = ln θ`.
    pub fn loglik_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (ll, g) = self.natural(&self.spec_of(theta), true)?;
        let grad = self
            .params
            .iter()
            .zip(theta)
            .map(|(p, t)| g.get(*p) * t)
            .collect();
        Ok((ll, grad))
    }
}

/// Gradient of the binned-proxy `ln L` with respect to `u = ln θ`.
pub fn grad_binned_proxy(problem: &MleProblem, theta: &[f64]) -> Result<Vec<f64>> {
    if problem.mode != MleMode::BinnedProxy {
        return Err(Error::InvalidInput(
            "grad_binned_proxy needs a binned-proxy problem".into(),
        ));
    }
    Ok(problem.loglik_and_grad(theta)?.1)
}

/// Largest total branching ratio of any row in a warm start.
const MAX_START_NORM: f64 = 0.9;

/// Exponential parameters fitted to a calibrated kernel grid whose lag unit
/// is a bin of length `dt`. `φ` is taken as the time-diagonal minus `k̃²`.
/// Kernels whose fit fails or comes out non-positive start from a small
/// default so that every kernel stays free. Rows are scaled down to a
/// stationary total and the baselines reproduce the sample mean of `σ²`.
pub fn warm_start(model: &ModelSpec, dt: f64) -> Result<PointProcessSpec> {
    if model.n_assets != 1 && model.n_assets != 2 {
        return Err(Error::InvalidInput(format!(
            "n_assets must be 1 or 2, got {}",
            model.n_assets
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be > 0".into()));
    }
    let n = model.n_assets;
    let default_rate = 0.1 / dt;
    let fit = |curve: &[f64]| -> Option<(f64, f64)> {
        let f = fit_smooth(curve, FitFamily::Exp).ok()?;
        let (a, b) = (f.params[0], f.params[1]);
        (a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()).then_some((a, b))
    };
    // The sample mean of σ² is `(I − N)⁻¹ σ²_∞` for the grids' own norms,
    // even when those grids are too noisy to be stationary.
    let mean = {
        let nm = model.norm_matrix();
        let mut s = [0.0; 2];
        s[..n].copy_from_slice(&model.sigma_inf_sq);
        let (a, b, c, d) = (1.0 - nm[0][0], -nm[0][1], -nm[1][0], 1.0 - nm[1][1]);
        if n == 1 {
            vec![s[0] / a]
        } else {
            let det = a * d - b * c;
            vec![(d * s[0] - b * s[1]) / det, (-c * s[0] + a * s[1]) / det]
        }
    };
    let mut spec = PointProcessSpec::baseline(vec![default_rate; n]);
    for i in 0..n {
        for j in 0..n {
            let g = &model.quad[i][j];
            let k: Vec<f64> = g
                .rank_one
                .as_ref()
                .map_or_else(|| vec![0.0; g.q()], |k| k.values.clone());
            let phi: Vec<f64> = g
                .diag
                .values
                .iter()
                .zip(&k)
                .map(|(d, kk)| d - kk * kk)
                .collect();
            // φ(τ) ≈ n β e^{−β τ dt} dt and k̃(τ) ≈ √(2 n_Z ω dt) e^{−ω τ dt}.
            spec.phi[i][j] = match fit(&phi) {
                Some((a, b)) => ExponentialKernelParams::linear(a / b, b / dt),
                None => ExponentialKernelParams::linear(0.05, default_rate),
            };
            spec.k[i][j] = match fit(&k) {
                Some((a, b)) => ExponentialKernelParams::zumbach(a * a / (2.0 * b), b / dt),
                None => ExponentialKernelParams::zumbach(0.05, default_rate),
            };
            spec.leverage[i][j] = ExponentialKernelParams::zero(KernelKind::Leverage);
        }
        // Keep the start strictly stationary.
        let total: f64 = (0..n)
            .map(|j| spec.phi[i][j].norm + spec.k[i][j].norm)
            .sum();
        if total > MAX_START_NORM {
            for j in 0..n {
                spec.phi[i][j].norm *= MAX_START_NORM / total;
                spec.k[i][j].norm *= MAX_START_NORM / total;
            }
        }
    }
    let nm = spec.norm_matrix();
    for i in 0..n {
        let m = mean[i] / dt;
        let base = m - (0..n).map(|j| nm[i][j] * mean[j] / dt).sum::<f64>();
        spec.lambda_inf[i] = if base > 0.0 && base.is_finite() {
            base
        } else if m > 0.0 && m.is_finite() {
            (1.0 - MAX_START_NORM) * m
        } else {
            default_rate
        };
    }
    Ok(spec)
}

/// Writes `key=value` lines for the free parameters followed by the fit
/// diagnostics.
pub fn write_fit<W: Write>(
    problem: &MleProblem,
    fit: &MleFit,
    se: Option<&[f64]>,
    mut w: W,
) -> Result<()> {
    writeln!(w, "mode={}", problem.mode.as_str())?;
    for (k, (p, v)) in problem.params.iter().zip(&fit.theta).enumerate() {
        writeln!(w, "{}={}", p.name(), v)?;
        if let Some(se) = se {
            writeln!(w, "{}_se={}", p.name(), se[k])?;
        }
    }
    writeln!(w, "log_likelihood={}", fit.ln_l)?;
    writeln!(w, "initial_log_likelihood={}", fit.init_ln_l)?;
    writeln!(w, "iterations={}", fit.iterations)?;
    writeln!(w, "converged={}", fit.converged)?;
    writeln!(w, "gradient_inf_norm={}", fit.grad_inf_norm)?;
    Ok(())
}

/// Reads an exponential spec from `key=value` lines using the keys of
/// [`Param::name`]; missing kernels are zero. `n_assets` sets the shape.
pub fn read_spec_kv<R: BufRead>(r: R, n_assets: usize) -> Result<PointProcessSpec> {
    if n_assets != 1 && n_assets != 2 {
        return Err(Error::InvalidInput(format!(
            "n_assets must be 1 or 2, got {n_assets}"
        )));
    }
    let mut spec = PointProcessSpec::baseline(vec![0.0; n_assets]);
    let idx = |s: &str| -> Result<usize> {
        let v: usize = s
            .parse()
            .map_err(|_| Error::Parse(format!("bad index '{s}'")))?;
        if v >= n_assets {
            return Err(Error::Parse(format!("index {v} out of range")));
        }
        Ok(v)
    };
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.ends_with("_se")
            || !matches!(k.split('_').next(), Some("lambda" | "n" | "beta" | "omega"))
        {
            continue;
        }
        let val: f64 = v
            .parse()
            .map_err(|_| Error::Parse(format!("bad value '{v}' for {k}")))?;
        let parts: Vec<&str> = k.split('_').collect();
        match parts.as_slice() {
            ["lambda", "inf", i] => spec.lambda_inf[idx(i)?] = val,
            ["n", "h", i, j] => spec.phi[idx(i)?][idx(j)?].norm = val,
            ["beta", i, j] => spec.phi[idx(i)?][idx(j)?].rate = val,
            ["n", "z", i, j] => spec.k[idx(i)?][idx(j)?].norm = val,
            ["omega", i, j] => spec.k[idx(i)?][idx(j)?].rate = val,
            _ => return Err(Error::Parse(format!("unknown parameter key '{k}'"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}
