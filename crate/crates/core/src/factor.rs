//! One-factor pipeline: stock returns are split as `rᵢ = βᵢ f₀ + eᵢ`, the
//! factor gets a one-asset calibration and every residual a two-asset
//! calibration against the factor with the cross block excluded. The factor
//! row of each residual model is frozen to the factor fit, since the factor
//! is not driven by residuals.

use crate::error::{Error, Result};
use crate::exec::{map_range, Exec};
use crate::model::{spectral_radius, KernelGrid, ModelSpec, QuadraticKernelGrid};
use crate::moments::{estimate_suite, EstimatorConfig};
use crate::preprocess::{BinnedPanel, Stage};
use crate::simulate::{simulate_mqarch, Noise};
use crate::yulewalker::{calibrate, CalibrationOptions, Step};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::Write;

/// Split of a stock panel against the factor. Both panels carry squared
/// returns as their volatility proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDecomposition {
    pub beta: Vec<f64>,
    /// One-asset panel of `f₀`.
    pub factor: BinnedPanel,
    /// Panel of `eᵢ`, one asset per stock.
    pub residuals: BinnedPanel,
}

/// `cov(r, f₀) / var(f₀)` with sample means removed.
pub fn estimate_beta(stock: &[f64], factor: &[f64]) -> Result<f64> {
    if stock.len() != factor.len() {
        return Err(Error::LengthMismatch {
            what: "stock returns",
            expected: factor.len(),
            got: stock.len(),
        });
    }
    if factor.len() < 2 {
        return Err(Error::DegenerateFactor);
    }
    let n = factor.len() as f64;
    let (ms, mf) = (
        stock.iter().sum::<f64>() / n,
        factor.iter().sum::<f64>() / n,
    );
    let (mut cov, mut var) = (0.0, 0.0);
    for (s, f) in stock.iter().zip(factor) {
        cov += (s - ms) * (f - mf);
        var += (f - mf) * (f - mf);
    }
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DegenerateFactor);
    }
    Ok(cov / var)
}

fn squared(p: &mut BinnedPanel) {
    p.sigma2 = p
        .returns
        .iter()
        .map(|r| r.iter().map(|x| x * x).collect())
        .collect();
}

/// Regresses every stock on the factor and forms the residuals.
pub fn decompose(stocks: &BinnedPanel, factor: &BinnedPanel) -> Result<FactorDecomposition> {
    stocks.validate()?;
    factor.validate()?;
    if factor.n_assets() != 1 {
        return Err(Error::LengthMismatch {
            what: "factor assets",
            expected: 1,
            got: factor.n_assets(),
        });
    }
    if stocks.n_assets() == 0 {
        return Err(Error::InvalidInput("stock universe is empty".into()));
    }
    if stocks.n_bins() != factor.n_bins() || stocks.bins_per_day != factor.bins_per_day {
        return Err(Error::LengthMismatch {
            what: "stock bins",
            expected: factor.n_bins(),
            got: stocks.n_bins(),
        });
    }
    let f = &factor.returns[0];
    let mut beta = Vec::with_capacity(stocks.n_assets());
    let mut residuals = stocks.clone();
    for (a, r) in stocks.returns.iter().enumerate() {
        let b = estimate_beta(r, f)?;
        residuals.returns[a] = r.iter().zip(f).map(|(x, y)| x - b * y).collect();
        beta.push(b);
    }
    squared(&mut residuals);
    let mut factor = factor.clone();
    squared(&mut factor);
    Ok(FactorDecomposition {
        beta,
        factor,
        residuals,
    })
}

/// Output of [`calibrate_factor_model`]. Stock models have the residual as
/// asset 0 and the factor as asset 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub decomposition: FactorDecomposition,
    pub factor_model: ModelSpec,
    pub stock_models: Vec<ModelSpec>,
}

/// Calibration settings for the factor pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorOptions {
    pub calibration: CalibrationOptions,
    pub estimator: EstimatorConfig,
    /// Estimate leverage kernels.
    pub leverage: bool,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self {
            calibration: CalibrationOptions::default(),
            estimator: EstimatorConfig::default(),
            leverage: true,
        }
    }
}

/// Calibrates the factor on its own and each residual against the factor.
pub fn calibrate_factor_model(
    stocks: &BinnedPanel,
    factor: &BinnedPanel,
    opts: &FactorOptions,
) -> Result<FactorModel> {
    let dec = decompose(stocks, factor)?;
    let cal = CalibrationOptions {
        cross_block: false,
        include_k_cross: false,
        ..opts.calibration
    };
    let est = EstimatorConfig {
        max_lag: cal.q.max(cal.q_aux),
        ..opts.estimator
    };
    let steps: Vec<Step> = Step::ALL
        .iter()
        .copied()
        .filter(|s| opts.leverage || *s != Step::Leverage)
        .collect();
    let factor_model = calibrate(&estimate_suite(&dec.factor, &est)?, &cal, &steps)?.model;
    // Stocks run in parallel, so the inner work stays sequential.
    let inner = CalibrationOptions {
        exec: Exec::Sequential,
        ..cal
    };
    let inner_est = EstimatorConfig {
        exec: Exec::Sequential,
        ..est
    };
    let results = map_range(
        cal.exec,
        dec.residuals.n_assets(),
        |a| -> Result<ModelSpec> {
            let mut pair = dec.residuals.select_assets(&[a]);
            pair.assets.push(dec.factor.assets[0].clone());
            pair.returns.push(dec.factor.returns[0].clone());
            pair.sigma2.push(dec.factor.sigma2[0].clone());
            let suite = estimate_suite(&pair, &inner_est)?;
            let mut m = calibrate(&suite, &inner, &steps)?.model;
            freeze_factor_row(&mut m, &factor_model);
            Ok(m)
        },
    );
    let stock_models = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FactorModel {
        decomposition: dec,
        factor_model,
        stock_models,
    })
}

/// Replaces the factor row of a residual model by the one-asset factor fit.
fn freeze_factor_row(m: &mut ModelSpec, factor: &ModelSpec) {
    m.quad[1][1] = factor.quad[0][0].clone();
    m.quad[1][0] = QuadraticKernelGrid::zeros(m.q);
    m.leverage[1][1] = factor.leverage[0][0].clone();
    m.leverage[1][0] = KernelGrid::zeros(m.q_aux);
    m.phi_cross = vec![KernelGrid::zeros(m.q_aux); 2];
    m.k_cross = vec![None, None];
    m.sigma_inf_sq[1] = factor.sigma_inf_sq[0];
}

/// Kernel norms of one stock model.
#[derive(Debug, Clone, PartialEq)]
pub struct StockNorms {
    pub name: String,
    /// `‖φᵢⁱ‖`, signed sum of the residual's own diagonal.
    pub phi_self: f64,
    /// `‖φ₀ⁱ‖`, factor to residual.
    pub phi_factor: f64,
    /// `‖kᵢⁱ‖² = Σ k̃²`.
    pub k_self: f64,
    pub k_factor: f64,
    /// `‖φ₀⁰‖`.
    pub phi_factor_self: f64,
    /// `max(‖φ₀⁰‖, ‖φᵢⁱ‖)`.
    pub endogeneity_max: f64,
    /// Spectral radius of the full 2×2 norm matrix.
    pub spectral_radius: f64,
}

/// Pointwise cross-sectional mean and standard deviation of one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub mean: KernelGrid,
    pub std: KernelGrid,
}

/// Cross-sectional averages of the residual kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionSummary {
    pub phi_self: Profile,
    pub phi_factor: Profile,
    pub k_self: Profile,
    pub k_factor: Profile,
    pub leverage_factor: Profile,
    pub norms: Vec<StockNorms>,
}

fn profile(grids: &[&KernelGrid]) -> Profile {
    let q = grids.iter().map(|g| g.q()).max().unwrap_or(0);
    let n = grids.len() as f64;
    let mut mean = vec![0.0; q];
    let mut sq = vec![0.0; q];
    for g in grids {
        for t in 0..q {
            let v = g.at(t + 1);
            mean[t] += v;
            sq[t] += v * v;
        }
    }
    for t in 0..q {
        mean[t] /= n;
        sq[t] = (sq[t] / n - mean[t] * mean[t]).max(0.0).sqrt();
    }
    Profile {
        mean: KernelGrid { values: mean },
        std: KernelGrid { values: sq },
    }
}

fn k_tilde(g: &QuadraticKernelGrid) -> KernelGrid {
    g.rank_one
        .clone()
        .unwrap_or_else(|| KernelGrid::zeros(g.q()))
}

/// Pointwise mean and population standard deviation across stocks, plus the
/// per-stock norm table. `names` labels the norm rows.
pub fn cross_section_aggregate(
    specs: &[ModelSpec],
    names: &[String],
) -> Result<CrossSectionSummary> {
    if specs.is_empty() {
        return Err(Error::InvalidInput(
            "cross-section needs at least one model".into(),
        ));
    }
    if names.len() != specs.len() {
        return Err(Error::LengthMismatch {
            what: "stock names",
            expected: specs.len(),
            got: names.len(),
        });
    }
    if let Some(m) = specs.iter().find(|m| m.n_assets != 2) {
        return Err(Error::InvalidInput(format!(
            "stock models must have two assets, got {}",
            m.n_assets
        )));
    }
    let ks: Vec<(KernelGrid, KernelGrid)> = specs
        .iter()
        .map(|m| (k_tilde(&m.quad[0][0]), k_tilde(&m.quad[0][1])))
        .collect();
    let norms = specs
        .iter()
        .zip(names)
        .zip(&ks)
        .map(|((m, name), (ks, kf))| {
            let nm = m.norm_matrix();
            StockNorms {
                name: name.clone(),
                phi_self: nm[0][0],
                phi_factor: nm[0][1],
                k_self: ks.squared_norm(),
                k_factor: kf.squared_norm(),
                phi_factor_self: nm[1][1],
                endogeneity_max: nm[0][0].max(nm[1][1]),
                spectral_radius: spectral_radius(&nm),
            }
        })
        .collect();
    Ok(CrossSectionSummary {
        phi_self: profile(&specs.iter().map(|m| &m.quad[0][0].diag).collect::<Vec<_>>()),
        phi_factor: profile(&specs.iter().map(|m| &m.quad[0][1].diag).collect::<Vec<_>>()),
        k_self: profile(&ks.iter().map(|k| &k.0).collect::<Vec<_>>()),
        k_factor: profile(&ks.iter().map(|k| &k.1).collect::<Vec<_>>()),
        leverage_factor: profile(&specs.iter().map(|m| &m.leverage[0][1]).collect::<Vec<_>>()),
        norms,
    })
}

/// Writes the norm table as CSV.
pub fn write_norms_csv<W: Write>(norms: &[StockNorms], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "stock",
        "phi_self",
        "phi_factor",
        "k_self",
        "k_factor",
        "phi_factor_self",
        "endogeneity_max",
        "spectral_radius",
    ])?;
    for n in norms {
        wr.write_record([
            n.name.clone(),
            n.phi_self.to_string(),
            n.phi_factor.to_string(),
            n.k_self.to_string(),
            n.k_factor.to_string(),
            n.phi_factor_self.to_string(),
            n.endogeneity_max.to_string(),
            n.spectral_radius.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes the mean and std profiles as `kernel,lag,mean,std`.
pub fn write_profiles_csv<W: Write>(s: &CrossSectionSummary, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["kernel", "lag", "mean", "std"])?;
    for (name, p) in [
        ("phi_self", &s.phi_self),
        ("phi_factor", &s.phi_factor),
        ("k_self", &s.k_self),
        ("k_factor", &s.k_factor),
        ("leverage_factor", &s.leverage_factor),
    ] {
        for (t, (m, sd)) in p.mean.values.iter().zip(&p.std.values).enumerate() {
            wr.write_record([
                name.to_string(),
                (t + 1).to_string(),
                m.to_string(),
                sd.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Simulates a one-factor universe. The factor follows the one-asset model
/// `factor`; residual `i` follows row 0 of `residuals[i]`, whose asset 1 is
/// the factor, with independent Gaussian innovations. Returns the stock and
/// factor panels cut into days of `bins_per_day`, with the true volatilities
/// in `sigma2`.
pub fn simulate_factor_universe(
    factor: &ModelSpec,
    residuals: &[ModelSpec],
    betas: &[f64],
    n_bins: usize,
    bins_per_day: usize,
    seed: u64,
) -> Result<(BinnedPanel, BinnedPanel)> {
    if factor.n_assets != 1 {
        return Err(Error::InvalidInput(
            "factor model must have one asset".into(),
        ));
    }
    if residuals.len() != betas.len() || residuals.is_empty() {
        return Err(Error::LengthMismatch {
            what: "betas",
            expected: residuals.len(),
            got: betas.len(),
        });
    }
    let q = residuals.iter().map(|m| m.max_lag()).max().unwrap_or(0);
    let burn = (10 * q).max(1000);
    let total = burn + n_bins;
    let fsim = simulate_mqarch(factor, total, seed, Noise::Gaussian)?;
    let f = &fsim.returns[0];
    let mut stock_r = Vec::with_capacity(residuals.len());
    let mut stock_s = Vec::with_capacity(residuals.len());
    for (a, (m, b)) in residuals.iter().zip(betas).enumerate() {
        m.validate()?;
        if m.n_assets != 2 {
            return Err(Error::InvalidInput(
                "residual models must have two assets".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + a as u64));
        let mut e = vec![0.0; total];
        let mut s2 = vec![0.0; total];
        for t in q..total {
            let v = crate::model::sigma2_unchecked(m, &[&e[..t], &f[..t]], 0).max(1e-12);
            let z: f64 = StandardNormal.sample(&mut rng);
            e[t] = v.sqrt() * z;
            s2[t] = v;
        }
        stock_r.push(
            e[burn..]
                .iter()
                .zip(&f[burn..])
                .map(|(x, y)| b * y + x)
                .collect::<Vec<f64>>(),
        );
        stock_s.push(s2[burn..].to_vec());
    }
    let n_days = n_bins / bins_per_day;
    if n_days == 0 {
        return Err(Error::InvalidInput(format!(
            "cannot cut {n_bins} bins into days of {bins_per_day}"
        )));
    }
    let keep = n_days * bins_per_day;
    let dates: Vec<String> = (0..n_days).map(|d| format!("d{d:06}")).collect();
    let stocks = BinnedPanel {
        assets: (0..residuals.len()).map(|a| format!("s{a}")).collect(),
        dates: dates.clone(),
        bins_per_day,
        returns: stock_r
            .into_iter()
            .map(|mut r| {
                r.truncate(keep);
                r
            })
            .collect(),
        sigma2: stock_s
            .into_iter()
            .map(|mut s| {
                s.truncate(keep);
                s
            })
            .collect(),
        stage: Stage::Raw,
    };
    let factor_panel = BinnedPanel {
        assets: vec!["f0".into()],
        dates,
        bins_per_day,
        returns: vec![f[burn..burn + keep].to_vec()],
        sigma2: vec![fsim.sigma2[0][burn..burn + keep].to_vec()],
        stage: Stage::Raw,
    };
    Ok((stocks, factor_panel))
}
