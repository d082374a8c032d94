//! Sample covariance structures of (volatility, return) panels, smoothing
//! fits and rank-one reduction.
//!
//! Every structure is a pooled within-day average: lagged products never
//! straddle a day boundary, and each lag is normalized by its own count of
//! valid bins. All structures derive from three raw families computed in a
//! single pass:
//!
//! * `T3[w][(c,d)](u₁,u₂) = E[w_s r_{c,s−u₁} r_{d,s−u₂}]`
//! * `T2[w][c](u) = E[w_s r_{c,s−u}]`
//! * `Γ[l][c](u) = E[r_{l,s} r_{c,s−u}]`
//!
//! where the weight `w` is either a squared volatility `σ²_j` or a return
//! product `r_a r_b`.

mod fit;
mod io;
mod rank_one;
mod smooth;

pub use fit::{fit_smooth, fit_smooth_at, FitFamily, SmoothFit, ALPHA_BOUNDS, RATE_BOUNDS};
pub use io::{read_fits_csv, write_fits_csv, FitRecord};
pub use rank_one::{rank_one_approx, rank_one_approx_with, RankOne, DEFAULT_REFINE_ITERS};
pub use smooth::{smooth_suite, SmoothingConfig};

use crate::error::{Error, Result};
use crate::exec::{map_range, Exec};
use crate::preprocess::BinnedPanel;

/// Estimator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Largest lag estimated; lags run over `0..=max_lag`.
    pub max_lag: usize,
    /// Zero every odd-order structure, as if the panel had been
    /// mirror-augmented.
    pub symmetrize: bool,
    /// Two-sided clip quantile applied per asset to returns and volatility.
    pub winsorize: Option<f64>,
    /// Recognise an exact mirror-augmented panel and estimate on its first
    /// half with `symmetrize`, which is equivalent and twice as fast.
    pub detect_mirror: bool,
    pub exec: Exec,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_lag: 50,
            symmetrize: false,
            winsorize: None,
            detect_mirror: true,
            exec: Exec::default(),
        }
    }
}

/// Square table indexed by a pair of lags `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagTable {
    pub n: usize,
    pub data: Vec<f64>,
}

impl LagTable {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Value at `(u₁, u₂)`; zero beyond the estimated range.
    pub fn get(&self, u1: usize, u2: usize) -> f64 {
        if u1 < self.n && u2 < self.n {
            self.data[u1 * self.n + u2]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, u1: usize, u2: usize, v: f64) {
        self.data[u1 * self.n + u2] = v;
    }
}

/// Which two-point structure to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoPointKind {
    /// `C_ij(τ) = E[σ²_{i,t} r²_{j,t−τ}] − E[σ²_i] E[r²_j]`
    C,
    /// `Cr_ij(τ) = E[r²_{i,t} r²_{j,t−τ}] − E[r²_i] E[r²_j]`
    Cr,
    /// `V_ij(τ) = E[σ²_{i,t} r_{j,t−τ}]`
    V,
    /// `Vr_ij(τ) = E[r²_{i,t} r_{j,t−τ}]`
    Vr,
}

/// Which three-point structure to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreePointKind {
    /// `D_ij(τ₁,τ₂) = E[(σ²_{i,t} − E σ²_i) r_{j,t−τ₁} r_{j,t−τ₂}]`, indices `[i, j]`
    D,
    /// `Dp_(ab)cd(u₁,u₂) = E[(r_a r_b)_s r_{c,s−u₁} r_{d,s−u₂}]`, indices `[a, b, c, d]`
    Dp,
    /// `Dx_j(τ₁,τ₂) = E[σ²_{j,t} r_{j,t−τ₁} r_{j̄,t−τ₂}]`, indices `[j]`
    Dx,
}

/// Estimated covariance structures on lags `0..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSuite {
    pub n_assets: usize,
    pub max_lag: usize,
    pub n_days: usize,
    pub bins_per_day: usize,
    /// True when odd-order structures are identically zero.
    pub symmetric: bool,
    pub mean_sigma2: Vec<f64>,
    pub mean_r: Vec<f64>,
    /// `Γ[l][c][u]`
    pub gamma: Vec<Vec<Vec<f64>>>,
    /// `T2[w][c][u]`
    pub t2: Vec<Vec<Vec<f64>>>,
    /// `T3[w][pair(c,d)]`, `c ≤ d`
    pub t3: Vec<Vec<LagTable>>,
}

fn n_unordered(n: usize) -> usize {
    n * (n + 1) / 2
}

fn unordered_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for a in 0..n {
        for b in a..n {
            v.push((a, b));
        }
    }
    v
}

impl CovarianceSuite {
    pub fn n_weights(&self) -> usize {
        self.n_assets + n_unordered(self.n_assets)
    }

    /// Weight index of `σ²_j`.
    pub fn weight_sigma(&self, j: usize) -> usize {
        j
    }

    /// Weight index of `r_a r_b`.
    pub fn weight_prod(&self, a: usize, b: usize) -> usize {
        self.n_assets + unordered_index(a, b, self.n_assets)
    }

    /// `T3[w](c at u₁, d at u₂)` for any ordering of `c, d`.
    pub fn t3_get(&self, w: usize, c: usize, d: usize, u1: usize, u2: usize) -> f64 {
        let k = unordered_index(c, d, self.n_assets);
        if c <= d {
            self.t3[w][k].get(u1, u2)
        } else {
            self.t3[w][k].get(u2, u1)
        }
    }

    fn t2_get(&self, w: usize, c: usize, u: usize) -> f64 {
        self.t2[w][c].get(u).copied().unwrap_or(0.0)
    }

    /// `E[r_a r_b]` at equal times.
    pub fn return_moment(&self, a: usize, b: usize) -> f64 {
        self.gamma[a][b][0]
    }

    /// Equal-time return cross moment `E[r₁ r₂]`; zero for one asset.
    pub fn equal_time_cov(&self) -> f64 {
        if self.n_assets == 2 {
            self.return_moment(0, 1)
        } else {
            0.0
        }
    }

    /// `Γ_lc(u) = E[r_{l,s} r_{c,s−u}]`
    pub fn gamma_at(&self, l: usize, c: usize, u: usize) -> f64 {
        self.gamma[l][c].get(u).copied().unwrap_or(0.0)
    }

    /// `C_jl(τ)`.
    pub fn c(&self, j: usize, l: usize, tau: usize) -> f64 {
        if tau > self.max_lag {
            return 0.0;
        }
        self.t3_get(self.weight_sigma(j), l, l, tau, tau)
            - self.mean_sigma2[j] * self.return_moment(l, l)
    }

    /// `Cr_il(u)` for signed `u`, with `Cr_il(−u) = Cr_li(u)`.
    pub fn cr(&self, i: usize, l: usize, u: isize) -> f64 {
        if u < 0 {
            return self.cr(l, i, -u);
        }
        let u = u as usize;
        if u > self.max_lag {
            return 0.0;
        }
        self.dp(i, i, l, l, u, u) - self.return_moment(i, i) * self.return_moment(l, l)
    }

    /// `D_jl(τ₁,τ₂)`, symmetric in its lags; `D_jl(τ,τ) = C_jl(τ)`.
    pub fn d(&self, j: usize, l: usize, t1: usize, t2: usize) -> f64 {
        if t1.max(t2) > self.max_lag {
            return 0.0;
        }
        let raw = self.t3_get(self.weight_sigma(j), l, l, t1, t2);
        raw - self.mean_sigma2[j] * self.gamma_at(l, l, t1.abs_diff(t2))
    }

    /// `Dx_j(τ₁,τ₂) = E[σ²_{j,t} r_{j,t−τ₁} r_{j̄,t−τ₂}]`, raw.
    pub fn dx(&self, j: usize, t1: usize, t2: usize) -> f64 {
        if self.n_assets < 2 {
            return 0.0;
        }
        self.t3_get(self.weight_sigma(j), j, 1 - j, t1, t2)
    }

    /// `Dp_(ab)cd(u₁,u₂) = E[(r_a r_b)_s r_{c,s−u₁} r_{d,s−u₂}]`, raw.
    pub fn dp(&self, a: usize, b: usize, c: usize, d: usize, u1: usize, u2: usize) -> f64 {
        self.t3_get(self.weight_prod(a, b), c, d, u1, u2)
    }

    /// `V_jl(τ) = E[σ²_{j,t} r_{l,t−τ}]`.
    pub fn v(&self, j: usize, l: usize, tau: usize) -> f64 {
        self.t2_get(self.weight_sigma(j), l, tau)
    }

    /// `Vr_(ab)c(u) = E[(r_a r_b)_s r_{c,s−u}]`.
    pub fn vr(&self, a: usize, b: usize, c: usize, u: usize) -> f64 {
        self.t2_get(self.weight_prod(a, b), c, u)
    }

    /// A two-point structure on lags `0..=max_lag`.
    pub fn two_point(&self, kind: TwoPointKind, i: usize, j: usize) -> Vec<f64> {
        (0..=self.max_lag)
            .map(|u| match kind {
                TwoPointKind::C => self.c(i, j, u),
                TwoPointKind::Cr => self.cr(i, j, u as isize),
                TwoPointKind::V => self.v(i, j, u),
                TwoPointKind::Vr => self.vr(i, i, j, u),
            })
            .collect()
    }

    /// A three-point structure as a dense `(max_lag+1)²` table.
    pub fn three_point(&self, kind: ThreePointKind, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
        let need = match kind {
            ThreePointKind::D => 2,
            ThreePointKind::Dp => 4,
            ThreePointKind::Dx => 1,
        };
        if idx.len() != need {
            return Err(Error::LengthMismatch {
                what: "structure indices",
                expected: need,
                got: idx.len(),
            });
        }
        if idx.iter().any(|&a| a >= self.n_assets) {
            return Err(Error::InvalidInput(format!(
                "asset index out of range in {idx:?}"
            )));
        }
        if kind == ThreePointKind::Dx && self.n_assets < 2 {
            return Err(Error::InvalidInput("Dx needs two assets".into()));
        }
        let n = self.max_lag + 1;
        Ok((0..n)
            .map(|u1| {
                (0..n)
                    .map(|u2| match kind {
                        ThreePointKind::D => self.d(idx[0], idx[1], u1, u2),
                        ThreePointKind::Dp => self.dp(idx[0], idx[1], idx[2], idx[3], u1, u2),
                        ThreePointKind::Dx => self.dx(idx[0], u1, u2),
                    })
                    .collect()
            })
            .collect())
    }
}

/// Index of the unordered pair `{a, b}` in `(0,0), (0,1), …, (1,1), …` order.
pub(crate) fn unordered_index(a: usize, b: usize, n: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * n - a * a.saturating_sub(1) / 2 + (b - a)
}

/// Unrolled dot product over the common prefix of two slices.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Raw sums over a block of days.
struct Partial {
    sum_sigma2: Vec<f64>,
    sum_r: Vec<f64>,
    gamma: Vec<f64>,
    t2: Vec<f64>,
    t3: Vec<f64>,
}

struct Layout {
    n: usize,
    b: usize,
    nl: usize,
    n_w: usize,
    n_cd: usize,
}

impl Layout {
    fn gamma_idx(&self, l: usize, c: usize, u: usize) -> usize {
        (l * self.n + c) * self.nl + u
    }
    fn t2_idx(&self, w: usize, c: usize, u: usize) -> usize {
        (w * self.n + c) * self.nl + u
    }
    fn t3_base(&self, w: usize, cd: usize) -> usize {
        (w * self.n_cd + cd) * self.nl * self.nl
    }
    fn zeros(&self) -> Partial {
        Partial {
            sum_sigma2: vec![0.0; self.n],
            sum_r: vec![0.0; self.n],
            gamma: vec![0.0; self.n * self.n * self.nl],
            t2: vec![0.0; self.n_w * self.n * self.nl],
            t3: vec![0.0; self.n_w * self.n_cd * self.nl * self.nl],
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate_day(
    panel: &BinnedPanel,
    day: usize,
    lay: &Layout,
    acc: &mut Partial,
    w: &mut [f64],
    p: &mut [f64],
) {
    let (n, b, q) = (lay.n, lay.b, lay.nl - 1);
    let rets: Vec<&[f64]> = (0..n).map(|a| panel.day_returns(a, day)).collect();
    let sigs: Vec<&[f64]> = (0..n).map(|a| panel.day_sigma2(a, day)).collect();
    for a in 0..n {
        acc.sum_sigma2[a] += sigs[a].iter().sum::<f64>();
        acc.sum_r[a] += rets[a].iter().sum::<f64>();
        for c in 0..n {
            for u in 0..=q {
                acc.gamma[lay.gamma_idx(a, c, u)] += dot(&rets[a][u..], &rets[c][..b - u]);
            }
        }
    }
    let prods = unordered_pairs(n);
    for wi in 0..lay.n_w {
        if wi < n {
            w.copy_from_slice(sigs[wi]);
        } else {
            let (x, y) = prods[wi - n];
            for ((o, u), v) in w.iter_mut().zip(rets[x]).zip(rets[y]) {
                *o = u * v;
            }
        }
        for c in 0..n {
            for u in 0..=q {
                acc.t2[lay.t2_idx(wi, c, u)] += dot(&w[u..], &rets[c][..b - u]);
            }
        }
        for (cd, &(c, d)) in prods.iter().enumerate() {
            let base = lay.t3_base(wi, cd);
            let (rc, rd) = (rets[c], rets[d]);
            for u1 in 0..=q {
                for s in u1..b {
                    p[s] = w[s] * rc[s - u1];
                }
                let lo = if c == d { u1 } else { 0 };
                for u2 in lo..=q {
                    let start = u1.max(u2);
                    acc.t3[base + u1 * lay.nl + u2] += dot(&p[start..b], &rd[start - u2..b - u2]);
                }
            }
        }
    }
}

/// Clips returns and volatility of every asset at the `(q, 1 − q)`
/// empirical quantiles.
pub fn winsorize(panel: &BinnedPanel, quantile: f64) -> Result<BinnedPanel> {
    if !(quantile > 0.0 && quantile < 0.5) {
        return Err(Error::InvalidInput(format!(
            "winsorize quantile must be in (0, 0.5), got {quantile}"
        )));
    }
    let clip = |v: &[f64]| -> Vec<f64> {
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        if n == 0 {
            return Vec::new();
        }
        let lo = sorted[((quantile * n as f64).floor() as usize).min(n - 1)];
        let hi = sorted[(((1.0 - quantile) * n as f64).ceil() as usize)
            .min(n)
            .saturating_sub(1)];
        v.iter().map(|x| x.clamp(lo, hi)).collect()
    };
    let mut out = panel.clone();
    let mut clipped = 0usize;
    for a in 0..panel.n_assets() {
        out.returns[a] = clip(&panel.returns[a]);
        out.sigma2[a] = clip(&panel.sigma2[a]);
        clipped += out.returns[a]
            .iter()
            .zip(&panel.returns[a])
            .filter(|(x, y)| x != y)
            .count();
        clipped += out.sigma2[a]
            .iter()
            .zip(&panel.sigma2[a])
            .filter(|(x, y)| x != y)
            .count();
    }
    log::info!("winsorization at quantile {quantile} clipped {clipped} values");
    Ok(out)
}

/// True when the second half of the days is an exact sign-flipped copy of
/// the first half.
pub fn is_exact_mirror(panel: &BinnedPanel) -> bool {
    let nd = panel.n_days();
    if nd < 2 || !nd.is_multiple_of(2) {
        return false;
    }
    let half = nd / 2 * panel.bins_per_day;
    (0..panel.n_assets()).all(|a| {
        let (r0, r1) = panel.returns[a].split_at(half);
        let (s0, s1) = panel.sigma2[a].split_at(half);
        r0.iter().zip(r1).all(|(x, y)| *x == -*y) && s0 == s1
    })
}

/// Estimates every structure on lags `0..=cfg.max_lag`.
pub fn estimate_suite(panel: &BinnedPanel, cfg: &EstimatorConfig) -> Result<CovarianceSuite> {
    panel.validate()?;
    let n = panel.n_assets();
    if n == 0 || n > 2 {
        return Err(Error::InvalidInput(format!(
            "one or two assets supported, got {n}"
        )));
    }
    let b = panel.bins_per_day;
    if cfg.max_lag >= b {
        return Err(Error::InsufficientBins {
            max_lag: cfg.max_lag,
            bins_per_day: b,
        });
    }
    if panel.n_days() == 0 {
        return Err(Error::InvalidInput("panel has no days".into()));
    }
    let owned;
    let panel = match cfg.winsorize {
        Some(qtl) => {
            owned = winsorize(panel, qtl)?;
            &owned
        }
        None => panel,
    };
    let mirrored = cfg.detect_mirror && is_exact_mirror(panel);
    let used_days = if mirrored {
        panel.n_days() / 2
    } else {
        panel.n_days()
    };
    let symmetric = cfg.symmetrize || mirrored;

    let lay = Layout {
        n,
        b,
        nl: cfg.max_lag + 1,
        n_w: n + n_unordered(n),
        n_cd: n_unordered(n),
    };
    // Fixed chunking keeps the summation order independent of the thread count.
    let chunk = used_days.div_ceil(64).max(1);
    let n_chunks = used_days.div_ceil(chunk);
    let partials = map_range(cfg.exec, n_chunks, |k| {
        let mut acc = lay.zeros();
        let mut w = vec![0.0; b];
        let mut p = vec![0.0; b];
        for day in k * chunk..((k + 1) * chunk).min(used_days) {
            accumulate_day(panel, day, &lay, &mut acc, &mut w, &mut p);
        }
        acc
    });
    let mut total = lay.zeros();
    for part in &partials {
        add_into(&mut total.sum_sigma2, &part.sum_sigma2);
        add_into(&mut total.sum_r, &part.sum_r);
        add_into(&mut total.gamma, &part.gamma);
        add_into(&mut total.t2, &part.t2);
        add_into(&mut total.t3, &part.t3);
    }
    drop(partials);

    let nd = used_days as f64;
    let count = |u: usize| nd * (b - u) as f64;
    let q = cfg.max_lag;
    let mean_sigma2 = total.sum_sigma2.iter().map(|s| s / count(0)).collect();
    let mean_r = if symmetric {
        vec![0.0; n]
    } else {
        total.sum_r.iter().map(|s| s / count(0)).collect()
    };
    let gamma = (0..n)
        .map(|l| {
            (0..n)
                .map(|c| {
                    (0..=q)
                        .map(|u| total.gamma[lay.gamma_idx(l, c, u)] / count(u))
                        .collect()
                })
                .collect()
        })
        .collect();
    let t2 = (0..lay.n_w)
        .map(|w| {
            (0..n)
                .map(|c| {
                    (0..=q)
                        .map(|u| {
                            if symmetric {
                                0.0
                            } else {
                                total.t2[lay.t2_idx(w, c, u)] / count(u)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let prods = unordered_pairs(n);
    let t3 = (0..lay.n_w)
        .map(|w| {
            prods
                .iter()
                .enumerate()
                .map(|(cd, &(c, d))| {
                    let base = lay.t3_base(w, cd);
                    let mut t = LagTable::zeros(lay.nl);
                    for u1 in 0..=q {
                        let lo = if c == d { u1 } else { 0 };
                        for u2 in lo..=q {
                            let v = total.t3[base + u1 * lay.nl + u2] / count(u1.max(u2));
                            t.set(u1, u2, v);
                            if c == d {
                                t.set(u2, u1, v);
                            }
                        }
                    }
                    t
                })
                .collect()
        })
        .collect();
    Ok(CovarianceSuite {
        n_assets: n,
        max_lag: q,
        n_days: panel.n_days(),
        bins_per_day: b,
        symmetric,
        mean_sigma2,
        mean_r,
        gamma,
        t2,
        t3,
    })
}

/// One two-point structure on lags `0..=max_lag`.
pub fn estimate_two_point(
    panel: &BinnedPanel,
    kind: TwoPointKind,
    i: usize,
    j: usize,
    max_lag: usize,
) -> Result<Vec<f64>> {
    let suite = estimate_suite(
        panel,
        &EstimatorConfig {
            max_lag,
            ..Default::default()
        },
    )?;
    Ok(suite.two_point(kind, i, j))
}

/// One three-point structure as a `(max_lag+1)²` table.
pub fn estimate_three_point(
    panel: &BinnedPanel,
    kind: ThreePointKind,
    indices: &[usize],
    max_lag: usize,
) -> Result<Vec<Vec<f64>>> {
    let suite = estimate_suite(
        panel,
        &EstimatorConfig {
            max_lag,
            ..Default::default()
        },
    )?;
    suite.three_point(kind, indices)
}

#[cfg(test)]
mod tests;
