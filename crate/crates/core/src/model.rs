//! Kernel grids, model specifications and closed-form kernel algebra.
//!
//! Lags run over `1..=q` and are stored zero-based (`values[τ - 1]`).
//! Asset indices are zero-based everywhere. A `ModelSpec` carries one or two
//! assets; a one-asset spec is the univariate QARCH.

use crate::error::{Error, Result};
use std::io::{Read, Write};

/// Closed-form family of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    /// φ(τ) = n·β·e^{−βτ}
    #[default]
    Linear,
    /// k(τ) = √(2·n·ω)·e^{−ωτ}
    Zumbach,
    /// L(τ) = a·e^{−bτ}, signed amplitude
    Leverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExponentialKernelParams {
    pub norm: f64,
    pub rate: f64,
    pub kind: KernelKind,
}

impl ExponentialKernelParams {
    pub fn linear(norm: f64, rate: f64) -> Self {
        Self {
            norm,
            rate,
            kind: KernelKind::Linear,
        }
    }

    pub fn zumbach(norm: f64, rate: f64) -> Self {
        Self {
            norm,
            rate,
            kind: KernelKind::Zumbach,
        }
    }

    pub fn leverage(amplitude: f64, rate: f64) -> Self {
        Self {
            norm: amplitude,
            rate,
            kind: KernelKind::Leverage,
        }
    }

    /// A kernel that contributes nothing.
    pub fn zero(kind: KernelKind) -> Self {
        Self {
            norm: 0.0,
            rate: 1.0,
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kernel rate must be > 0, got {}",
                self.rate
            )));
        }
        if !self.norm.is_finite() || (self.kind != KernelKind::Leverage && self.norm < 0.0) {
            return Err(Error::InvalidInput(format!(
                "kernel norm must be >= 0, got {}",
                self.norm
            )));
        }
        Ok(())
    }

    /// Amplitude multiplying `e^{−rate·t}`.
    pub fn amplitude(&self) -> f64 {
        match self.kind {
            KernelKind::Linear => self.norm * self.rate,
            KernelKind::Zumbach => (2.0 * self.norm * self.rate).sqrt(),
            KernelKind::Leverage => self.norm,
        }
    }

    /// Kernel value at a continuous lag `t ≥ 0`.
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude() * (-self.rate * t).exp()
    }

    pub fn tabulate(&self, q: usize) -> KernelGrid {
        KernelGrid {
            values: (1..=q).map(|tau| self.value(tau as f64)).collect(),
        }
    }
}

/// Kernel values on the lag grid `τ = 1..=q`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KernelGrid {
    pub values: Vec<f64>,
}

impl KernelGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite kernel value {v}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(q: usize) -> Self {
        Self {
            values: vec![0.0; q],
        }
    }

    pub fn q(&self) -> usize {
        self.values.len()
    }

    /// Value at lag `tau` (1-based); zero outside the grid.
    pub fn at(&self, tau: usize) -> f64 {
        if tau >= 1 && tau <= self.values.len() {
            self.values[tau - 1]
        } else {
            0.0
        }
    }

    /// Signed sum over the grid.
    pub fn l1_norm(&self) -> f64 {
        kernel_l1_norm(self)
    }

    pub fn abs_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// `Σ k(τ)²`, the norm convention for Zumbach grids.
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Copy truncated or zero-padded to length `q`.
    pub fn resized(&self, q: usize) -> KernelGrid {
        let mut values = self.values.clone();
        values.resize(q, 0.0);
        KernelGrid { values }
    }
}

/// Signed ℓ¹ norm `Σ_{τ=1}^{q} values[τ]`. Square entries first for the
/// `‖k²‖₁` convention of Zumbach grids.
pub fn kernel_l1_norm(kernel: &KernelGrid) -> f64 {
    kernel.values.iter().sum()
}

/// Number of lag pairs `τ₁ < τ₂` on a grid of size `q`.
pub fn n_pairs(q: usize) -> usize {
    q * q.saturating_sub(1) / 2
}

/// Zero-based index of the pair `(k1, k2)`, `1 ≤ k1 < k2 ≤ q`, in row-major
/// order over the upper triangle: (1,2), (1,3), …, (1,q), (2,3), …
pub fn pair_index(k1: usize, k2: usize, q: usize) -> usize {
    debug_assert!(1 <= k1 && k1 < k2 && k2 <= q);
    (k1 - 1) * (2 * q - k1) / 2 + (k2 - k1 - 1)
}

/// All pairs `(k1, k2)` in `pair_index` order.
pub fn pairs(q: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n_pairs(q));
    for k1 in 1..=q {
        for k2 in (k1 + 1)..=q {
            out.push((k1, k2));
        }
    }
    out
}

/// Strict upper triangle `K(τ₁, τ₂)`, `τ₁ < τ₂`, packed in `pair_index` order.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperTriangle {
    pub q: usize,
    pub data: Vec<f64>,
}

impl UpperTriangle {
    pub fn zeros(q: usize) -> Self {
        Self {
            q,
            data: vec![0.0; n_pairs(q)],
        }
    }

    pub fn from_packed(q: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_pairs(q) {
            return Err(Error::LengthMismatch {
                what: "upper triangle",
                expected: n_pairs(q),
                got: data.len(),
            });
        }
        Ok(Self { q, data })
    }

    /// Symmetric lookup; zero on the diagonal and outside the grid.
    pub fn get(&self, t1: usize, t2: usize) -> f64 {
        let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if a == b || a == 0 || b > self.q {
            0.0
        } else {
            self.data[pair_index(a, b, self.q)]
        }
    }

    pub fn set(&mut self, t1: usize, t2: usize, v: f64) {
        let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let q = self.q;
        self.data[pair_index(a, b, q)] = v;
    }

    /// Dense symmetric matrix with zero diagonal (0-based lags).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.q]; self.q];
        for (idx, (a, b)) in pairs(self.q).into_iter().enumerate() {
            m[a - 1][b - 1] = self.data[idx];
            m[b - 1][a - 1] = self.data[idx];
        }
        m
    }

    pub fn outer(k: &KernelGrid) -> Self {
        let q = k.q();
        let data = pairs(q)
            .into_iter()
            .map(|(a, b)| k.at(a) * k.at(b))
            .collect();
        Self { q, data }
    }
}

/// Two-time kernel `K(τ₁, τ₂)`: the time-diagonal `diag` plus an off-diagonal
/// part given either as a rank-one factor (takes precedence) or as a raw table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadraticKernelGrid {
    pub diag: KernelGrid,
    pub rank_one: Option<KernelGrid>,
    pub full_upper: Option<UpperTriangle>,
}

impl QuadraticKernelGrid {
    pub fn zeros(q: usize) -> Self {
        Self {
            diag: KernelGrid::zeros(q),
            rank_one: None,
            full_upper: None,
        }
    }

    /// `K = φ·δ + k kᵀ`: the time-diagonal becomes `φ + k²`.
    pub fn zhawkes(phi: &KernelGrid, k: &KernelGrid) -> Self {
        let diag = phi
            .values
            .iter()
            .zip(&k.values)
            .map(|(p, kk)| p + kk * kk)
            .collect();
        Self {
            diag: KernelGrid { values: diag },
            rank_one: Some(k.clone()),
            full_upper: None,
        }
    }

    pub fn q(&self) -> usize {
        self.diag.q()
    }

    pub fn get(&self, t1: usize, t2: usize) -> f64 {
        if t1 == t2 {
            return self.diag.at(t1);
        }
        if let Some(k) = &self.rank_one {
            k.at(t1) * k.at(t2)
        } else if let Some(u) = &self.full_upper {
            u.get(t1, t2)
        } else {
            0.0
        }
    }

    /// Off-diagonal part as a packed upper triangle.
    pub fn off_diagonal(&self) -> UpperTriangle {
        let q = self.q();
        if let Some(k) = &self.rank_one {
            UpperTriangle::outer(&k.resized(q))
        } else if let Some(u) = &self.full_upper {
            u.clone()
        } else {
            UpperTriangle::zeros(q)
        }
    }

    pub fn has_off_diagonal(&self) -> bool {
        self.rank_one.as_ref().is_some_and(|k| !k.is_zero())
            || self
                .full_upper
                .as_ref()
                .is_some_and(|u| u.data.iter().any(|v| *v != 0.0))
    }
}

/// Full `q × q` table with zero diagonal (`K_×`, not symmetric).
#[derive(Debug, Clone, PartialEq)]
pub struct SquareTable {
    pub q: usize,
    pub data: Vec<f64>,
}

impl SquareTable {
    pub fn zeros(q: usize) -> Self {
        Self {
            q,
            data: vec![0.0; q * q],
        }
    }

    pub fn get(&self, t1: usize, t2: usize) -> f64 {
        if t1 == 0 || t2 == 0 || t1 > self.q || t2 > self.q || t1 == t2 {
            0.0
        } else {
            self.data[(t1 - 1) * self.q + (t2 - 1)]
        }
    }

    pub fn set(&mut self, t1: usize, t2: usize, v: f64) {
        if t1 != t2 {
            self.data[(t1 - 1) * self.q + (t2 - 1)] = v;
        }
    }
}

/// Complete kernel set of a one- or two-asset MQARCH:
///
/// σ²_{i,t} = σ²_{i,∞} + Σ_j Σ_τ L^i_j(τ) r_{j,t−τ} + Σ_j Σ_{τ₁,τ₂} K^i_j(τ₁,τ₂) r_{j,t−τ₁} r_{j,t−τ₂}
///          + Σ_τ φ^i_×(τ)(r_{i,t−τ} r_{ī,t−τ} − C) + Σ_{τ₁≠τ₂} K^i_×(τ₁,τ₂) r_{i,t−τ₁} r_{ī,t−τ₂}
///
/// `quad[i][j]` holds `K^i_j` (target `i`, source `j`); its time-diagonal is
/// the feedback kernel φ^i_j. Leverage, φ_× and K_× live on a grid of size
/// `q_aux`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub n_assets: usize,
    pub q: usize,
    pub q_aux: usize,
    pub quad: Vec<Vec<QuadraticKernelGrid>>,
    pub leverage: Vec<Vec<KernelGrid>>,
    pub phi_cross: Vec<KernelGrid>,
    pub k_cross: Vec<Option<SquareTable>>,
    pub sigma_inf_sq: Vec<f64>,
    pub equal_time_cov: f64,
}

impl ModelSpec {
    pub fn zeros(n_assets: usize, q: usize, q_aux: usize) -> Self {
        assert!(
            n_assets == 1 || n_assets == 2,
            "one or two assets supported"
        );
        Self {
            n_assets,
            q,
            q_aux,
            quad: vec![vec![QuadraticKernelGrid::zeros(q); n_assets]; n_assets],
            leverage: vec![vec![KernelGrid::zeros(q_aux); n_assets]; n_assets],
            phi_cross: vec![KernelGrid::zeros(q_aux); n_assets],
            k_cross: vec![None; n_assets],
            sigma_inf_sq: vec![0.0; n_assets],
            equal_time_cov: 0.0,
        }
    }

    /// Tabulates an exponential parameter set: φ from the linear kernels,
    /// `K = φδ + kkᵀ` from the Zumbach kernels and L from leverage kernels.
    /// Baseline intensities become baseline squared volatilities.
    pub fn from_exponential(spec: &PointProcessSpec, q: usize, q_aux: usize) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_assets();
        let mut m = Self::zeros(n, q, q_aux);
        for i in 0..n {
            m.sigma_inf_sq[i] = spec.lambda_inf[i];
            for j in 0..n {
                let phi = spec.phi[i][j].tabulate(q);
                let k = spec.k[i][j].tabulate(q);
                m.quad[i][j] = if k.is_zero() {
                    QuadraticKernelGrid {
                        diag: phi,
                        rank_one: None,
                        full_upper: None,
                    }
                } else {
                    QuadraticKernelGrid::zhawkes(&phi, &k)
                };
                m.leverage[i][j] = spec.leverage[i][j].tabulate(q_aux);
            }
        }
        Ok(m)
    }

    pub fn phi(&self, target: usize, source: usize) -> &KernelGrid {
        &self.quad[target][source].diag
    }

    /// Largest lag used by any kernel.
    pub fn max_lag(&self) -> usize {
        self.q.max(self.q_aux)
    }

    /// `N[i][j] = Σ_τ φ^i_j(τ)`, zero-padded to 2×2 for one asset.
    pub fn norm_matrix(&self) -> [[f64; 2]; 2] {
        let mut n = [[0.0; 2]; 2];
        for (i, row) in n.iter_mut().enumerate().take(self.n_assets) {
            for (j, v) in row.iter_mut().enumerate().take(self.n_assets) {
                *v = self.phi(i, j).l1_norm();
            }
        }
        n
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.norm_matrix())
    }

    /// `(I − N)⁻¹ σ²_∞` for this model.
    pub fn mean_squared_vol(&self) -> Result<Vec<f64>> {
        let mut s = [0.0; 2];
        s[..self.n_assets].copy_from_slice(&self.sigma_inf_sq);
        let m = mean_squared_vol(&self.norm_matrix(), &s)?;
        Ok(m[..self.n_assets].to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_assets;
        if n != 1 && n != 2 {
            return Err(Error::InvalidInput(format!(
                "n_assets must be 1 or 2, got {n}"
            )));
        }
        let check = |what: &'static str, got: usize, expected: usize| -> Result<()> {
            if got != expected {
                Err(Error::LengthMismatch {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("quad rows", self.quad.len(), n)?;
        check("leverage rows", self.leverage.len(), n)?;
        check("phi_cross", self.phi_cross.len(), n)?;
        check("k_cross", self.k_cross.len(), n)?;
        check("sigma_inf_sq", self.sigma_inf_sq.len(), n)?;
        for i in 0..n {
            check("quad cols", self.quad[i].len(), n)?;
            check("leverage cols", self.leverage[i].len(), n)?;
            for j in 0..n {
                let k = &self.quad[i][j];
                check("phi grid", k.diag.q(), self.q)?;
                if let Some(r) = &k.rank_one {
                    check("rank-one grid", r.q(), self.q)?;
                }
                if let Some(u) = &k.full_upper {
                    check("upper triangle", u.q, self.q)?;
                }
                check("leverage grid", self.leverage[i][j].q(), self.q_aux)?;
            }
            check("phi_cross grid", self.phi_cross[i].q(), self.q_aux)?;
            if let Some(t) = &self.k_cross[i] {
                check("k_cross grid", t.q, self.q_aux)?;
            }
            if !(self.sigma_inf_sq[i] >= 0.0) {
                return Err(Error::InvalidInput("sigma_inf_sq must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Parametric exponential model. Used both as a point-process intensity
/// specification and, through [`ModelSpec::from_exponential`], as a
/// tabulated MQARCH (baseline intensity ↔ baseline squared volatility).
#[derive(Debug, Clone, PartialEq)]
pub struct PointProcessSpec {
    pub lambda_inf: Vec<f64>,
    pub phi: Vec<Vec<ExponentialKernelParams>>,
    pub k: Vec<Vec<ExponentialKernelParams>>,
    pub leverage: Vec<Vec<ExponentialKernelParams>>,
}

impl PointProcessSpec {
    /// Model with only baselines set.
    pub fn baseline(lambda_inf: Vec<f64>) -> Self {
        let n = lambda_inf.len();
        Self {
            lambda_inf,
            phi: vec![vec![ExponentialKernelParams::zero(KernelKind::Linear); n]; n],
            k: vec![vec![ExponentialKernelParams::zero(KernelKind::Zumbach); n]; n],
            leverage: vec![vec![ExponentialKernelParams::zero(KernelKind::Leverage); n]; n],
        }
    }

    /// One-asset ZHawkes with `φ = n_H β e^{−βt}` and `k = √(2 n_Z ω) e^{−ωt}`.
    pub fn zhawkes_1d(lambda_inf: f64, n_h: f64, beta: f64, n_z: f64, omega: f64) -> Self {
        let mut s = Self::baseline(vec![lambda_inf]);
        s.phi[0][0] = ExponentialKernelParams::linear(n_h, beta);
        s.k[0][0] = ExponentialKernelParams::zumbach(n_z, omega);
        s
    }

    pub fn n_assets(&self) -> usize {
        self.lambda_inf.len()
    }

    /// Continuous norms `n_H + n_Z` per (target, source), zero-padded to 2×2.
    pub fn norm_matrix(&self) -> [[f64; 2]; 2] {
        let mut n = [[0.0; 2]; 2];
        for i in 0..self.n_assets() {
            for j in 0..self.n_assets() {
                n[i][j] = self.phi[i][j].norm + self.k[i][j].norm;
            }
        }
        n
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_assets();
        if n != 1 && n != 2 {
            return Err(Error::InvalidInput(format!(
                "n_assets must be 1 or 2, got {n}"
            )));
        }
        for table in [&self.phi, &self.k, &self.leverage] {
            if table.len() != n || table.iter().any(|r| r.len() != n) {
                return Err(Error::LengthMismatch {
                    what: "kernel table",
                    expected: n,
                    got: table.len(),
                });
            }
            for p in table.iter().flatten() {
                p.validate()?;
            }
        }
        if self
            .lambda_inf
            .iter()
            .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::InvalidInput(
                "baselines must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Largest absolute eigenvalue of a 2×2 matrix.
pub fn spectral_radius(m: &[[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (tr / 2.0 + s).abs().max((tr / 2.0 - s).abs())
    } else {
        // complex pair: |λ|² = det
        det.sqrt()
    }
}

/// Mean squared volatility `(I − N)⁻¹ σ²_∞`, with `N[i][j]` the ℓ¹ norm of the
/// feedback of asset `j` on asset `i`. Quadratic off-diagonal terms have zero
/// mean and do not enter.
pub fn mean_squared_vol(phi_norms: &[[f64; 2]; 2], sigma_inf_sq: &[f64; 2]) -> Result<[f64; 2]> {
    let radius = spectral_radius(phi_norms);
    if !(radius < 1.0 - 1e-12) {
        return Err(Error::NonStationary { radius });
    }
    let a = 1.0 - phi_norms[0][0];
    let b = -phi_norms[0][1];
    let c = -phi_norms[1][0];
    let d = 1.0 - phi_norms[1][1];
    let det = a * d - b * c;
    let out = [
        (d * sigma_inf_sq[0] - b * sigma_inf_sq[1]) / det,
        (-c * sigma_inf_sq[0] + a * sigma_inf_sq[1]) / det,
    ];
    if out.iter().any(|v| *v < 0.0) {
        return Err(Error::NonStationary { radius });
    }
    Ok(out)
}

/// Inverse relation: baselines `σ²_∞ = (I − N) σ̄²` from mean squared volatility.
pub fn baseline_from_mean(phi_norms: &[[f64; 2]; 2], mean_sq_vol: &[f64; 2]) -> [f64; 2] {
    [
        (1.0 - phi_norms[0][0]) * mean_sq_vol[0] - phi_norms[0][1] * mean_sq_vol[1],
        -phi_norms[1][0] * mean_sq_vol[0] + (1.0 - phi_norms[1][1]) * mean_sq_vol[1],
    ]
}

/// σ²_{target,t} from return histories. `history[a]` holds past returns of
/// asset `a` with the most recent (`r_{a,t−1}`) last.
pub fn evaluate_sigma2(model: &ModelSpec, history: &[&[f64]], target: usize) -> Result<f64> {
    if history.len() != model.n_assets {
        return Err(Error::LengthMismatch {
            what: "history assets",
            expected: model.n_assets,
            got: history.len(),
        });
    }
    let needed = model.max_lag();
    for h in history {
        if h.len() < needed {
            return Err(Error::InsufficientHistory {
                needed,
                got: h.len(),
            });
        }
    }
    Ok(sigma2_unchecked(model, history, target))
}

#[inline]
fn lagged(h: &[f64], tau: usize) -> f64 {
    h[h.len() - tau]
}

/// Same as [`evaluate_sigma2`] without length checks.
pub(crate) fn sigma2_unchecked(model: &ModelSpec, history: &[&[f64]], target: usize) -> f64 {
    let i = target;
    let mut s = model.sigma_inf_sq[i];
    for (j, h) in history.iter().enumerate() {
        let lev = &model.leverage[i][j].values;
        for (tau0, l) in lev.iter().enumerate() {
            if *l != 0.0 {
                s += l * lagged(h, tau0 + 1);
            }
        }
        let kq = &model.quad[i][j];
        for (tau0, p) in kq.diag.values.iter().enumerate() {
            let r = lagged(h, tau0 + 1);
            s += p * r * r;
        }
        if let Some(k) = &kq.rank_one {
            // 2 Σ_{τ₁<τ₂} k k r r = (Σ k r)² − Σ k² r²
            let mut lin = 0.0;
            let mut sq = 0.0;
            for (tau0, kv) in k.values.iter().enumerate() {
                let kr = kv * lagged(h, tau0 + 1);
                lin += kr;
                sq += kr * kr;
            }
            s += lin * lin - sq;
        } else if let Some(u) = &kq.full_upper {
            let q = u.q;
            let mut idx = 0;
            for t1 in 1..=q {
                let r1 = lagged(h, t1);
                let mut acc = 0.0;
                for t2 in (t1 + 1)..=q {
                    acc += u.data[idx] * lagged(h, t2);
                    idx += 1;
                }
                s += 2.0 * r1 * acc;
            }
        }
    }
    if model.n_assets == 2 {
        let o = 1 - i;
        let (hi, ho) = (history[i], history[o]);
        for (tau0, p) in model.phi_cross[i].values.iter().enumerate() {
            if *p != 0.0 {
                s += p * (lagged(hi, tau0 + 1) * lagged(ho, tau0 + 1) - model.equal_time_cov);
            }
        }
        if let Some(kx) = &model.k_cross[i] {
            for t1 in 1..=kx.q {
                let r1 = lagged(hi, t1);
                for t2 in 1..=kx.q {
                    if t1 != t2 {
                        s += kx.get(t1, t2) * r1 * lagged(ho, t2);
                    }
                }
            }
        }
    }
    s
}

const CSV_HEADER: [&str; 6] = ["kernel_name", "target", "source", "lag1", "lag2", "value"];

fn fmt_opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ModelSpec {
    /// Writes the flat CSV form `(kernel_name, target, source, lag1, lag2, value)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        let mut row = |name: &str,
                       t: Option<usize>,
                       s: Option<usize>,
                       l1: Option<usize>,
                       l2: Option<usize>,
                       v: f64| {
            wr.write_record([
                name.to_string(),
                fmt_opt(t),
                fmt_opt(s),
                fmt_opt(l1),
                fmt_opt(l2),
                v.to_string(),
            ])
        };
        row("n_assets", None, None, None, None, self.n_assets as f64)?;
        row("q", None, None, None, None, self.q as f64)?;
        row("q_aux", None, None, None, None, self.q_aux as f64)?;
        for i in 0..self.n_assets {
            row(
                "sigma_inf_sq",
                Some(i),
                None,
                None,
                None,
                self.sigma_inf_sq[i],
            )?;
        }
        row(
            "equal_time_cov",
            None,
            None,
            None,
            None,
            self.equal_time_cov,
        )?;
        for i in 0..self.n_assets {
            for j in 0..self.n_assets {
                let kq = &self.quad[i][j];
                for (t, v) in kq.diag.values.iter().enumerate() {
                    row("phi", Some(i), Some(j), Some(t + 1), None, *v)?;
                }
                if let Some(k) = &kq.rank_one {
                    for (t, v) in k.values.iter().enumerate() {
                        row("k", Some(i), Some(j), Some(t + 1), None, *v)?;
                    }
                }
                if let Some(u) = &kq.full_upper {
                    for (idx, (a, b)) in pairs(u.q).into_iter().enumerate() {
                        row("k_full", Some(i), Some(j), Some(a), Some(b), u.data[idx])?;
                    }
                }
                for (t, v) in self.leverage[i][j].values.iter().enumerate() {
                    row("leverage", Some(i), Some(j), Some(t + 1), None, *v)?;
                }
            }
            if self.n_assets == 2 {
                for (t, v) in self.phi_cross[i].values.iter().enumerate() {
                    row("phi_cross", Some(i), None, Some(t + 1), None, *v)?;
                }
                if let Some(kx) = &self.k_cross[i] {
                    for t1 in 1..=kx.q {
                        for t2 in 1..=kx.q {
                            if t1 != t2 {
                                row("k_cross", Some(i), None, Some(t1), Some(t2), kx.get(t1, t2))?;
                            }
                        }
                    }
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Parse(format!(
                "unexpected model header {:?}",
                headers
            )));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let opt = |k: usize| -> Result<Option<usize>> {
                let f = rec.get(k).unwrap_or("").trim();
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse()
                        .map(Some)
                        .map_err(|_| Error::Parse(format!("bad integer '{f}'")))
                }
            };
            let value: f64 = rec
                .get(5)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad value in row {:?}", rec)))?;
            rows.push((
                rec.get(0).unwrap_or("").to_string(),
                opt(1)?,
                opt(2)?,
                opt(3)?,
                opt(4)?,
                value,
            ));
        }
        let scalar = |name: &str| rows.iter().find(|r| r.0 == name).map(|r| r.5);
        let n_assets = scalar("n_assets").map(|v| v as usize).unwrap_or_else(|| {
            rows.iter()
                .filter_map(|r| r.1)
                .max()
                .map(|m| m + 1)
                .unwrap_or(1)
        });
        let max_lag = |names: &[&str]| {
            rows.iter()
                .filter(|r| names.contains(&r.0.as_str()))
                .flat_map(|r| [r.3, r.4])
                .flatten()
                .max()
                .unwrap_or(0)
        };
        let q = scalar("q")
            .map(|v| v as usize)
            .unwrap_or_else(|| max_lag(&["phi", "k", "k_full"]));
        let q_aux = scalar("q_aux")
            .map(|v| v as usize)
            .unwrap_or_else(|| max_lag(&["leverage", "phi_cross", "k_cross"]));
        if n_assets != 1 && n_assets != 2 {
            return Err(Error::Parse(format!(
                "n_assets must be 1 or 2, got {n_assets}"
            )));
        }
        let mut m = ModelSpec::zeros(n_assets, q, q_aux);
        let bad = |what: &str| Error::Parse(format!("malformed {what} row"));
        for (name, t, s, l1, l2, v) in rows {
            let asset = |a: Option<usize>| a.filter(|x| *x < n_assets);
            let lag = |l: Option<usize>, qq: usize| l.filter(|x| *x >= 1 && *x <= qq);
            match name.as_str() {
                "n_assets" | "q" | "q_aux" => {}
                "sigma_inf_sq" => m.sigma_inf_sq[asset(t).ok_or_else(|| bad(&name))?] = v,
                "equal_time_cov" => m.equal_time_cov = v,
                "phi" => {
                    let (i, j, l) = (asset(t), asset(s), lag(l1, q));
                    let (i, j, l) = (
                        i.ok_or_else(|| bad(&name))?,
                        j.ok_or_else(|| bad(&name))?,
                        l.ok_or_else(|| bad(&name))?,
                    );
                    m.quad[i][j].diag.values[l - 1] = v;
                }
                "k" => {
                    let (i, j, l) = (asset(t), asset(s), lag(l1, q));
                    let (i, j, l) = (
                        i.ok_or_else(|| bad(&name))?,
                        j.ok_or_else(|| bad(&name))?,
                        l.ok_or_else(|| bad(&name))?,
                    );
                    m.quad[i][j]
                        .rank_one
                        .get_or_insert_with(|| KernelGrid::zeros(q))
                        .values[l - 1] = v;
                }
                "k_full" => {
                    let (i, j) = (
                        asset(t).ok_or_else(|| bad(&name))?,
                        asset(s).ok_or_else(|| bad(&name))?,
                    );
                    let (a, b) = (
                        lag(l1, q).ok_or_else(|| bad(&name))?,
                        lag(l2, q).ok_or_else(|| bad(&name))?,
                    );
                    if a == b {
                        return Err(bad(&name));
                    }
                    m.quad[i][j]
                        .full_upper
                        .get_or_insert_with(|| UpperTriangle::zeros(q))
                        .set(a, b, v);
                }
                "leverage" => {
                    let (i, j, l) = (asset(t), asset(s), lag(l1, q_aux));
                    let (i, j, l) = (
                        i.ok_or_else(|| bad(&name))?,
                        j.ok_or_else(|| bad(&name))?,
                        l.ok_or_else(|| bad(&name))?,
                    );
                    m.leverage[i][j].values[l - 1] = v;
                }
                "phi_cross" => {
                    let (i, l) = (
                        asset(t).ok_or_else(|| bad(&name))?,
                        lag(l1, q_aux).ok_or_else(|| bad(&name))?,
                    );
                    m.phi_cross[i].values[l - 1] = v;
                }
                "k_cross" => {
                    let i = asset(t).ok_or_else(|| bad(&name))?;
                    let (a, b) = (
                        lag(l1, q_aux).ok_or_else(|| bad(&name))?,
                        lag(l2, q_aux).ok_or_else(|| bad(&name))?,
                    );
                    m.k_cross[i]
                        .get_or_insert_with(|| SquareTable::zeros(q_aux))
                        .set(a, b, v);
                }
                other => return Err(Error::Parse(format!("unknown kernel_name '{other}'"))),
            }
        }
        m.validate()?;
        Ok(m)
    }
}

const PP_HEADER: [&str; 5] = ["kind", "target", "source", "norm", "rate"];

impl PointProcessSpec {
    /// CSV form `(kind, target, source, norm, rate)`; `kind` is one of
    /// `lambda_inf`, `phi`, `k`, `leverage`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(PP_HEADER)?;
        let n = self.n_assets();
        for i in 0..n {
            wr.write_record([
                "lambda_inf".to_string(),
                i.to_string(),
                String::new(),
                self.lambda_inf[i].to_string(),
                String::new(),
            ])?;
        }
        for (name, table) in [
            ("phi", &self.phi),
            ("k", &self.k),
            ("leverage", &self.leverage),
        ] {
            for i in 0..n {
                for j in 0..n {
                    let p = table[i][j];
                    wr.write_record([
                        name.to_string(),
                        i.to_string(),
                        j.to_string(),
                        p.norm.to_string(),
                        p.rate.to_string(),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != PP_HEADER {
            return Err(Error::Parse(format!(
                "unexpected point-process header {:?}",
                headers
            )));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
            rows.push((field(0), field(1), field(2), field(3), field(4)));
        }
        let parse_u = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad index '{s}'")))
        };
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{s}'")))
        };
        let mut n = 0;
        for r in &rows {
            n = n.max(parse_u(&r.1)? + 1);
            if !r.2.is_empty() {
                n = n.max(parse_u(&r.2)? + 1);
            }
        }
        let mut spec = PointProcessSpec::baseline(vec![0.0; n]);
        for (kind, t, s, norm, rate) in rows {
            let i = parse_u(&t)?;
            if kind == "lambda_inf" {
                spec.lambda_inf[i] = parse_f(&norm)?;
                continue;
            }
            let j = parse_u(&s)?;
            let p = ExponentialKernelParams {
                norm: parse_f(&norm)?,
                rate: parse_f(&rate)?,
                kind: KernelKind::Linear,
            };
            match kind.as_str() {
                "phi" => spec.phi[i][j] = p,
                "k" => {
                    spec.k[i][j] = ExponentialKernelParams {
                        kind: KernelKind::Zumbach,
                        ..p
                    }
                }
                "leverage" => {
                    spec.leverage[i][j] = ExponentialKernelParams {
                        kind: KernelKind::Leverage,
                        ..p
                    }
                }
                other => return Err(Error::Parse(format!("unknown kind '{other}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}
