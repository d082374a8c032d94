//! Independent moment oracle shared by the integration tests.
//!
//! [`SampleMoments`] measures moments of products of lagged returns directly
//! from a panel, keyed by the multiset of `(lag, asset)` factors, so every
//! ordering of the same factors gives the same value. Moments whose most
//! recent time holds a single factor are set to zero, as they vanish for a
//! martingale. [`forward_suite`] then computes `E[σ²_j · probe]` term by term
//! from a known model and packs everything into a covariance suite.

#![allow(dead_code)]

use mqarch::model::{pairs, ModelSpec};
use mqarch::moments::{CovarianceSuite, LagTable};
use std::cell::RefCell;
use std::collections::HashMap;

pub struct SampleMoments {
    returns: Vec<Vec<f64>>,
    cache: RefCell<HashMap<Vec<(usize, usize)>, f64>>,
}

impl SampleMoments {
    pub fn new(returns: Vec<Vec<f64>>) -> Self {
        Self {
            returns,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// `E[Π r_{asset, s − lag}]` over the given `(asset, lag)` factors.
    pub fn m(&self, factors: &[(usize, usize)]) -> f64 {
        let lo = factors.iter().map(|f| f.1).min().unwrap_or(0);
        if factors.iter().filter(|f| f.1 == lo).count() < 2 {
            return 0.0;
        }
        let mut key: Vec<(usize, usize)> = factors.iter().map(|&(a, l)| (l - lo, a)).collect();
        key.sort_unstable();
        if let Some(v) = self.cache.borrow().get(&key) {
            return *v;
        }
        let hi = key.iter().map(|k| k.0).max().unwrap_or(0);
        let n = self.returns[0].len();
        let mut acc = 0.0;
        for s in hi..n {
            let mut p = 1.0;
            for &(l, a) in &key {
                p *= self.returns[a][s - l];
            }
            acc += p;
        }
        let v = acc / (n - hi) as f64;
        self.cache.borrow_mut().insert(key, v);
        v
    }
}

/// `E[σ²_{j,t} · Π r_{a, t − lag}]` for a model without leverage.
fn sigma_times(
    model: &ModelSpec,
    mom: &SampleMoments,
    j: usize,
    probe: &[(usize, usize)],
    cov: f64,
) -> f64 {
    let n = model.n_assets;
    let with = |extra: &[(usize, usize)]| {
        let mut f = extra.to_vec();
        f.extend_from_slice(probe);
        mom.m(&f)
    };
    let mut v = model.sigma_inf_sq[j] * if probe.is_empty() { 1.0 } else { mom.m(probe) };
    for i in 0..n {
        let k = &model.quad[j][i];
        for t1 in 1..=model.q {
            for t2 in 1..=model.q {
                let c = k.get(t1, t2);
                if c != 0.0 {
                    v += c * with(&[(i, t1), (i, t2)]);
                }
            }
        }
    }
    if n == 2 {
        let jb = 1 - j;
        let base = if probe.is_empty() { 1.0 } else { mom.m(probe) };
        for t in 1..=model.q_aux {
            let p = model.phi_cross[j].at(t);
            if p != 0.0 {
                v += p * (with(&[(j, t), (jb, t)]) - cov * base);
            }
        }
    }
    v
}

/// Suite whose regressor tables are the sample moments of `mom` and whose
/// response tables are the exact consequences of `model`. The model's
/// baselines are reset so that `E[σ²_i] = E[r²_i]`.
pub fn forward_suite(
    model: &mut ModelSpec,
    mom: &SampleMoments,
    max_lag: usize,
) -> CovarianceSuite {
    let n = model.n_assets;
    let nl = max_lag + 1;
    let upairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
    let m2 = |a: usize, b: usize| mom.m(&[(a, 0), (b, 0)]);
    let ret: Vec<f64> = (0..n).map(|i| m2(i, i)).collect();
    let mut padded = [0.0; 2];
    padded[..n].copy_from_slice(&ret);
    let base = mqarch::model::baseline_from_mean(&model.norm_matrix(), &padded);
    model.sigma_inf_sq = base[..n].to_vec();
    let cov = if n == 2 { m2(0, 1) } else { 0.0 };
    model.equal_time_cov = cov;
    let mean_sigma2: Vec<f64> = (0..n)
        .map(|j| sigma_times(model, mom, j, &[], cov))
        .collect();

    let n_w = n + upairs.len();
    let mut gamma = vec![vec![vec![0.0; nl]; n]; n];
    for l in 0..n {
        for c in 0..n {
            for u in 0..nl {
                gamma[l][c][u] = mom.m(&[(l, 0), (c, u)]);
            }
        }
    }
    let mut t2 = vec![vec![vec![0.0; nl]; n]; n_w];
    let mut t3 = vec![vec![LagTable::zeros(nl); upairs.len()]; n_w];
    for (w, row) in t3.iter_mut().enumerate() {
        for (p, &(c, d)) in upairs.iter().enumerate() {
            for u1 in 0..nl {
                for u2 in 0..nl {
                    let v = if w < n {
                        if u1 == 0 || u2 == 0 {
                            continue;
                        }
                        sigma_times(model, mom, w, &[(c, u1), (d, u2)], cov)
                    } else {
                        let (a, b) = upairs[w - n];
                        mom.m(&[(a, 0), (b, 0), (c, u1), (d, u2)])
                    };
                    row[p].set(u1, u2, v);
                }
            }
        }
    }
    for (w, row) in t2.iter_mut().enumerate().skip(n) {
        let (a, b) = upairs[w - n];
        for (c, v) in row.iter_mut().enumerate() {
            for (u, x) in v.iter_mut().enumerate() {
                *x = mom.m(&[(a, 0), (b, 0), (c, u)]);
            }
        }
    }
    for (j, row) in t2.iter_mut().enumerate().take(n) {
        for (c, v) in row.iter_mut().enumerate() {
            for (u, x) in v.iter_mut().enumerate().skip(1) {
                *x = sigma_times(model, mom, j, &[(c, u)], cov);
            }
        }
    }
    CovarianceSuite {
        n_assets: n,
        max_lag,
        n_days: 1,
        bins_per_day: mom.returns[0].len(),
        symmetric: false,
        mean_sigma2,
        mean_r: vec![0.0; n],
        gamma,
        t2,
        t3,
    }
}

/// Largest absolute difference between the recovered and true kernels.
pub fn max_kernel_error(truth: &ModelSpec, est: &ModelSpec) -> f64 {
    let n = truth.n_assets;
    let mut e: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let (a, b) = (&truth.quad[j][i], &est.quad[j][i]);
            for t in 1..=truth.q {
                e = e.max((a.diag.at(t) - b.diag.at(t)).abs());
            }
            let ua = a.off_diagonal();
            let ub = b.full_upper.clone().unwrap_or_else(|| b.off_diagonal());
            for (x, y) in pairs(truth.q)
                .into_iter()
                .map(|(p, r)| (ua.get(p, r), ub.get(p, r)))
            {
                e = e.max((x - y).abs());
            }
        }
        if n == 2 {
            for t in 1..=truth.q_aux {
                e = e.max((truth.phi_cross[j].at(t) - est.phi_cross[j].at(t)).abs());
            }
        }
    }
    e
}

/// Random two-asset quadratic model on grids `q` and `q_aux` with a
/// stationary feedback matrix and a full (not rank-one) off-diagonal `K`.
pub fn random_quadratic_model<R: rand::Rng>(rng: &mut R, q: usize, q_aux: usize) -> ModelSpec {
    use mqarch::model::{KernelGrid, QuadraticKernelGrid, UpperTriangle};
    let mut m = ModelSpec::zeros(2, q, q_aux);
    for j in 0..2 {
        for i in 0..2 {
            let norm = if i == j {
                rng.random_range(0.05..0.3)
            } else {
                rng.random_range(0.0..0.1)
            };
            let rate: f64 = rng.random_range(0.1..1.0);
            let w: Vec<f64> = (1..=q).map(|t| (-rate * t as f64).exp()).collect();
            let total: f64 = w.iter().sum();
            let diag = KernelGrid {
                values: w.iter().map(|x| norm * x / total).collect(),
            };
            let upper = UpperTriangle {
                q,
                data: (0..mqarch::model::n_pairs(q))
                    .map(|_| rng.random_range(-0.02..0.02))
                    .collect(),
            };
            m.quad[j][i] = QuadraticKernelGrid {
                diag,
                rank_one: None,
                full_upper: Some(upper),
            };
        }
        let amp: f64 = rng.random_range(-0.05..0.05);
        m.phi_cross[j] = KernelGrid {
            values: (1..=q_aux)
                .map(|t| amp * (-(t as f64) / 3.0).exp())
                .collect(),
        };
    }
    m
}

/// Returns of a short two-asset simulation used as the regressor source.
pub fn regressor_returns(n_bins: usize, seed: u64) -> Vec<Vec<f64>> {
    use mqarch::model::{ExponentialKernelParams as E, KernelKind, PointProcessSpec};
    let spec = PointProcessSpec {
        lambda_inf: vec![0.4, 0.3],
        phi: vec![
            vec![E::linear(0.3, 0.3), E::linear(0.1, 0.5)],
            vec![E::linear(0.1, 0.4), E::linear(0.3, 0.2)],
        ],
        k: vec![vec![E::zumbach(0.1, 0.3), E::zero(KernelKind::Zumbach)]; 2],
        leverage: vec![vec![E::zero(KernelKind::Leverage); 2]; 2],
    };
    let model = ModelSpec::from_exponential(&spec, 12, 12).unwrap();
    let sim = mqarch::simulate::simulate_mqarch(
        &model,
        n_bins,
        seed,
        mqarch::simulate::Noise::CorrelatedGaussian(0.4),
    )
    .unwrap();
    sim.returns
}
