//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero when any criterion fails. Set `ACCEPTANCE_ONLY`
//! to a comma-separated list of criterion numbers to run a subset.

mod common;

use mqarch::exec::Exec;
use mqarch::factor::{calibrate_factor_model, simulate_factor_universe, FactorOptions};
use mqarch::mle::{
    fisher_standard_errors, grad_binned_proxy, maximize, warm_start, MaximizeOptions, MleData,
    MleMode, MleProblem,
};
use mqarch::model::{ExponentialKernelParams as E, KernelKind, ModelSpec, PointProcessSpec};
use mqarch::moments::{estimate_suite, fit_smooth, CovarianceSuite, EstimatorConfig, FitFamily};
use mqarch::preprocess::{lag1_autocorrelation, martingalise, mirror_augment, BinnedPanel, Stage};
use mqarch::simulate::{
    bin_events, simulate_mqarch, simulate_qhawkes_thinning, Noise, SimulatedPanel,
};
use mqarch::yulewalker::{
    build_a1, build_a2, build_a3, build_a4, build_a5, calibrate, CalibrationOptions, Solver, Step,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

type Outcome = (bool, String);

/// `Σ|est − truth| / Σ|truth|`.
fn rel_l1(est: &[f64], truth: &[f64]) -> f64 {
    let err: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    err / truth.iter().map(|v| v.abs()).sum::<f64>()
}

fn l1_err(est: &[f64], truth: &[f64]) -> f64 {
    est.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum()
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn suite(panel: &BinnedPanel, max_lag: usize) -> CovarianceSuite {
    estimate_suite(
        panel,
        &EstimatorConfig {
            max_lag,
            ..Default::default()
        },
    )
    .expect("moments")
}

fn opts(q: usize, q_aux: usize) -> CalibrationOptions {
    CalibrationOptions {
        q,
        q_aux,
        ..Default::default()
    }
}

fn k_tilde(m: &ModelSpec, j: usize, i: usize) -> Vec<f64> {
    m.quad[j][i]
        .rank_one
        .as_ref()
        .map_or_else(|| vec![0.0; m.q], |k| k.values.clone())
}

fn c1_builders() -> Outcome {
    let m = |rows: &[&[f64]]| DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    // Distinct values so that any misplaced entry shows up.
    let d1 = |k: isize| 10.0 + k as f64 * 1.25;
    let d2 = |a: isize, b: isize| 1.0 + 3.0 * a as f64 + 7.0 * b as f64 + 0.125;
    let mut ok = Vec::new();

    let a1 = build_a1(&[d1(-1), d1(-2)], &[d1(1), d1(2)], d1(0), 3).unwrap();
    ok.push(
        a1 == m(&[
            &[d1(0), d1(-1), d1(-2)],
            &[d1(1), d1(0), d1(-1)],
            &[d1(2), d1(1), d1(0)],
        ]),
    );
    let e = |k: isize| d1(k.abs());
    let a1s = build_a1(&[e(1), e(2)], &[e(1), e(2)], e(0), 3).unwrap();
    ok.push(
        a1s == m(&[
            &[e(0), e(1), e(2)],
            &[e(1), e(0), e(1)],
            &[e(2), e(1), e(0)],
        ]),
    );
    ok.push(build_a1(&[0.0; 2], &[0.0; 2], 0.0, 3).unwrap() == DMatrix::zeros(3, 3));

    let causal = |a: isize, b: isize| if a >= 0 && b >= 0 { d2(a, b) } else { 0.0 };
    let a2c = build_a2(&causal, 3);
    ok.push(
        a2c == m(&[
            &[d2(0, 1), d2(0, 2), d2(1, 2)],
            &[0.0, 0.0, d2(0, 1)],
            &[0.0, 0.0, 0.0],
        ]) * 2.0,
    );
    let a2g = build_a2(&d2, 3);
    ok.push(
        a2g == m(&[
            &[d2(0, 1), d2(0, 2), d2(1, 2)],
            &[d2(-1, 0), d2(-1, 1), d2(0, 1)],
            &[d2(-2, -1), d2(-2, 0), d2(-1, 0)],
        ]) * 2.0,
    );
    ok.push(build_a2(&|_, _| 0.0, 3) == DMatrix::zeros(3, 3));

    ok.push(build_a3(&d2, 3) == a2g.transpose() / 2.0);
    ok.push(
        build_a3(&causal, 3)
            == m(&[
                &[d2(0, 1), 0.0, 0.0],
                &[d2(0, 2), 0.0, 0.0],
                &[d2(1, 2), d2(0, 1), 0.0],
            ]),
    );
    ok.push(build_a3(&|_, _| 0.0, 3) == DMatrix::zeros(3, 3));

    let dp = |a: usize, b: usize| d2(a as isize, b as isize);
    ok.push(
        build_a4(&dp, 3)
            == m(&[
                &[dp(1, 1), dp(2, 1), 0.0],
                &[dp(1, 2), dp(2, 2), 0.0],
                &[0.0, 0.0, dp(1, 1)],
            ]) * 2.0,
    );
    ok.push(build_a4(&dp, 2) == m(&[&[2.0 * dp(1, 1)]]));
    ok.push(build_a4(&|_, _| 0.0, 3) == DMatrix::zeros(3, 3));

    let d = [d1(1), d1(2)];
    ok.push(
        build_a5(&d, 3).unwrap() == m(&[&[d[0], d[1], 0.0], &[0.0, 0.0, d[0]], &[0.0, 0.0, 0.0]]),
    );
    ok.push(build_a5(&d[..1], 2).unwrap() == m(&[&[d[0]], &[0.0]]));
    ok.push(build_a5(&[0.0; 2], 3).unwrap() == DMatrix::zeros(3, 3));

    let passed = ok.iter().filter(|b| **b).count();
    (
        passed == ok.len(),
        format!("{passed}/{} worked matrices match entrywise", ok.len()),
    )
}

fn c2_forward_inverse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let returns = common::regressor_returns(20_000, 7);
    let mom = common::SampleMoments::new(returns);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let q = rng.random_range(2..=10);
        let q_aux = rng.random_range(1..=q);
        let mut model = common::random_quadratic_model(&mut rng, q, q_aux);
        let s = common::forward_suite(&mut model, &mom, q.max(q_aux));
        let solver = if case % 2 == 0 {
            Solver::GaussSeidel
        } else {
            Solver::Joint
        };
        let o = CalibrationOptions {
            q,
            q_aux,
            solver,
            sweeps: 5000,
            tol: 1e-15,
            rank_one: false,
            exec: Exec::Sequential,
            ..Default::default()
        };
        let est = calibrate(&s, &o, &Step::ALL[..3])
            .expect("calibration")
            .model;
        worst = worst.max(common::max_kernel_error(&model, &est));
    }
    (
        worst < 1e-6,
        format!("20 models, q <= 10, max abs kernel error {worst:.2e} (< 1e-6)"),
    )
}

fn c3_linear_garch() -> Outcome {
    let mut spec = PointProcessSpec::baseline(vec![0.1]);
    spec.phi[0][0] = E::linear(0.7, 0.1);
    let q = 50;
    let truth = ModelSpec::from_exponential(&spec, q, 10).unwrap();
    let sim = simulate_mqarch(&truth, 1_000_000, 3, Noise::Gaussian).unwrap();
    let panel = BinnedPanel::from_simulated(&sim, 10_000).unwrap();
    let cal = calibrate(&suite(&panel, q), &opts(q, 10), &[Step::SelfFeedback])
        .unwrap()
        .model;
    let (est, tru) = (&cal.quad[0][0].diag.values, &truth.quad[0][0].diag.values);
    let err = rel_l1(est, tru);
    let fit = fit_smooth(est, FitFamily::Exp).unwrap();
    let (beta, n_h) = (fit.params[1], fit.params[0] / fit.params[1]);
    let (en, eb) = ((n_h - 0.7).abs() / 0.7, (beta - 0.1).abs() / 0.1);
    (
        err < 0.10 && en < 0.10 && eb < 0.10,
        format!(
            "phi l1 error {:.1}% (< 10%), n_H {n_h:.4} ({:.1}%), beta {beta:.4} ({:.1}%)",
            100.0 * err,
            100.0 * en,
            100.0 * eb
        ),
    )
}

fn c4_qgarch_1d() -> Outcome {
    let spec = PointProcessSpec::zhawkes_1d(0.1, 0.7, 0.06, 0.2, 0.05);
    let q = 50;
    let truth = ModelSpec::from_exponential(&spec, q, 10).unwrap();
    let sim = simulate_mqarch(&truth, 1_000_000, 4, Noise::Gaussian).unwrap();
    let panel = BinnedPanel::from_simulated(&sim, 10_000).unwrap();
    let cal = calibrate(&suite(&panel, q), &opts(q, 10), &[Step::SelfFeedback])
        .unwrap()
        .model;
    let ed = rel_l1(&cal.quad[0][0].diag.values, &truth.quad[0][0].diag.values);
    let ek = rel_l1(&k_tilde(&cal, 0, 0), &k_tilde(&truth, 0, 0));
    (
        ed < 0.15 && ek < 0.15,
        format!(
            "diag K l1 error {:.1}%, k~ l1 error {:.1}% (< 15%)",
            100.0 * ed,
            100.0 * ek
        ),
    )
}

fn qgarch_2d_truth(q: usize) -> ModelSpec {
    let z = E::zero(KernelKind::Leverage);
    let spec = PointProcessSpec {
        lambda_inf: vec![1.2, 0.8],
        phi: vec![
            vec![E::linear(0.6, 0.06), E::linear(0.1, 0.1)],
            vec![E::linear(0.2, 0.08), E::linear(0.4, 0.04)],
        ],
        k: vec![
            vec![E::zumbach(0.2, 0.07), E::zumbach(0.15, 0.1)],
            vec![E::zumbach(0.1, 0.09), E::zumbach(0.21, 0.06)],
        ],
        leverage: vec![vec![z; 2]; 2],
    };
    ModelSpec::from_exponential(&spec, q, 10).unwrap()
}

fn c5_qgarch_2d(truth: &ModelSpec, sim: &SimulatedPanel) -> Outcome {
    let q = truth.q;
    let panel = BinnedPanel::from_simulated(sim, 10_000).unwrap();
    let cal = calibrate(&suite(&panel, q), &opts(q, 10), &Step::ALL[..2])
        .unwrap()
        .model;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for j in 0..2 {
        let self_phi = l1(&truth.quad[j][j].diag.values);
        let self_k = l1(&k_tilde(truth, j, j));
        for i in 0..2 {
            let ep = l1_err(&cal.quad[j][i].diag.values, &truth.quad[j][i].diag.values) / self_phi;
            let ek = l1_err(&k_tilde(&cal, j, i), &k_tilde(truth, j, i)) / self_k;
            worst = worst.max(ep).max(ek);
            parts.push(format!("{j}{i}: {:.0}%/{:.0}%", 100.0 * ep, 100.0 * ek));
        }
    }
    (
        worst < 0.20,
        format!(
            "phi/k~ l1 errors vs self norms [{}], worst {:.1}% (< 20%)",
            parts.join(", "),
            100.0 * worst
        ),
    )
}

fn c6_mean_rate() -> Outcome {
    let mut spec = PointProcessSpec::baseline(vec![0.01]);
    spec.phi[0][0] = E::linear(0.7, 0.1);
    let horizon = 1e7;
    let out = simulate_qhawkes_thinning(&spec, horizon, 6).unwrap();
    let rate = out.streams[0].len() as f64 / horizon;
    let target = 0.01 / (1.0 - 0.7);
    let e = (rate - target).abs() / target;
    (
        e < 0.05,
        format!(
            "empirical rate {rate:.5} vs {target:.5} ({:.2}%, < 5%)",
            100.0 * e
        ),
    )
}

fn c7_mean_vol(truth: &ModelSpec, sim: &SimulatedPanel) -> Outcome {
    let want = truth.mean_squared_vol().unwrap();
    let got: Vec<f64> = sim
        .sigma2
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let e = (0..2)
        .map(|i| (got[i] - want[i]).abs() / want[i])
        .fold(0.0, f64::max);
    // (3.64, 2.55) is the inversion with the nominal n_H alone. The k²
    // diagonal is part of the simulated model, so the relation is checked
    // against the full diagonal; the φ-grid-only value is printed alongside.
    let mut n_h_only = truth.clone();
    for j in 0..2 {
        for i in 0..2 {
            let k = k_tilde(truth, j, i);
            for (v, kk) in n_h_only.quad[j][i].diag.values.iter_mut().zip(&k) {
                *v -= kk * kk;
            }
        }
    }
    let reduced = n_h_only.mean_squared_vol().unwrap();
    (
        e < 0.10,
        format!(
            "sample mean sigma2 ({:.3}, {:.3}) vs mean_squared_vol ({:.3}, {:.3}), max error {:.1}% (< 10%); phi-grid-only relation gives ({:.2}, {:.2})",
            got[0],
            got[1],
            want[0],
            want[1],
            100.0 * e,
            reduced[0],
            reduced[1]
        ),
    )
}

fn c8_martingalise() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 100_000;
    let mut worst: f64 = 0.0;
    for (n_assets, a) in [(1usize, 0.3), (1, -0.2), (2, 0.25)] {
        let mut returns = vec![vec![0.0; n]; n_assets];
        for t in 0..n {
            let common: f64 = StandardNormal.sample(&mut rng);
            for (k, r) in returns.iter_mut().enumerate() {
                let own: f64 = StandardNormal.sample(&mut rng);
                let prev = if t > 0 { r[t - 1] } else { 0.0 };
                let vol = if t % 50 < 10 { 2.0 } else { 1.0 };
                r[t] = a * prev + vol * (0.6 * common + 0.8 * own) * (1.0 + 0.1 * k as f64);
            }
        }
        let panel = BinnedPanel {
            assets: (0..n_assets).map(|k| k.to_string()).collect(),
            dates: (0..n / 500).map(|d| d.to_string()).collect(),
            bins_per_day: 500,
            sigma2: returns
                .iter()
                .map(|r| r.iter().map(|v| v * v).collect())
                .collect(),
            returns,
            stage: Stage::Raw,
        };
        let before = lag1_autocorrelation(&panel, 0).abs();
        let out = martingalise(&panel).unwrap();
        for k in 0..n_assets {
            worst = worst.max(lag1_autocorrelation(&out, k).abs());
        }
        assert!(before > 0.1);
    }
    (
        worst < 0.01,
        format!("max |lag-1 autocorrelation| after martingalisation {worst:.2e} (< 0.01)"),
    )
}

fn leverage_panel(n_bins: usize, seed: u64) -> (ModelSpec, SimulatedPanel) {
    let z = E::zero(KernelKind::Leverage);
    let spec = PointProcessSpec {
        lambda_inf: vec![1.0, 0.8],
        phi: vec![
            vec![E::linear(0.4, 0.3), E::linear(0.1, 0.4)],
            vec![E::linear(0.1, 0.3), E::linear(0.35, 0.25)],
        ],
        k: vec![vec![E::zumbach(0.05, 0.3), E::zero(KernelKind::Zumbach)]; 2],
        leverage: vec![vec![E::leverage(-0.1, 0.25), z], vec![z, z]],
    };
    let truth = ModelSpec::from_exponential(&spec, 20, 20).unwrap();
    let sim = simulate_mqarch(&truth, n_bins, seed, Noise::CorrelatedGaussian(0.3)).unwrap();
    (truth, sim)
}

fn c9_mirror() -> Outcome {
    let mut worst_c: f64 = 0.0;
    let mut nonzero_v = 0usize;
    for (n_assets, seed) in [(2usize, 91u64), (2, 92), (1, 93)] {
        let (_, sim) = leverage_panel(50_000, seed);
        let mut panel = BinnedPanel::from_simulated(&sim, 1000).unwrap();
        if n_assets == 1 {
            panel = panel.select_assets(&[0]);
        }
        let max_lag = 10;
        let base = suite(&panel, max_lag);
        let mir = suite(&mirror_augment(&panel), max_lag);
        for j in 0..n_assets {
            for l in 0..n_assets {
                for tau in 1..=max_lag {
                    let (a, b) = (base.c(j, l, tau), mir.c(j, l, tau));
                    worst_c = worst_c.max((a - b).abs() / a.abs().max(1e-300));
                    if mir.v(j, l, tau) != 0.0 {
                        nonzero_v += 1;
                    }
                }
            }
        }
    }
    (
        nonzero_v == 0 && worst_c < 1e-12,
        format!("{nonzero_v} non-zero V entries after mirroring (want 0), max relative C change {worst_c:.1e} (< 1e-12)"),
    )
}

fn random_count_panel(rng: &mut ChaCha8Rng, n_assets: usize) -> BinnedPanel {
    let (days, b) = (rng.random_range(2..6), rng.random_range(20..80));
    let n = days * b;
    let mut sigma2 = vec![vec![0.0; n]; n_assets];
    let mut returns = vec![vec![0.0; n]; n_assets];
    for a in 0..n_assets {
        for t in 0..n {
            let c = rng.random_range(0..5u32);
            sigma2[a][t] = c as f64;
            returns[a][t] = (0..c)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .sum();
        }
    }
    BinnedPanel {
        assets: (0..n_assets).map(|a| a.to_string()).collect(),
        dates: (0..days).map(|d| d.to_string()).collect(),
        bins_per_day: b,
        returns,
        sigma2,
        stage: Stage::Raw,
    }
}

fn random_spec(rng: &mut ChaCha8Rng, n: usize) -> PointProcessSpec {
    let mut s = PointProcessSpec::baseline((0..n).map(|_| rng.random_range(0.2..1.5)).collect());
    for i in 0..n {
        for j in 0..n {
            s.phi[i][j] = E::linear(rng.random_range(0.05..0.4), rng.random_range(0.05..1.0));
            s.k[i][j] = E::zumbach(rng.random_range(0.02..0.2), rng.random_range(0.05..1.0));
        }
    }
    s
}

fn c10_mle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_grad: f64 = 0.0;
    let mut decreased = 0;
    for inst in 0..10 {
        let n = 1 + inst % 2;
        let panel = random_count_panel(&mut rng, n);
        let spec = random_spec(&mut rng, n);
        let dt = rng.random_range(0.5..2.0);
        let p = MleProblem::new(
            MleMode::BinnedProxy,
            MleData::Proxy { panel, dt },
            &spec,
            Exec::Sequential,
        )
        .unwrap();
        let theta = p.theta_of(&spec);
        let g = grad_binned_proxy(&p, &theta).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..theta.len())
            .map(|k| {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] *= f64::exp(h);
                dn[k] *= f64::exp(-h);
                (p.loglik(&up).unwrap() - p.loglik(&dn).unwrap()) / (2.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = g
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_grad = worst_grad.max(diff / scale);
        let fit = maximize(
            &p,
            &spec,
            &MaximizeOptions {
                max_iter: 50,
                ..Default::default()
            },
        )
        .unwrap();
        if fit.ln_l < fit.init_ln_l {
            decreased += 1;
        }
    }

    let truth = PointProcessSpec::zhawkes_1d(0.003, 0.6, 0.04, 0.2, 0.03);
    let horizon = 1e5 / 0.015;
    let events = simulate_qhawkes_thinning(&truth, horizon, 12)
        .unwrap()
        .streams;
    let n_events = events[0].len();
    // Unit bins give a mean of 0.015 events per bin.
    let dt = 1.0;
    let binned = BinnedPanel::from_simulated(&bin_events(&events[0], dt).unwrap(), 10_000).unwrap();
    let gmm = calibrate(&suite(&binned, 50), &opts(50, 10), &[Step::SelfFeedback])
        .unwrap()
        .model;
    let init = warm_start(&gmm, dt).unwrap();
    let prob = MleProblem::new(
        MleMode::ExactZHawkes,
        MleData::Events(events),
        &init,
        Exec::Sequential,
    )
    .unwrap();
    let fit = maximize(&prob, &init, &MaximizeOptions::default()).unwrap();
    let se = fisher_standard_errors(&prob, &fit.theta).unwrap();
    let want = prob.theta_of(&truth);
    let z: Vec<f64> = fit
        .theta
        .iter()
        .zip(&want)
        .zip(&se)
        .map(|((e, t), s)| (e - t) / s)
        .collect();
    let within = z.iter().all(|v| v.abs() < 3.0);
    let start: Vec<String> = prob
        .params
        .iter()
        .zip(prob.theta_of(&init))
        .map(|(p, v)| format!("{} {v:.4}", p.name()))
        .collect();
    let zs: Vec<String> = (0..z.len())
        .map(|k| {
            format!(
                "{} {:.3e} +- {:.1e} vs {:.3e}: {:+.2}",
                prob.params[k].name(),
                fit.theta[k],
                se[k],
                want[k],
                z[k]
            )
        })
        .collect();
    (
        worst_grad < 1e-5 && decreased == 0 && within && fit.ln_l >= fit.init_ln_l,
        format!(
            "max relative gradient error {worst_grad:.1e} (< 1e-5); lnL decreased in {decreased}/10 fits; \
             {n_events} events, warm start [{}], {} iterations, converged {} (gradient {:.1e}), z-scores [{}] (|z| < 3)",
            start.join(", "),
            fit.iterations,
            fit.converged,
            fit.grad_inf_norm,
            zs.join(", ")
        ),
    )
}

fn c11_leverage() -> Outcome {
    let (truth, sim) = leverage_panel(1_000_000, 11);
    let bpd = 10_000;
    let panel = BinnedPanel::from_simulated(&sim, bpd).unwrap();
    let (q, q_aux) = (20, 20);
    let cal = calibrate(&suite(&panel, q), &opts(q, q_aux), &Step::ALL)
        .unwrap()
        .model;
    let (est, tru) = (&cal.leverage[0][0].values, &truth.leverage[0][0].values);
    let err = rel_l1(est, tru);
    let sign_ok = est.iter().take(5).all(|v| *v < 0.0);
    let fit = fit_smooth(&est.iter().map(|v| -v).collect::<Vec<_>>(), FitFamily::Exp).unwrap();
    let rate_err = (fit.params[1] - 0.25).abs() / 0.25;

    // Noise band from batch means: 20 disjoint blocks calibrated separately.
    let batches = 20;
    let per = panel.n_days() / batches;
    let mut batch_est: Vec<[Vec<f64>; 3]> = Vec::new();
    for b in 0..batches {
        let idx: Vec<usize> = (b * per * bpd..(b + 1) * per * bpd).collect();
        let part = BinnedPanel {
            dates: panel.dates[b * per..(b + 1) * per].to_vec(),
            returns: panel
                .returns
                .iter()
                .map(|r| idx.iter().map(|&k| r[k]).collect())
                .collect(),
            sigma2: panel
                .sigma2
                .iter()
                .map(|s| idx.iter().map(|&k| s[k]).collect())
                .collect(),
            ..panel.clone()
        };
        let m = calibrate(&suite(&part, q), &opts(q, q_aux), &Step::ALL)
            .unwrap()
            .model;
        batch_est.push([
            m.leverage[0][1].values.clone(),
            m.leverage[1][0].values.clone(),
            m.leverage[1][1].values.clone(),
        ]);
    }
    let zero_kernels = [
        &cal.leverage[0][1].values,
        &cal.leverage[1][0].values,
        &cal.leverage[1][1].values,
    ];
    let mut worst_z: f64 = 0.0;
    for (k, est0) in zero_kernels.iter().enumerate() {
        for tau in 0..q_aux {
            let xs: Vec<f64> = batch_est.iter().map(|b| b[k][tau]).collect();
            let mean = xs.iter().sum::<f64>() / batches as f64;
            let sd =
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (batches - 1) as f64).sqrt();
            let se = sd / (batches as f64).sqrt();
            worst_z = worst_z.max(est0[tau].abs() / se);
        }
    }
    (
        err < 0.20 && sign_ok && rate_err < 0.20 && worst_z < 4.0,
        format!(
            "self-leverage l1 error {:.1}% (< 20%), negative sign {sign_ok}, fitted rate {:.3} vs 0.25; \
             zero kernels within {worst_z:.2} standard errors (< 4)",
            100.0 * err,
            fit.params[1]
        ),
    )
}

type Profile = fn(&ModelSpec) -> Vec<f64>;

fn c12_factor() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (q, q_aux) = (10, 5);
    let factor = ModelSpec::from_exponential(
        &PointProcessSpec::zhawkes_1d(0.5, 0.4, 0.3, 0.1, 0.3),
        q,
        q_aux,
    )
    .unwrap();
    let mut residuals = Vec::new();
    let mut betas = Vec::new();
    for _ in 0..10 {
        let mut s = PointProcessSpec::baseline(vec![rng.random_range(0.3..0.6), 0.5]);
        s.phi[0][0] = E::linear(rng.random_range(0.25..0.4), rng.random_range(0.2..0.5));
        s.k[0][0] = E::zumbach(rng.random_range(0.05..0.1), rng.random_range(0.2..0.4));
        s.phi[0][1] = E::linear(rng.random_range(0.1..0.2), rng.random_range(0.2..0.5));
        s.k[0][1] = E::zumbach(rng.random_range(0.04..0.08), rng.random_range(0.2..0.4));
        residuals.push(ModelSpec::from_exponential(&s, q, q_aux).unwrap());
        betas.push(rng.random_range(0.5..1.5));
    }
    let (stocks, f0) =
        simulate_factor_universe(&factor, &residuals, &betas, 300_000, 1000, 12).unwrap();
    let fo = FactorOptions {
        calibration: CalibrationOptions {
            q,
            q_aux,
            ..Default::default()
        },
        ..Default::default()
    };
    let fm = calibrate_factor_model(&stocks, &f0, &fo).unwrap();

    let mean = |grids: Vec<Vec<f64>>| -> Vec<f64> {
        let n = grids.len() as f64;
        (0..grids[0].len())
            .map(|t| grids.iter().map(|g| g[t]).sum::<f64>() / n)
            .collect()
    };
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    let profiles: [(&str, Profile); 4] = [
        ("phi_self", |m| m.quad[0][0].diag.values.clone()),
        ("phi_factor", |m| m.quad[0][1].diag.values.clone()),
        ("k_self", |m| k_tilde(m, 0, 0)),
        ("k_factor", |m| k_tilde(m, 0, 1)),
    ];
    for (name, get) in profiles {
        let e = rel_l1(
            &mean(fm.stock_models.iter().map(get).collect()),
            &mean(residuals.iter().map(get).collect()),
        );
        worst = worst.max(e);
        parts.push(format!("{name} {:.1}%", 100.0 * e));
    }
    let f = &fm.decomposition.factor.returns[0];
    let mf = f.iter().sum::<f64>() / f.len() as f64;
    let mut worst_cov: f64 = 0.0;
    for e in &fm.decomposition.residuals.returns {
        let me = e.iter().sum::<f64>() / e.len() as f64;
        let cov = e
            .iter()
            .zip(f)
            .map(|(a, b)| (a - me) * (b - mf))
            .sum::<f64>()
            / f.len() as f64;
        worst_cov = worst_cov.max(cov.abs());
    }
    (
        worst < 0.20 && worst_cov < 1e-10,
        format!(
            "mean-profile l1 errors [{}] (< 20%), max |cov(e_i, f0)| {worst_cov:.1e} (< 1e-10)",
            parts.join(", ")
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let mut shared: Option<(ModelSpec, SimulatedPanel)> = None;
    let mut qgarch_2d = || -> (ModelSpec, SimulatedPanel) {
        shared
            .get_or_insert_with(|| {
                let truth = qgarch_2d_truth(50);
                let sim = simulate_mqarch(&truth, 1_000_000, 5, Noise::Gaussian).unwrap();
                (truth, sim)
            })
            .clone()
    };
    let names = [
        "Yule-Walker builder exactness",
        "forward/inverse master property",
        "1D linear GARCH recovery",
        "1D QGARCH recovery",
        "2D QGARCH recovery",
        "mean-rate law",
        "mean-volatility relation",
        "martingalisation",
        "mirror identities",
        "MLE gradient, monotonicity and refinement",
        "leverage recovery",
        "factor pipeline",
    ];
    let mut failed = Vec::new();
    for (k, name) in names.iter().enumerate().map(|(k, n)| (k + 1, n)) {
        if !want(k) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match k {
            1 => c1_builders(),
            2 => c2_forward_inverse(),
            3 => c3_linear_garch(),
            4 => c4_qgarch_1d(),
            5 => {
                let (t, s) = qgarch_2d();
                c5_qgarch_2d(&t, &s)
            }
            6 => c6_mean_rate(),
            7 => {
                let (t, s) = qgarch_2d();
                c7_mean_vol(&t, &s)
            }
            8 => c8_martingalise(),
            9 => c9_mirror(),
            10 => c10_mle(),
            11 => c11_leverage(),
            _ => c12_factor(),
        };
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!(
            "criterion {k:2} {verdict}: {name}: {detail} [{:.1}s]",
            start.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
