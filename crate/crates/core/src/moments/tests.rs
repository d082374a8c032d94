use super::*;
use crate::preprocess::{mirror_augment, Stage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_panel(n_assets: usize, days: usize, b: usize, seed: u64) -> BinnedPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = BinnedPanel {
        assets: (0..n_assets).map(|a| a.to_string()).collect(),
        dates: (0..days).map(|d| d.to_string()).collect(),
        bins_per_day: b,
        returns: vec![Vec::new(); n_assets],
        sigma2: vec![Vec::new(); n_assets],
        stage: Stage::Raw,
    };
    for a in 0..n_assets {
        for _ in 0..days * b {
            let z: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            p.returns[a].push(z);
            p.sigma2[a].push(0.5 + e * e);
        }
    }
    p
}

fn cfg(q: usize) -> EstimatorConfig {
    EstimatorConfig {
        max_lag: q,
        ..Default::default()
    }
}

/// Direct double-loop oracle for one raw three-point entry.
fn naive_t3(
    p: &BinnedPanel,
    w: &dyn Fn(usize, usize) -> f64,
    c: usize,
    d: usize,
    u1: usize,
    u2: usize,
) -> f64 {
    let b = p.bins_per_day;
    let (mut s, mut n) = (0.0, 0usize);
    for day in 0..p.n_days() {
        for t in u1.max(u2)..b {
            let i = day * b + t;
            s += w(day, t) * p.returns[c][i - u1] * p.returns[d][i - u2];
            n += 1;
        }
    }
    s / n as f64
}

#[test]
fn unordered_index_layout() {
    assert_eq!(unordered_index(0, 0, 1), 0);
    assert_eq!(unordered_index(0, 0, 2), 0);
    assert_eq!(unordered_index(0, 1, 2), 1);
    assert_eq!(unordered_index(1, 0, 2), 1);
    assert_eq!(unordered_index(1, 1, 2), 2);
}

#[test]
fn dot_matches_naive() {
    let a: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
    let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).cos()).collect();
    let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    assert!((dot(&a, &b) - naive).abs() < 1e-12);
}

#[test]
fn raw_tables_match_naive_loops() {
    let p = random_panel(2, 5, 40, 1);
    let s = estimate_suite(&p, &cfg(6)).unwrap();
    let b = p.bins_per_day;
    for &(c, d, u1, u2) in &[(0, 0, 0, 3), (0, 1, 2, 5), (1, 0, 4, 1), (1, 1, 6, 6)] {
        let sig = |day: usize, t: usize| p.sigma2[1][day * b + t];
        let prod = |day: usize, t: usize| p.returns[0][day * b + t] * p.returns[1][day * b + t];
        let got = s.t3_get(s.weight_sigma(1), c, d, u1, u2);
        assert!((got - naive_t3(&p, &sig, c, d, u1, u2)).abs() < 1e-12);
        let got = s.dp(0, 1, c, d, u1, u2);
        assert!((got - naive_t3(&p, &prod, c, d, u1, u2)).abs() < 1e-12);
    }
    // Two-point structures.
    let (mut num, mut n) = (0.0, 0);
    for day in 0..5 {
        for t in 3..b {
            num += p.sigma2[0][day * b + t] * p.returns[1][day * b + t - 3];
            n += 1;
        }
    }
    assert!((s.v(0, 1, 3) - num / n as f64).abs() < 1e-12);
}

#[test]
fn iid_panel_has_no_covariance() {
    let p = random_panel(1, 200, 500, 2);
    let s = estimate_suite(&p, &cfg(10)).unwrap();
    let n = p.n_bins() as f64;
    for tau in 1..=10 {
        // Var(σ² r²) ≈ E[σ⁴] E[r⁴] = 3.75 · 3 for the construction above.
        assert!(
            s.c(0, 0, tau).abs() < 4.0 * (11.25f64).sqrt() / n.sqrt(),
            "tau {tau}: {}",
            s.c(0, 0, tau)
        );
    }
    for (t1, t2) in [(1, 2), (3, 7), (5, 6)] {
        assert!(s.d(0, 0, t1, t2).abs() < 4.0 * (11.25f64).sqrt() / n.sqrt());
    }
}

#[test]
fn d_diagonal_equals_c() {
    let p = random_panel(2, 10, 60, 3);
    let s = estimate_suite(&p, &cfg(8)).unwrap();
    for j in 0..2 {
        for l in 0..2 {
            for tau in 0..=8 {
                assert_eq!(s.d(j, l, tau, tau), s.c(j, l, tau));
            }
        }
    }
}

#[test]
fn mirror_zeroes_leverage_and_keeps_even_structures() {
    let p = random_panel(2, 12, 50, 4);
    let m = mirror_augment(&p);
    let a = estimate_suite(&p, &cfg(7)).unwrap();
    let b = estimate_suite(&m, &cfg(7)).unwrap();
    for j in 0..2 {
        for l in 0..2 {
            for tau in 0..=7 {
                assert_eq!(b.v(j, l, tau), 0.0);
                assert_eq!(b.vr(j, j, l, tau), 0.0);
                assert!((b.c(j, l, tau) - a.c(j, l, tau)).abs() <= 1e-12);
            }
        }
    }
    // Without detection the mirrored panel is estimated directly.
    let direct = estimate_suite(
        &m,
        &EstimatorConfig {
            max_lag: 7,
            detect_mirror: false,
            ..Default::default()
        },
    )
    .unwrap();
    for tau in 1..=7 {
        assert!((direct.c(0, 1, tau) - a.c(0, 1, tau)).abs() < 1e-12);
        assert!(direct.v(0, 1, tau).abs() < 1e-12);
        assert!((direct.dx(0, tau, 2) - a.dx(0, tau, 2)).abs() < 1e-12);
    }
}

#[test]
fn concatenation_averages_estimates() {
    let p1 = random_panel(1, 6, 30, 5);
    let p2 = random_panel(1, 6, 30, 6);
    let mut cat = p1.clone();
    cat.dates.extend(p2.dates.iter().map(|d| format!("{d}b")));
    cat.returns[0].extend_from_slice(&p2.returns[0]);
    cat.sigma2[0].extend_from_slice(&p2.sigma2[0]);
    let c = EstimatorConfig {
        detect_mirror: false,
        ..cfg(5)
    };
    let (a, b, ab) = (
        estimate_suite(&p1, &c).unwrap(),
        estimate_suite(&p2, &c).unwrap(),
        estimate_suite(&cat, &c).unwrap(),
    );
    for tau in 0..=5 {
        assert!(
            (ab.c(0, 0, tau) + ab.mean_sigma2[0] * ab.return_moment(0, 0)
                - 0.5
                    * (a.c(0, 0, tau)
                        + a.mean_sigma2[0] * a.return_moment(0, 0)
                        + b.c(0, 0, tau)
                        + b.mean_sigma2[0] * b.return_moment(0, 0)))
            .abs()
                < 1e-12
        );
        assert!((ab.v(0, 0, tau) - 0.5 * (a.v(0, 0, tau) + b.v(0, 0, tau))).abs() < 1e-12);
    }
}

#[test]
fn sequential_and_parallel_are_bit_identical() {
    let p = random_panel(2, 70, 40, 7);
    let s = estimate_suite(
        &p,
        &EstimatorConfig {
            exec: Exec::Sequential,
            ..cfg(6)
        },
    )
    .unwrap();
    let t = estimate_suite(
        &p,
        &EstimatorConfig {
            exec: Exec::Parallel,
            ..cfg(6)
        },
    )
    .unwrap();
    assert_eq!(s, t);
}

#[test]
fn insufficient_bins_rejected() {
    let p = random_panel(1, 3, 10, 8);
    assert!(matches!(
        estimate_suite(&p, &cfg(10)),
        Err(Error::InsufficientBins { .. })
    ));
}

#[test]
fn symmetrize_flag_zeroes_odd_structures() {
    let p = random_panel(2, 4, 30, 9);
    let s = estimate_suite(
        &p,
        &EstimatorConfig {
            symmetrize: true,
            ..cfg(4)
        },
    )
    .unwrap();
    assert!(s.t2.iter().flatten().flatten().all(|v| *v == 0.0));
    assert!(s.symmetric);
}

#[test]
fn winsorize_clips_extremes() {
    let mut p = random_panel(1, 2, 500, 10);
    p.returns[0][17] = 1e6;
    let w = winsorize(&p, 0.01).unwrap();
    let max = w.returns[0].iter().cloned().fold(f64::MIN, f64::max);
    assert!(max < 10.0);
    assert!(estimate_suite(
        &p,
        &EstimatorConfig {
            winsorize: Some(0.01),
            ..cfg(3)
        }
    )
    .is_ok());
}

#[test]
fn suite_csv_round_trip() {
    let p = random_panel(2, 3, 20, 11);
    let s = estimate_suite(&p, &cfg(4)).unwrap();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let back = CovarianceSuite::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn fits_csv_round_trip() {
    let fits = vec![
        FitRecord {
            structure: "C".into(),
            i: 0,
            j: 1,
            fit: SmoothFit {
                family: FitFamily::PowerLawExp,
                params: vec![1.0, 0.5, 1e-8, 3.0],
                sse: 0.25,
            },
        },
        FitRecord {
            structure: "V".into(),
            i: 1,
            j: 1,
            fit: SmoothFit {
                family: FitFamily::Exp,
                params: vec![-0.3, 0.1],
                sse: 1e-3,
            },
        },
    ];
    let mut buf = Vec::new();
    write_fits_csv(&fits, &mut buf).unwrap();
    assert_eq!(read_fits_csv(buf.as_slice()).unwrap(), fits);
}

#[test]
fn three_point_extraction_checks_indices() {
    let p = random_panel(1, 2, 20, 12);
    let s = estimate_suite(&p, &cfg(3)).unwrap();
    assert!(s.three_point(ThreePointKind::Dx, &[0]).is_err());
    assert!(s.three_point(ThreePointKind::D, &[0]).is_err());
    let d = s.three_point(ThreePointKind::D, &[0, 0]).unwrap();
    assert_eq!(d.len(), 4);
    assert_eq!(d[1][2], d[2][1]);
}

#[test]
fn smoothing_replaces_c_by_its_fit() {
    // Build a suite whose C is an exact exponential and check it survives.
    let p = random_panel(1, 4, 40, 13);
    let mut s = estimate_suite(&p, &cfg(12)).unwrap();
    let w = s.weight_sigma(0);
    let base = s.mean_sigma2[0] * s.return_moment(0, 0);
    for t in 1..=12 {
        let v = 0.3 * (-0.2 * t as f64).exp() + base;
        s.t3[w][0].set(t, t, v);
    }
    let (sm, fits) = smooth_suite(
        &s,
        &SmoothingConfig {
            c: true,
            d: false,
            dx_diag: false,
            v: false,
        },
    )
    .unwrap();
    assert_eq!(fits.len(), 1);
    for t in 1..=12 {
        assert!((sm.c(0, 0, t) - 0.3 * (-0.2 * t as f64).exp()).abs() < 1e-8);
    }
}
