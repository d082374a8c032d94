//! Synthetic data: exact-event quadratic Hawkes paths by thinning, and the
//! discrete MQARCH recursion.

use crate::error::{Error, Result};
use crate::model::{sigma2_unchecked, ModelSpec, PointProcessSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use std::io::{Read, Write};

/// Signed events of one asset on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStream {
    pub times: Vec<f64>,
    pub marks: Vec<f64>,
    pub horizon: f64,
}

impl EventStream {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.marks.len() {
            return Err(Error::LengthMismatch {
                what: "event marks",
                expected: self.times.len(),
                got: self.marks.len(),
            });
        }
        let mut prev = f64::NEG_INFINITY;
        for (t, m) in self.times.iter().zip(&self.marks) {
            if !(*t > prev) || *t < 0.0 || *t > self.horizon {
                return Err(Error::InvalidInput(format!(
                    "event time {t} not increasing within [0, {}]",
                    self.horizon
                )));
            }
            if *m != 1.0 && *m != -1.0 {
                return Err(Error::InvalidInput(format!("mark {m} is not ±1")));
            }
            prev = *t;
        }
        Ok(())
    }
}

/// Per-bin returns and squared volatilities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulatedPanel {
    pub n_assets: usize,
    pub n_bins: usize,
    pub returns: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
    /// Number of σ² values raised to the floor.
    pub floored: u64,
}

/// Outcome of a thinning run.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinningOutput {
    pub streams: Vec<EventStream>,
    pub candidates: u64,
    pub clamped: u64,
}

/// Innovation law of the MQARCH recursion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Noise {
    /// Independent standard normals.
    #[default]
    Gaussian,
    /// Standard normals with the given equal-time correlation across assets.
    CorrelatedGaussian(f64),
}

const SIGMA2_FLOOR: f64 = 1e-12;

/// Exponentially decaying kernel states of one (target, source) pair.
#[derive(Debug, Clone, Copy, Default)]
struct PairState {
    h: f64,
    z: f64,
    lev: f64,
}

/// Ogata thinning with exact exponential state updates.
///
/// The bound at time `t` is the baseline plus every non-negative term of the
/// current intensity. Between events `H` and `Z²` decay and a positive
/// leverage term decays, so the bound holds until the next accepted event.
pub fn simulate_qhawkes_thinning(
    spec: &PointProcessSpec,
    horizon: f64,
    seed: u64,
) -> Result<ThinningOutput> {
    spec.validate()?;
    let radius = crate::model::spectral_radius(&spec.norm_matrix());
    if !(radius < 1.0) {
        return Err(Error::NonStationary { radius });
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput("horizon must be > 0".into()));
    }
    let n = spec.n_assets();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = vec![vec![PairState::default(); n]; n];
    let mut streams = vec![
        EventStream {
            horizon,
            ..Default::default()
        };
        n
    ];
    let amp_phi: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| spec.phi[i][j].amplitude()).collect())
        .collect();
    let amp_k2: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| spec.k[i][j].amplitude().powi(2)).collect())
        .collect();
    let amp_lev: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| spec.leverage[i][j].amplitude()).collect())
        .collect();
    let (mut candidates, mut clamped) = (0u64, 0u64);
    let mut t = 0.0;
    let mut lambda = vec![0.0; n];
    loop {
        let mut bound = 0.0;
        for i in 0..n {
            let mut b = spec.lambda_inf[i];
            for j in 0..n {
                let s = state[i][j];
                b += amp_phi[i][j] * s.h
                    + amp_k2[i][j] * s.z * s.z
                    + (amp_lev[i][j] * s.lev).max(0.0);
            }
            bound += b;
        }
        if bound <= 0.0 {
            break;
        }
        let w: f64 = Exp1.sample(&mut rng);
        let t_new = t + w / bound;
        if t_new > horizon {
            break;
        }
        let dt = t_new - t;
        for i in 0..n {
            for j in 0..n {
                let s = &mut state[i][j];
                s.h *= (-spec.phi[i][j].rate * dt).exp();
                s.z *= (-spec.k[i][j].rate * dt).exp();
                s.lev *= (-spec.leverage[i][j].rate * dt).exp();
            }
        }
        t = t_new;
        candidates += 1;
        for i in 0..n {
            let mut l = spec.lambda_inf[i];
            for j in 0..n {
                let s = state[i][j];
                l += amp_phi[i][j] * s.h + amp_k2[i][j] * s.z * s.z + amp_lev[i][j] * s.lev;
            }
            if l < 0.0 {
                clamped += 1;
                l = 0.0;
            }
            lambda[i] = l;
        }
        let u: f64 = rng.random::<f64>() * bound;
        let mut acc = 0.0;
        let mut hit = None;
        for (i, l) in lambda.iter().enumerate() {
            acc += l;
            if u < acc {
                hit = Some(i);
                break;
            }
        }
        if let Some(src) = hit {
            let mark = if rng.random::<bool>() { 1.0 } else { -1.0 };
            streams[src].times.push(t);
            streams[src].marks.push(mark);
            for row in state.iter_mut() {
                let s = &mut row[src];
                s.h += 1.0;
                s.z += mark;
                s.lev += mark;
            }
        }
    }
    if clamped > 0 {
        log::warn!("negative intensity clamped on {clamped} of {candidates} candidates");
        if clamped * 100 > candidates {
            return Err(Error::TooManyClamps {
                clamped,
                candidates,
            });
        }
    }
    Ok(ThinningOutput {
        streams,
        candidates,
        clamped,
    })
}

/// Aggregates one stream into bins: return = Σ marks, σ² proxy = count.
pub fn bin_events(stream: &EventStream, bin_size: f64) -> Result<SimulatedPanel> {
    bin_event_streams(std::slice::from_ref(stream), bin_size)
}

/// Aggregates several streams sharing a horizon into one panel.
pub fn bin_event_streams(streams: &[EventStream], bin_size: f64) -> Result<SimulatedPanel> {
    if !(bin_size > 0.0) {
        return Err(Error::InvalidInput("bin_size must be > 0".into()));
    }
    let horizon = streams.iter().map(|s| s.horizon).fold(0.0, f64::max);
    let n_bins = (horizon / bin_size).ceil() as usize;
    let mut returns = vec![vec![0.0; n_bins]; streams.len()];
    let mut sigma2 = vec![vec![0.0; n_bins]; streams.len()];
    for (a, s) in streams.iter().enumerate() {
        for (t, m) in s.times.iter().zip(&s.marks) {
            let b = ((t / bin_size).floor() as usize).min(n_bins.saturating_sub(1));
            returns[a][b] += m;
            sigma2[a][b] += 1.0;
        }
    }
    Ok(SimulatedPanel {
        n_assets: streams.len(),
        n_bins,
        returns,
        sigma2,
        floored: 0,
    })
}

/// Runs the MQARCH recursion `r_{i,t} = σ_{i,t} ξ_{i,t}` for `n_bins` bins
/// after a burn-in of `max(10q, 1000)` bins started from zero history.
pub fn simulate_mqarch(
    model: &ModelSpec,
    n_bins: usize,
    seed: u64,
    noise: Noise,
) -> Result<SimulatedPanel> {
    model.validate()?;
    let radius = model.spectral_radius();
    if radius > 1.0 + 1e-9 {
        return Err(Error::NonStationary { radius });
    }
    if radius >= 0.99 {
        log::warn!("feedback spectral radius {radius:.4} is at or near the stationarity limit");
    }
    let q = model.max_lag();
    if n_bins <= q {
        return Err(Error::InvalidInput(format!(
            "n_bins {n_bins} must exceed q {q}"
        )));
    }
    let rho = match noise {
        Noise::Gaussian => 0.0,
        Noise::CorrelatedGaussian(r) => {
            if !(r.abs() < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "noise correlation {r} outside (-1, 1)"
                )));
            }
            r
        }
    };
    let n = model.n_assets;
    let burn = (10 * q).max(1000);
    let total = q + burn + n_bins;
    let mut r = vec![vec![0.0; total]; n];
    let mut s2 = vec![vec![0.0; total]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut floored = 0u64;
    let c = (1.0 - rho * rho).sqrt();
    let mut sig = [0.0f64; 2];
    for t in q..total {
        let hist: Vec<&[f64]> = r.iter().map(|x| &x[..t]).collect();
        for (i, s) in sig.iter_mut().enumerate().take(n) {
            let mut v = sigma2_unchecked(model, &hist, i);
            if !(v >= SIGMA2_FLOOR) {
                if !v.is_finite() {
                    return Err(Error::NonStationary { radius });
                }
                v = SIGMA2_FLOOR;
                if t >= q + burn {
                    floored += 1;
                }
            }
            *s = v;
        }
        let z0: f64 = StandardNormal.sample(&mut rng);
        r[0][t] = sig[0].sqrt() * z0;
        s2[0][t] = sig[0];
        if n == 2 {
            let z1: f64 = StandardNormal.sample(&mut rng);
            r[1][t] = sig[1].sqrt() * (rho * z0 + c * z1);
            s2[1][t] = sig[1];
        }
    }
    if floored > 0 {
        log::warn!("sigma2 floored {floored} times");
    }
    let start = q + burn;
    Ok(SimulatedPanel {
        n_assets: n,
        n_bins,
        returns: r.into_iter().map(|x| x[start..].to_vec()).collect(),
        sigma2: s2.into_iter().map(|x| x[start..].to_vec()).collect(),
        floored,
    })
}

impl SimulatedPanel {
    /// CSV `(bin_index, asset, return, sigma2)`, bin-major.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["bin_index", "asset", "return", "sigma2"])?;
        for b in 0..self.n_bins {
            for a in 0..self.n_assets {
                wr.write_record([
                    b.to_string(),
                    a.to_string(),
                    self.returns[a][b].to_string(),
                    self.sigma2[a][b].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let f = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
            let pu = |s: String| {
                s.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad index '{s}'")))
            };
            let pf = |s: String| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number '{s}'")))
            };
            rows.push((pu(f(0))?, pu(f(1))?, pf(f(2))?, pf(f(3))?));
        }
        let n_assets = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let n_bins = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        if rows.len() != n_assets * n_bins {
            return Err(Error::Parse(format!(
                "panel is not rectangular: {} rows for {n_bins} bins x {n_assets} assets",
                rows.len()
            )));
        }
        let mut p = SimulatedPanel {
            n_assets,
            n_bins,
            returns: vec![vec![0.0; n_bins]; n_assets],
            sigma2: vec![vec![0.0; n_bins]; n_assets],
            floored: 0,
        };
        for (b, a, ret, s2) in rows {
            if !(s2 >= 0.0) {
                return Err(Error::Parse(format!("negative sigma2 at bin {b}")));
            }
            p.returns[a][b] = ret;
            p.sigma2[a][b] = s2;
        }
        Ok(p)
    }
}

/// CSV `(time, mark, asset)` sorted by time.
pub fn write_events_csv<W: Write>(streams: &[EventStream], w: W) -> Result<()> {
    let mut all: Vec<(f64, f64, usize)> = streams
        .iter()
        .enumerate()
        .flat_map(|(a, s)| s.times.iter().zip(&s.marks).map(move |(t, m)| (*t, *m, a)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.2.cmp(&y.2)));
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["time", "mark", "asset"])?;
    for (t, m, a) in all {
        wr.write_record([t.to_string(), (m as i64).to_string(), a.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_events_csv<R: Read>(r: R, horizon: f64, n_assets: usize) -> Result<Vec<EventStream>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut streams = vec![
        EventStream {
            horizon,
            ..Default::default()
        };
        n_assets
    ];
    for rec in rd.records() {
        let rec = rec?;
        let f = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
        let t: f64 = f(0)
            .parse()
            .map_err(|_| Error::Parse(format!("bad time '{}'", f(0))))?;
        let m: f64 = f(1)
            .parse()
            .map_err(|_| Error::Parse(format!("bad mark '{}'", f(1))))?;
        let a: usize = f(2)
            .parse()
            .map_err(|_| Error::Parse(format!("bad asset '{}'", f(2))))?;
        if a >= n_assets {
            return Err(Error::Parse(format!("asset {a} out of range")));
        }
        streams[a].times.push(t);
        streams[a].marks.push(m);
    }
    for s in &streams {
        s.validate()?;
    }
    Ok(streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExponentialKernelParams, KernelGrid, QuadraticKernelGrid};

    #[test]
    fn homogeneous_poisson_count_and_ks() {
        let spec = PointProcessSpec::baseline(vec![0.1]);
        let out = simulate_qhawkes_thinning(&spec, 1e6, 1).unwrap();
        let n = out.streams[0].len() as f64;
        assert!((n - 1e5).abs() < 4.0 * 1e5f64.sqrt(), "count {n}");
        // Kolmogorov-Smirnov against Exponential(0.1) at the 1% level
        let mut gaps: Vec<f64> = out.streams[0]
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        gaps.sort_by(f64::total_cmp);
        let m = gaps.len() as f64;
        let d = gaps
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let f = 1.0 - (-0.1 * g).exp();
                (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / m.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn thinning_is_deterministic() {
        let spec = PointProcessSpec::zhawkes_1d(0.01, 0.5, 0.1, 0.2, 0.1);
        let a = simulate_qhawkes_thinning(&spec, 2e4, 9).unwrap();
        let b = simulate_qhawkes_thinning(&spec, 2e4, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.streams[0].validate().is_ok());
    }

    #[test]
    fn thinning_rejects_non_stationary() {
        let spec = PointProcessSpec::zhawkes_1d(0.01, 0.8, 0.1, 0.3, 0.1);
        assert!(matches!(
            simulate_qhawkes_thinning(&spec, 10.0, 1),
            Err(Error::NonStationary { .. })
        ));
    }

    #[test]
    fn zhawkes_mean_rate() {
        // λ̄ = λ∞ / (1 − n_H − n_Z) = 0.015
        let spec = PointProcessSpec::zhawkes_1d(0.003, 0.6, 0.04, 0.2, 0.03);
        let out = simulate_qhawkes_thinning(&spec, 4e6, 2).unwrap();
        let rate = out.streams[0].len() as f64 / 4e6;
        assert!((rate / 0.015 - 1.0).abs() < 0.1, "rate {rate}");
    }

    #[test]
    fn bin_events_examples() {
        let empty = EventStream {
            horizon: 3.0,
            ..Default::default()
        };
        let p = bin_events(&empty, 1.0).unwrap();
        assert_eq!(p.n_bins, 3);
        assert!(p.returns[0].iter().chain(&p.sigma2[0]).all(|v| *v == 0.0));
        let s = EventStream {
            times: vec![0.5, 0.7],
            marks: vec![1.0, -1.0],
            horizon: 2.5,
        };
        let p = bin_events(&s, 1.0).unwrap();
        assert_eq!(p.n_bins, 3);
        assert_eq!((p.returns[0][0], p.sigma2[0][0]), (0.0, 2.0));
    }

    #[test]
    fn binned_poisson_mean_count() {
        let spec = PointProcessSpec::baseline(vec![1.7]);
        let out = simulate_qhawkes_thinning(&spec, 1e5, 4).unwrap();
        let p = bin_events(&out.streams[0], 1.0).unwrap();
        let mean = p.sigma2[0].iter().sum::<f64>() / p.n_bins as f64;
        assert!(
            (mean - 1.7).abs() < 4.0 * (1.7f64 / 1e5).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn mqarch_white_noise_limit() {
        let mut m = ModelSpec::zeros(2, 5, 5);
        m.sigma_inf_sq = vec![1.0, 1.0];
        let p = simulate_mqarch(&m, 100_000, 3, Noise::Gaussian).unwrap();
        for a in 0..2 {
            let var = p.returns[a].iter().map(|x| x * x).sum::<f64>() / 1e5;
            assert!((var - 1.0).abs() < 3.0 * (2.0f64 / 1e5).sqrt(), "var {var}");
            assert!(p.sigma2[a].iter().all(|s| *s == 1.0));
        }
    }

    #[test]
    fn mqarch_is_deterministic() {
        let spec = PointProcessSpec::zhawkes_1d(0.3, 0.5, 0.2, 0.2, 0.2);
        let m = ModelSpec::from_exponential(&spec, 10, 5).unwrap();
        let a = simulate_mqarch(&m, 5000, 17, Noise::Gaussian).unwrap();
        let b = simulate_mqarch(&m, 5000, 17, Noise::Gaussian).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zumbach_only_keeps_baseline_mean() {
        let mut m = ModelSpec::zeros(1, 20, 5);
        m.sigma_inf_sq = vec![0.5];
        let k = ExponentialKernelParams::zumbach(0.3, 0.2).tabulate(20);
        // off-diagonal only: time-diagonal φ = 0
        m.quad[0][0] = QuadraticKernelGrid {
            diag: KernelGrid::zeros(20),
            rank_one: Some(k),
            full_upper: None,
        };
        let p = simulate_mqarch(&m, 400_000, 8, Noise::Gaussian).unwrap();
        let mean = p.sigma2[0].iter().sum::<f64>() / p.n_bins as f64;
        assert!((mean / 0.5 - 1.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn linear_table_runs_with_warning() {
        let mut spec = PointProcessSpec::baseline(vec![0.05, 0.1]);
        spec.phi[0][0] = ExponentialKernelParams::linear(0.8, 0.2);
        spec.phi[0][1] = ExponentialKernelParams::linear(0.2, 0.3);
        spec.phi[1][0] = ExponentialKernelParams::linear(0.3, 0.3);
        spec.phi[1][1] = ExponentialKernelParams::linear(0.7, 0.1);
        let m = ModelSpec::from_exponential(&spec, 50, 30).unwrap();
        let p = simulate_mqarch(&m, 5000, 1, Noise::Gaussian).unwrap();
        assert_eq!(p.returns[0].len(), 5000);
    }

    #[test]
    fn panel_and_event_csv_round_trip() {
        let spec = PointProcessSpec::zhawkes_1d(0.3, 0.5, 0.2, 0.2, 0.2);
        let m = ModelSpec::from_exponential(&spec, 10, 5).unwrap();
        let p = simulate_mqarch(&m, 200, 1, Noise::Gaussian).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(SimulatedPanel::read_csv(buf.as_slice()).unwrap(), p);

        let out = simulate_qhawkes_thinning(&PointProcessSpec::baseline(vec![0.2, 0.1]), 100.0, 3)
            .unwrap();
        let mut buf = Vec::new();
        write_events_csv(&out.streams, &mut buf).unwrap();
        assert_eq!(
            read_events_csv(buf.as_slice(), 100.0, 2).unwrap(),
            out.streams
        );
    }
}
