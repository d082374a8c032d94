//! Exact event-time likelihood with recursive kernel states.

use super::{NaturalGrad, PairConst};
use crate::error::{Error, Result};
use crate::model::PointProcessSpec;
use crate::simulate::EventStream;

/// Kernel state of one (target, source) pair: `h = Σ e^{−β(t−tₖ)}`,
/// `hp = Σ (t−tₖ) e^{−β(t−tₖ)}`, and the same for the mark sum `z`.
#[derive(Debug, Clone, Copy, Default)]
struct State {
    h: f64,
    hp: f64,
    z: f64,
    zp: f64,
}

/// `ln L = Σ ln λ(tᵢ) − ∫₀ᵀ λ` summed over all streams. Kernels are the
/// exponential `φ` and `k` of `spec`; leverage must be zero.
pub fn loglik_exact(streams: &[EventStream], spec: &PointProcessSpec) -> Result<f64> {
    spec.validate()?;
    if streams.len() != spec.n_assets() {
        return Err(Error::LengthMismatch {
            what: "event streams",
            expected: spec.n_assets(),
            got: streams.len(),
        });
    }
    if spec.leverage.iter().flatten().any(|l| l.norm != 0.0) {
        return Err(Error::InvalidInput(
            "exact likelihood does not support leverage kernels".into(),
        ));
    }
    for s in streams {
        s.validate()?;
    }
    Ok(engine(streams, spec, false)?.0)
}

pub(crate) fn engine(
    streams: &[EventStream],
    spec: &PointProcessSpec,
    want_grad: bool,
) -> Result<(f64, NaturalGrad)> {
    let n = spec.n_assets();
    let horizon = streams.iter().map(|s| s.horizon).fold(0.0, f64::max);
    let mut events: Vec<(f64, usize, f64)> = streams
        .iter()
        .enumerate()
        .flat_map(|(j, s)| s.times.iter().zip(&s.marks).map(move |(t, m)| (*t, j, *m)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let pc: Vec<Vec<PairConst>> = (0..n)
        .map(|i| (0..n).map(|j| PairConst::of(spec, i, j)).collect())
        .collect();
    let mut st = vec![vec![State::default(); n]; n];
    // Z² compensator pieces without the n_Z factor, and their ω-derivatives.
    let mut zint = vec![vec![0.0; n]; n];
    let mut zint_w = vec![vec![0.0; n]; n];
    let mut g = NaturalGrad::zeros(n);
    let mut ll = 0.0;
    let mut t_last = 0.0;

    let advance =
        |st: &mut [Vec<State>], zint: &mut [Vec<f64>], zint_w: &mut [Vec<f64>], dt: f64| {
            for i in 0..n {
                for j in 0..n {
                    let c = pc[i][j];
                    let s = &mut st[i][j];
                    if c.nz != 0.0 {
                        let e2 = (-2.0 * c.omega * dt).exp();
                        zint[i][j] += s.z * s.z * (1.0 - e2);
                        if want_grad {
                            zint_w[i][j] +=
                                -2.0 * s.z * s.zp * (1.0 - e2) + 2.0 * dt * s.z * s.z * e2;
                        }
                        let ez = (-c.omega * dt).exp();
                        s.zp = ez * (s.zp + dt * s.z);
                        s.z *= ez;
                    }
                    if c.n != 0.0 {
                        let eb = (-c.beta * dt).exp();
                        s.hp = eb * (s.hp + dt * s.h);
                        s.h *= eb;
                    }
                }
            }
        };

    for (idx, &(t, src, mark)) in events.iter().enumerate() {
        advance(&mut st, &mut zint, &mut zint_w, t - t_last);
        t_last = t;
        let mut lambda = spec.lambda_inf[src];
        for j in 0..n {
            let (c, s) = (pc[src][j], st[src][j]);
            lambda += c.n * c.beta * s.h + 2.0 * c.nz * c.omega * s.z * s.z;
        }
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveIntensity {
                index: idx,
                value: lambda,
            });
        }
        ll += lambda.ln();
        if want_grad {
            let w = 1.0 / lambda;
            g.mu[src] += w;
            for j in 0..n {
                let (c, s) = (pc[src][j], st[src][j]);
                g.phi_n[src][j] += w * c.beta * s.h;
                g.phi_b[src][j] += w * c.n * (s.h - c.beta * s.hp);
                g.k_n[src][j] += w * 2.0 * c.omega * s.z * s.z;
                g.k_w[src][j] += w * 2.0 * c.nz * (s.z * s.z - 2.0 * c.omega * s.z * s.zp);
            }
        }
        for row in st.iter_mut() {
            row[src].h += 1.0;
            row[src].z += mark;
        }
    }
    advance(&mut st, &mut zint, &mut zint_w, horizon - t_last);

    for i in 0..n {
        ll -= spec.lambda_inf[i] * horizon;
        g.mu[i] -= horizon;
        for j in 0..n {
            let (c, s) = (pc[i][j], st[i][j]);
            let count = streams[j].len() as f64;
            ll -= c.n * (count - s.h) + c.nz * zint[i][j];
            g.phi_n[i][j] -= count - s.h;
            g.phi_b[i][j] -= c.n * s.hp;
            g.k_n[i][j] -= zint[i][j];
            g.k_w[i][j] -= c.nz * zint_w[i][j];
        }
    }
    Ok((ll, g))
}
