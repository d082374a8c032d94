//! Binned intensity-proxy likelihood.

use super::{NaturalGrad, PairConst};
use crate::error::{Error, Result};
use crate::exec::{map_range, Exec};
use crate::model::PointProcessSpec;
use crate::preprocess::BinnedPanel;

/// Proxy `ln L` of a panel whose `sigma2` holds `λ̂·dt` per bin. Kernel
/// states restart at the first bin of every day.
pub fn loglik_binned_proxy(
    panel: &BinnedPanel,
    dt: f64,
    spec: &PointProcessSpec,
    exec: Exec,
) -> Result<f64> {
    spec.validate()?;
    panel.validate()?;
    if panel.n_assets() != spec.n_assets() {
        return Err(Error::LengthMismatch {
            what: "panel assets",
            expected: spec.n_assets(),
            got: panel.n_assets(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be > 0".into()));
    }
    Ok(engine(panel, dt, spec, false, exec)?.0)
}

pub(crate) fn engine(
    panel: &BinnedPanel,
    dt: f64,
    spec: &PointProcessSpec,
    want_grad: bool,
    exec: Exec,
) -> Result<(f64, NaturalGrad)> {
    let n = spec.n_assets();
    let pc: Vec<Vec<PairConst>> = (0..n)
        .map(|i| (0..n).map(|j| PairConst::of(spec, i, j)).collect())
        .collect();
    let eb: Vec<Vec<f64>> = pc
        .iter()
        .map(|r| r.iter().map(|c| (-c.beta * dt).exp()).collect())
        .collect();
    let ez: Vec<Vec<f64>> = pc
        .iter()
        .map(|r| r.iter().map(|c| (-c.omega * dt).exp()).collect())
        .collect();
    let b = panel.bins_per_day;

    let per_day = map_range(exec, panel.n_days(), |d| -> Result<(f64, NaturalGrad)> {
        let mut g = NaturalGrad::zeros(n);
        let mut ll = 0.0;
        // [target][source] = (h, hp, z, zp) with h in units of events.
        let mut st = vec![vec![[0.0f64; 4]; n]; n];
        for t in 0..b {
            let idx = d * b + t;
            for j in 0..n {
                let mut lambda = spec.lambda_inf[j];
                for s in 0..n {
                    let (c, x) = (pc[j][s], st[j][s]);
                    lambda += c.n * c.beta * x[0] + 2.0 * c.nz * c.omega * x[2] * x[2];
                }
                if !(lambda > 0.0) {
                    return Err(Error::NonPositiveIntensity {
                        index: idx,
                        value: lambda,
                    });
                }
                let hat = panel.sigma2[j][idx] / dt;
                ll += if hat > 0.0 {
                    hat * (lambda.ln() - hat.ln()) + hat - lambda
                } else {
                    -lambda
                };
                if want_grad {
                    let w = hat / lambda - 1.0;
                    g.mu[j] += w;
                    for s in 0..n {
                        let (c, x) = (pc[j][s], st[j][s]);
                        g.phi_n[j][s] += w * c.beta * x[0];
                        g.phi_b[j][s] += w * c.n * (x[0] - c.beta * x[1]);
                        g.k_n[j][s] += w * 2.0 * c.omega * x[2] * x[2];
                        g.k_w[j][s] += w * 2.0 * c.nz * (x[2] * x[2] - 2.0 * c.omega * x[2] * x[3]);
                    }
                }
            }
            for j in 0..n {
                for s in 0..n {
                    let (count, r) = (panel.sigma2[s][idx], panel.returns[s][idx]);
                    let x = &mut st[j][s];
                    let (e, f) = (eb[j][s], ez[j][s]);
                    x[1] = e * (x[1] + dt * (x[0] + count));
                    x[0] = e * (x[0] + count);
                    x[3] = f * (x[3] + dt * (x[2] + r));
                    x[2] = f * (x[2] + r);
                }
            }
        }
        Ok((ll, g))
    });

    let mut ll = 0.0;
    let mut g = NaturalGrad::zeros(n);
    for r in per_day {
        let (l, gd) = r?;
        ll += l;
        g.add(&gd);
    }
    Ok((ll, g))
}
