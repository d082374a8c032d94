//! From OHLC bars or simulated paths to normalized, martingalised and
//! optionally mirror-augmented (return, volatility) panels.

use crate::error::{Error, Result};
use crate::simulate::SimulatedPanel;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stage {
    #[default]
    Raw,
    Normalized,
    Martingalised,
    Mirrored,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Normalized => "normalized",
            Stage::Martingalised => "martingalised",
            Stage::Mirrored => "mirrored",
        }
    }
}

/// Rectangular per-day panel. Series are stored day-major:
/// `returns[asset][day * bins_per_day + bin]`. Volatility is kept squared.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BinnedPanel {
    pub assets: Vec<String>,
    pub dates: Vec<String>,
    pub bins_per_day: usize,
    pub returns: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
    pub stage: Stage,
}

impl BinnedPanel {
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_days() * self.bins_per_day
    }

    pub fn day_returns(&self, asset: usize, day: usize) -> &[f64] {
        let b = self.bins_per_day;
        &self.returns[asset][day * b..(day + 1) * b]
    }

    pub fn day_sigma2(&self, asset: usize, day: usize) -> &[f64] {
        let b = self.bins_per_day;
        &self.sigma2[asset][day * b..(day + 1) * b]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_bins();
        for a in 0..self.n_assets() {
            if self.returns[a].len() != n || self.sigma2[a].len() != n {
                return Err(Error::LengthMismatch {
                    what: "panel series",
                    expected: n,
                    got: self.returns[a].len(),
                });
            }
            if self.returns[a]
                .iter()
                .chain(&self.sigma2[a])
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidInput(format!(
                    "non-finite value in asset {}",
                    self.assets[a]
                )));
            }
        }
        Ok(())
    }

    /// Cuts a simulated path into days of `bins_per_day` bins; a trailing
    /// partial day is dropped.
    pub fn from_simulated(p: &SimulatedPanel, bins_per_day: usize) -> Result<Self> {
        if bins_per_day == 0 || p.n_bins < bins_per_day {
            return Err(Error::InvalidInput(format!(
                "cannot cut {} bins into days of {bins_per_day}",
                p.n_bins
            )));
        }
        let n_days = p.n_bins / bins_per_day;
        let keep = n_days * bins_per_day;
        Ok(Self {
            assets: (0..p.n_assets).map(|a| a.to_string()).collect(),
            dates: (0..n_days).map(|d| format!("d{d:06}")).collect(),
            bins_per_day,
            returns: p.returns.iter().map(|r| r[..keep].to_vec()).collect(),
            sigma2: p.sigma2.iter().map(|s| s[..keep].to_vec()).collect(),
            stage: Stage::Raw,
        })
    }

    /// Keeps only the listed assets, in the given order.
    pub fn select_assets(&self, idx: &[usize]) -> Self {
        Self {
            assets: idx.iter().map(|&a| self.assets[a].clone()).collect(),
            dates: self.dates.clone(),
            bins_per_day: self.bins_per_day,
            returns: idx.iter().map(|&a| self.returns[a].clone()).collect(),
            sigma2: idx.iter().map(|&a| self.sigma2[a].clone()).collect(),
            stage: self.stage,
        }
    }

    /// Removes the listed bin-of-day columns from every day.
    fn drop_bins(&mut self, bins: &BTreeSet<usize>) {
        if bins.is_empty() {
            return;
        }
        let b = self.bins_per_day;
        let keep: Vec<usize> = (0..b).filter(|t| !bins.contains(t)).collect();
        let n_days = self.n_days();
        let filter = |v: &Vec<f64>| -> Vec<f64> {
            (0..n_days)
                .flat_map(|d| keep.iter().map(move |&t| v[d * b + t]))
                .collect()
        };
        self.returns = self.returns.iter().map(filter).collect();
        self.sigma2 = self.sigma2.iter().map(filter).collect();
        self.bins_per_day = keep.len();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcBar {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn validate(&self) -> Result<()> {
        let OhlcBar {
            open,
            high,
            low,
            close,
        } = *self;
        if !(open > 0.0 && high > 0.0 && low > 0.0 && close > 0.0) {
            return Err(Error::InvalidBar(format!("non-positive price in {self:?}")));
        }
        if !(low <= open.min(close) && open.max(close) <= high) {
            return Err(Error::InvalidBar(format!("inconsistent range in {self:?}")));
        }
        Ok(())
    }
}

/// Rectangular OHLC bars, `bars[asset][day * bins_per_day + bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcPanel {
    pub assets: Vec<String>,
    pub dates: Vec<String>,
    pub bins_per_day: usize,
    pub bars: Vec<Vec<OhlcBar>>,
}

/// Intraday window in minutes after midnight, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub session_start: u32,
    pub session_end: u32,
    pub bin_minutes: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            session_start: 10 * 60,
            session_end: 15 * 60,
            bin_minutes: 1,
        }
    }
}

impl SessionConfig {
    pub fn bins_per_day(&self) -> usize {
        ((self.session_end.saturating_sub(self.session_start)) / self.bin_minutes.max(1)) as usize
    }
}

/// Parses `HH:MM` or `HH:MM:SS` into minutes after midnight.
pub fn parse_clock(s: &str) -> Result<u32> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(Error::Parse(format!("bad time '{s}'")));
    }
    let h: u32 = parts[0]
        .parse()
        .map_err(|_| Error::Parse(format!("bad hour in '{s}'")))?;
    let m: u32 = parts[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad minute in '{s}'")))?;
    if h > 23 || m > 59 {
        return Err(Error::Parse(format!("bad time '{s}'")));
    }
    Ok(h * 60 + m)
}

/// Reads `(date, time, asset, open, high, low, close)` rows. Bars outside the
/// session are ignored; days missing any bin of any asset are dropped whole.
pub fn read_ohlc_csv<R: Read>(r: R, session: &SessionConfig) -> Result<OhlcPanel> {
    let b = session.bins_per_day();
    if b == 0 {
        return Err(Error::InvalidInput("empty intraday session".into()));
    }
    let mut rd = csv::Reader::from_reader(r);
    let mut cells: BTreeMap<(String, String), Vec<Option<OhlcBar>>> = BTreeMap::new();
    let mut assets = BTreeSet::new();
    let mut dates = BTreeSet::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
        let minute = parse_clock(&f(1))?;
        if minute < session.session_start || minute >= session.session_end {
            continue;
        }
        let offset = minute - session.session_start;
        if !offset.is_multiple_of(session.bin_minutes) {
            continue;
        }
        let bin = (offset / session.bin_minutes) as usize;
        let num = |k: usize| -> Result<f64> {
            f(k).parse()
                .map_err(|_| Error::Parse(format!("bad price '{}'", f(k))))
        };
        let bar = OhlcBar {
            open: num(3)?,
            high: num(4)?,
            low: num(5)?,
            close: num(6)?,
        };
        bar.validate()?;
        let (date, asset) = (f(0), f(2));
        assets.insert(asset.clone());
        dates.insert(date.clone());
        cells.entry((date, asset)).or_insert_with(|| vec![None; b])[bin] = Some(bar);
    }
    let assets: Vec<String> = assets.into_iter().collect();
    let mut kept = Vec::new();
    let mut bars = vec![Vec::new(); assets.len()];
    for date in dates {
        let complete = assets.iter().all(|a| {
            cells
                .get(&(date.clone(), a.clone()))
                .is_some_and(|v| v.iter().all(Option::is_some))
        });
        if !complete {
            log::warn!("dropping incomplete day {date}");
            continue;
        }
        for (ai, a) in assets.iter().enumerate() {
            bars[ai].extend(cells[&(date.clone(), a.clone())].iter().map(|x| x.unwrap()));
        }
        kept.push(date);
    }
    if kept.is_empty() {
        return Err(Error::InvalidInput(
            "no complete trading day in input".into(),
        ));
    }
    Ok(OhlcPanel {
        assets,
        dates: kept,
        bins_per_day: b,
        bars,
    })
}

/// `r = ln(c/o)` and Bachelier-type `σ = (h−l)/(3o) + 2|c−o|/(3o)`.
pub fn ohlc_to_returns_vol(panel: &OhlcPanel) -> Result<BinnedPanel> {
    let mut returns = Vec::with_capacity(panel.assets.len());
    let mut sigma2 = Vec::with_capacity(panel.assets.len());
    for series in &panel.bars {
        let mut r = Vec::with_capacity(series.len());
        let mut s = Vec::with_capacity(series.len());
        for bar in series {
            bar.validate()?;
            r.push((bar.close / bar.open).ln());
            let sigma = (bar.high - bar.low) / (3.0 * bar.open)
                + 2.0 * (bar.close - bar.open).abs() / (3.0 * bar.open);
            s.push(sigma * sigma);
        }
        returns.push(r);
        sigma2.push(s);
    }
    Ok(BinnedPanel {
        assets: panel.assets.clone(),
        dates: panel.dates.clone(),
        bins_per_day: panel.bins_per_day,
        returns,
        sigma2,
        stage: Stage::Raw,
    })
}

/// Divides each return by the root mean of its own squares over the previous
/// `window_days` days at the same bin of day, and σ likewise with σ². The
/// first `window_days` days only seed the window and are dropped.
pub fn normalize_trailing(panel: &BinnedPanel, window_days: usize) -> Result<BinnedPanel> {
    let n_days = panel.n_days();
    if window_days == 0 || n_days < window_days + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} days, have {n_days}",
            window_days + 1
        )));
    }
    let b = panel.bins_per_day;
    let out_days = n_days - window_days;
    let mut out = BinnedPanel {
        assets: panel.assets.clone(),
        dates: panel.dates[window_days..].to_vec(),
        bins_per_day: b,
        returns: vec![vec![0.0; out_days * b]; panel.n_assets()],
        sigma2: vec![vec![0.0; out_days * b]; panel.n_assets()],
        stage: Stage::Normalized,
    };
    let mut zero_bins = BTreeSet::new();
    let w = window_days as f64;
    for a in 0..panel.n_assets() {
        for t in 0..b {
            let at = |v: &Vec<f64>, d: usize| v[d * b + t];
            let mut sum_r2: f64 = (0..window_days)
                .map(|d| at(&panel.returns[a], d).powi(2))
                .sum();
            let mut sum_s2: f64 = (0..window_days).map(|d| at(&panel.sigma2[a], d)).sum();
            for d in window_days..n_days {
                let (mr, ms) = (sum_r2 / w, sum_s2 / w);
                if mr <= 0.0 || ms <= 0.0 {
                    zero_bins.insert(t);
                } else {
                    let o = (d - window_days) * b + t;
                    out.returns[a][o] = at(&panel.returns[a], d) / mr.sqrt();
                    out.sigma2[a][o] = at(&panel.sigma2[a], d) / ms;
                }
                let old = d - window_days;
                sum_r2 += at(&panel.returns[a], d).powi(2) - at(&panel.returns[a], old).powi(2);
                sum_s2 += at(&panel.sigma2[a], d) - at(&panel.sigma2[a], old);
                // Recompute periodically to bound drift of the running sums.
                if (d + 1) % 64 == 0 {
                    sum_r2 = (d + 1 - window_days..=d)
                        .map(|k| at(&panel.returns[a], k).powi(2))
                        .sum();
                    sum_s2 = (d + 1 - window_days..=d)
                        .map(|k| at(&panel.sigma2[a], k))
                        .sum();
                }
            }
        }
    }
    finish_drop(&mut out, zero_bins, "trailing")?;
    Ok(out)
}

fn finish_drop(out: &mut BinnedPanel, zero_bins: BTreeSet<usize>, what: &str) -> Result<()> {
    if zero_bins.is_empty() {
        return Ok(());
    }
    if zero_bins.len() == out.bins_per_day {
        return Err(Error::ZeroDenominator(format!(
            "every bin of day has a zero {what} mean"
        )));
    }
    log::warn!("dropping bins of day {:?}: zero {what} mean", zero_bins);
    out.drop_bins(&zero_bins);
    Ok(())
}

/// Removes the intraday profile: divides σ and r at bin `t` by the root of
/// the across-day mean of σ² at that bin.
pub fn normalize_intraday(panel: &BinnedPanel) -> Result<BinnedPanel> {
    let n_days = panel.n_days();
    if n_days < 2 {
        return Err(Error::InvalidInput(
            "intraday normalization needs at least 2 days".into(),
        ));
    }
    let b = panel.bins_per_day;
    let mut out = panel.clone();
    out.stage = Stage::Normalized;
    let mut zero_bins = BTreeSet::new();
    for a in 0..panel.n_assets() {
        for t in 0..b {
            let m = (0..n_days).map(|d| panel.sigma2[a][d * b + t]).sum::<f64>() / n_days as f64;
            if m <= 0.0 {
                zero_bins.insert(t);
                continue;
            }
            let sd = m.sqrt();
            for d in 0..n_days {
                out.sigma2[a][d * b + t] /= m;
                out.returns[a][d * b + t] /= sd;
            }
        }
    }
    finish_drop(&mut out, zero_bins, "intraday")?;
    Ok(out)
}

/// Lag-1 surprise returns. With centered returns `x_t`, equal-time covariance
/// `Γ₀` and within-day lag-1 covariance `Γ₁[a][b] = E[x_{a,t} x_{b,t−1}]`,
/// the Gaussian conditional expectation is `Γ₁ Γ₀⁻¹ x_{t−1}`; it is removed
/// from every bin except the first of each day, then each asset is rescaled
/// to unit standard deviation.
pub fn martingalise(panel: &BinnedPanel) -> Result<BinnedPanel> {
    let n = panel.n_assets();
    let b = panel.bins_per_day;
    let nd = panel.n_days();
    if b < 2 || nd == 0 {
        return Err(Error::InvalidInput(
            "martingalisation needs at least 2 bins per day".into(),
        ));
    }
    let total = panel.n_bins() as f64;
    let x: Vec<Vec<f64>> = panel
        .returns
        .iter()
        .map(|r| {
            let mu = r.iter().sum::<f64>() / total;
            r.iter().map(|v| v - mu).collect()
        })
        .collect();
    let mut g0 = [[0.0; 2]; 2];
    let mut g1 = [[0.0; 2]; 2];
    let pairs_count = (nd * (b - 1)) as f64;
    for i in 0..n {
        for j in 0..n {
            g0[i][j] = x[i].iter().zip(&x[j]).map(|(u, v)| u * v).sum::<f64>() / total;
            let mut s = 0.0;
            for d in 0..nd {
                for t in 1..b {
                    s += x[i][d * b + t] * x[j][d * b + t - 1];
                }
            }
            g1[i][j] = s / pairs_count;
        }
    }
    for (i, row) in g0.iter().enumerate().take(n) {
        if !(row[i] > 0.0) {
            return Err(Error::ZeroDenominator(format!(
                "asset {} has zero return variance",
                panel.assets[i]
            )));
        }
    }
    let coef: [[f64; 2]; 2] = if n == 1 {
        [[g1[0][0] / g0[0][0], 0.0], [0.0, 0.0]]
    } else {
        let nu = g0[0][1] / (g0[0][0] * g0[1][1]).sqrt();
        if nu.abs() >= 1.0 - 1e-6 {
            return Err(Error::SingularCorrelation(format!(
                "equal-time correlation {nu}"
            )));
        }
        let det = g0[0][0] * g0[1][1] - g0[0][1] * g0[1][0];
        let inv = [
            [g0[1][1] / det, -g0[0][1] / det],
            [-g0[1][0] / det, g0[0][0] / det],
        ];
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = g1[i][0] * inv[0][j] + g1[i][1] * inv[1][j];
            }
        }
        c
    };
    let mut out = panel.clone();
    for i in 0..n {
        let y = &mut out.returns[i];
        for d in 0..nd {
            y[d * b] = x[i][d * b];
            for t in 1..b {
                let k = d * b + t;
                let mut pred = 0.0;
                for j in 0..n {
                    pred += coef[i][j] * x[j][k - 1];
                }
                y[k] = x[i][k] - pred;
            }
        }
        let mu = y.iter().sum::<f64>() / total;
        let sd = (y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / total).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ZeroDenominator(
                "martingalised returns have zero variance".into(),
            ));
        }
        for v in y.iter_mut() {
            *v /= sd;
        }
    }
    out.stage = Stage::Martingalised;
    Ok(out)
}

/// Appends sign-flipped copies of every day after the original days.
pub fn mirror_augment(panel: &BinnedPanel) -> BinnedPanel {
    let mut out = panel.clone();
    out.dates
        .extend(panel.dates.iter().map(|d| format!("{d}~mirror")));
    for (r, orig) in out.returns.iter_mut().zip(&panel.returns) {
        r.extend(orig.iter().map(|v| -v));
    }
    for (s, orig) in out.sigma2.iter_mut().zip(&panel.sigma2) {
        s.extend_from_slice(orig);
    }
    out.stage = Stage::Mirrored;
    out
}

/// Lag-one autocorrelation of an asset's returns, using within-day pairs only.
pub fn lag1_autocorrelation(panel: &BinnedPanel, asset: usize) -> f64 {
    let b = panel.bins_per_day;
    let r = &panel.returns[asset];
    let total = r.len() as f64;
    let mu = r.iter().sum::<f64>() / total;
    let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / total;
    let mut s = 0.0;
    let mut n = 0usize;
    for d in 0..panel.n_days() {
        for t in 1..b {
            s += (r[d * b + t] - mu) * (r[d * b + t - 1] - mu);
            n += 1;
        }
    }
    s / n as f64 / var
}

impl BinnedPanel {
    /// CSV `(date, bin, asset, return, sigma)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["date", "bin", "asset", "return", "sigma"])?;
        let b = self.bins_per_day;
        for (d, date) in self.dates.iter().enumerate() {
            for t in 0..b {
                for (a, name) in self.assets.iter().enumerate() {
                    let k = d * b + t;
                    wr.write_record([
                        date.clone(),
                        t.to_string(),
                        name.clone(),
                        self.returns[a][k].to_string(),
                        self.sigma2[a][k].sqrt().to_string(),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads either the `(date, bin, asset, return, sigma)` layout or a
    /// simulated `(bin_index, asset, return, sigma2)` panel, which is cut into
    /// days of `bins_per_day` bins.
    pub fn read_csv<R: Read>(r: R, bins_per_day: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if headers == ["bin_index", "asset", "return", "sigma2"] {
            let mut buf = Vec::new();
            {
                let mut wr = csv::Writer::from_writer(&mut buf);
                wr.write_record(&headers)?;
                for rec in rd.records() {
                    wr.write_record(&rec?)?;
                }
                wr.flush()?;
            }
            let sim = SimulatedPanel::read_csv(buf.as_slice())?;
            return Self::from_simulated(&sim, bins_per_day);
        }
        if headers != ["date", "bin", "asset", "return", "sigma"] {
            return Err(Error::Parse(format!(
                "unrecognised panel header {headers:?}"
            )));
        }
        let mut assets: Vec<String> = Vec::new();
        let mut dates: Vec<String> = Vec::new();
        let mut rows = Vec::new();
        let mut max_bin = 0;
        for rec in rd.records() {
            let rec = rec?;
            let f = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
            let bin: usize = f(1)
                .parse()
                .map_err(|_| Error::Parse(format!("bad bin '{}'", f(1))))?;
            let ret: f64 = f(3)
                .parse()
                .map_err(|_| Error::Parse(format!("bad return '{}'", f(3))))?;
            let sig: f64 = f(4)
                .parse()
                .map_err(|_| Error::Parse(format!("bad sigma '{}'", f(4))))?;
            let (date, asset) = (f(0), f(2));
            if dates.last() != Some(&date) && !dates.contains(&date) {
                dates.push(date.clone());
            }
            if !assets.contains(&asset) {
                assets.push(asset.clone());
            }
            max_bin = max_bin.max(bin);
            rows.push((date, bin, asset, ret, sig));
        }
        let b = max_bin + 1;
        let n = dates.len() * b;
        if rows.len() != n * assets.len() {
            return Err(Error::Parse("panel is not rectangular".into()));
        }
        let day_idx: BTreeMap<&String, usize> =
            dates.iter().enumerate().map(|(i, d)| (d, i)).collect();
        let mut p = BinnedPanel {
            assets: assets.clone(),
            dates: dates.clone(),
            bins_per_day: b,
            returns: vec![vec![0.0; n]; assets.len()],
            sigma2: vec![vec![0.0; n]; assets.len()],
            stage: Stage::Raw,
        };
        for (date, bin, asset, ret, sig) in &rows {
            let a = assets.iter().position(|x| x == asset).unwrap();
            let k = day_idx[date] * b + bin;
            p.returns[a][k] = *ret;
            p.sigma2[a][k] = sig * sig;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn panel(
        n_assets: usize,
        days: usize,
        b: usize,
        mut f: impl FnMut(usize, usize, usize) -> (f64, f64),
    ) -> BinnedPanel {
        let mut p = BinnedPanel {
            assets: (0..n_assets).map(|a| a.to_string()).collect(),
            dates: (0..days).map(|d| d.to_string()).collect(),
            bins_per_day: b,
            returns: vec![vec![0.0; days * b]; n_assets],
            sigma2: vec![vec![0.0; days * b]; n_assets],
            stage: Stage::Raw,
        };
        for a in 0..n_assets {
            for d in 0..days {
                for t in 0..b {
                    let (r, s) = f(a, d, t);
                    p.returns[a][d * b + t] = r;
                    p.sigma2[a][d * b + t] = s * s;
                }
            }
        }
        p
    }

    #[test]
    fn ohlc_formulas() {
        let flat = OhlcBar {
            open: 100.0,
            high: 100.0,
            low: 100.0,
            close: 100.0,
        };
        let up = OhlcBar {
            open: 100.0,
            high: 101.5,
            low: 99.5,
            close: 101.0,
        };
        let down = OhlcBar {
            open: 100.0,
            high: 100.5,
            low: 98.5,
            close: 99.0,
        };
        let p = OhlcPanel {
            assets: vec!["A".into()],
            dates: vec!["x".into()],
            bins_per_day: 3,
            bars: vec![vec![flat, up, down]],
        };
        let b = ohlc_to_returns_vol(&p).unwrap();
        assert_eq!((b.returns[0][0], b.sigma2[0][0]), (0.0, 0.0));
        assert_relative_eq!(b.returns[0][1], 1.01f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(b.returns[0][1], 0.00995, epsilon = 1e-5);
        assert_relative_eq!(
            b.sigma2[0][1].sqrt(),
            0.02 / 3.0 + 2.0 * 0.01 / 3.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(b.sigma2[0][1].sqrt(), 0.01333, epsilon = 1e-5);
        assert!(b.returns[0][2] < 0.0);
        assert_relative_eq!(
            b.sigma2[0][2].sqrt(),
            0.02 / 3.0 + 2.0 * 0.01 / 3.0,
            epsilon = 1e-14
        );
        let bad = OhlcBar { open: -1.0, ..flat };
        assert!(matches!(bad.validate(), Err(Error::InvalidBar(_))));
    }

    #[test]
    fn ohlc_csv_drops_incomplete_days() {
        let session = SessionConfig {
            session_start: 600,
            session_end: 603,
            bin_minutes: 1,
        };
        let mut s = String::from("date,time,asset,open,high,low,close\n");
        for d in ["2024-01-02", "2024-01-03"] {
            for m in 0..3 {
                for a in ["ES", "NQ"] {
                    if d == "2024-01-03" && a == "NQ" && m == 2 {
                        continue;
                    }
                    s += &format!("{d},10:0{m},{a},100,101,99,100.5\n");
                }
            }
        }
        s += "2024-01-02,09:59,ES,100,101,99,100.5\n";
        let p = read_ohlc_csv(s.as_bytes(), &session).unwrap();
        assert_eq!(p.dates, vec!["2024-01-02".to_string()]);
        assert_eq!(p.assets, vec!["ES".to_string(), "NQ".to_string()]);
        assert_eq!(p.bars[0].len(), 3);
    }

    #[test]
    fn trailing_normalization_of_constant_is_one() {
        let p = panel(1, 8, 4, |_, _, t| (0.5 * (t as f64 + 1.0), 2.0 + t as f64));
        let out = normalize_trailing(&p, 3).unwrap();
        assert_eq!(out.n_days(), 5);
        for v in out.sigma2[0].iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
        for v in out.returns[0].iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
        assert!(normalize_trailing(&p, 8).is_err());
    }

    #[test]
    fn trailing_normalization_drops_zero_bins() {
        let p = panel(1, 6, 3, |_, d, t| {
            if t == 1 {
                (0.0, 0.0)
            } else {
                (1.0 + d as f64, 1.0)
            }
        });
        let out = normalize_trailing(&p, 2).unwrap();
        assert_eq!(out.bins_per_day, 2);
        let all_zero = panel(1, 6, 2, |_, _, _| (0.0, 0.0));
        assert!(matches!(
            normalize_trailing(&all_zero, 2),
            Err(Error::ZeroDenominator(_))
        ));
    }

    #[test]
    fn intraday_profile_removed_and_idempotent() {
        let g = |t: usize| 1.0 + ((t as f64) - 5.0).powi(2) / 10.0;
        let p = panel(1, 4, 11, |_, d, t| ((d as f64 - 1.5) * g(t), g(t)));
        let out = normalize_intraday(&p).unwrap();
        for v in &out.sigma2[0] {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
        let twice = normalize_intraday(&out).unwrap();
        for (a, b) in twice.returns[0].iter().zip(&out.returns[0]) {
            assert!((a - b).abs() < 1e-10);
        }
        // flat profile: global rescale only
        let flat = panel(1, 3, 4, |_, d, t| (d as f64 + t as f64, 2.0));
        let o = normalize_intraday(&flat).unwrap();
        for (x, y) in o.returns[0].iter().zip(&flat.returns[0]) {
            assert_relative_eq!(*x, y / 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn intraday_sinusoidal_profile_flat_after() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = 20;
        let days = 10_000;
        let p = panel(1, days, b, |_, _, t| {
            let prof = 1.0 + 0.5 * (t as f64 / b as f64 * std::f64::consts::TAU).sin();
            let z: f64 = StandardNormal.sample(&mut rng);
            (prof * z, prof)
        });
        let out = normalize_intraday(&p).unwrap();
        for t in 0..b {
            let m = (0..days).map(|d| out.sigma2[0][d * b + t]).sum::<f64>() / days as f64;
            assert!((m - 1.0).abs() < 0.02);
        }
    }

    fn ar1_panel(phi: f64, cross: bool, seed: u64, days: usize, b: usize) -> BinnedPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_assets = if cross { 2 } else { 1 };
        let mut p = panel(n_assets, days, b, |_, _, _| (0.0, 1.0));
        for d in 0..days {
            let mut prev = [0.0f64; 2];
            for t in 0..b {
                let e1: f64 = StandardNormal.sample(&mut rng);
                let e2: f64 = StandardNormal.sample(&mut rng);
                let r1 = phi * prev[0] + e1;
                let r2 = if cross { 0.2 * prev[0] + e2 } else { 0.0 };
                p.returns[0][d * b + t] = r1;
                if cross {
                    p.returns[1][d * b + t] = r2;
                }
                prev = [r1, r2];
            }
        }
        p
    }

    #[test]
    fn martingalise_white_noise_is_near_identity() {
        let p = ar1_panel(0.0, false, 1, 200, 100);
        let m = martingalise(&p).unwrap();
        let corr: f64 = {
            let (x, y) = (&p.returns[0], &m.returns[0]);
            let (mx, my) = (
                x.iter().sum::<f64>() / x.len() as f64,
                y.iter().sum::<f64>() / y.len() as f64,
            );
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            sxy / (sxx * syy).sqrt()
        };
        assert!(corr > 0.999, "corr {corr}");
        let sd =
            (m.returns[0].iter().map(|v| v * v).sum::<f64>() / m.returns[0].len() as f64).sqrt();
        assert_relative_eq!(sd, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn martingalise_whitens_ar1() {
        let p = ar1_panel(0.3, false, 2, 1000, 100);
        assert!(lag1_autocorrelation(&p, 0) > 0.25);
        let m = martingalise(&p).unwrap();
        assert!(lag1_autocorrelation(&m, 0).abs() < 0.01);
    }

    #[test]
    fn martingalise_removes_cross_lag() {
        let p = ar1_panel(0.0, true, 3, 1000, 100);
        let m = martingalise(&p).unwrap();
        let b = m.bins_per_day;
        let mut s = 0.0;
        let mut n = 0;
        for d in 0..m.n_days() {
            for t in 1..b {
                s += m.returns[1][d * b + t] * m.returns[0][d * b + t - 1];
                n += 1;
            }
        }
        assert!((s / n as f64).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn martingalise_rejects_collinear_assets() {
        let mut p = ar1_panel(0.1, false, 4, 10, 50);
        p.assets.push("1".into());
        p.returns
            .push(p.returns[0].iter().map(|v| 2.0 * v).collect());
        p.sigma2.push(p.sigma2[0].clone());
        assert!(matches!(
            martingalise(&p),
            Err(Error::SingularCorrelation(_))
        ));
    }

    #[test]
    fn mirror_doubles_days() {
        let p = ar1_panel(0.2, true, 5, 7, 10);
        let m = mirror_augment(&p);
        assert_eq!(m.n_days(), 14);
        assert_eq!(m.day_returns(1, 9)[3], -p.day_returns(1, 2)[3]);
        assert_eq!(m.day_sigma2(0, 8), p.day_sigma2(0, 1));
    }

    #[test]
    fn panel_csv_round_trip() {
        let p = panel(2, 3, 4, |a, d, t| {
            ((a + d) as f64 - t as f64 * 0.5, 1.0 + t as f64)
        });
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = BinnedPanel::read_csv(buf.as_slice(), 0).unwrap();
        assert_eq!(back.returns, p.returns);
        for (x, y) in back.sigma2[0].iter().zip(&p.sigma2[0]) {
            assert_relative_eq!(*x, *y, max_relative = 1e-15);
        }
    }
}
