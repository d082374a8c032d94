//! CSV interchange for covariance suites and smoothing fits.
//!
//! Suites are written as rows `(structure, i, j, tau1, tau2, value)`. The
//! raw families (`mean_sigma2`, `mean_r`, `gamma`, `T2`, `T3`) and a few
//! scalars are enough to rebuild the suite; the derived structures `C`, `Cr`,
//! `D`, `Dx`, `V` and `Vr` are written alongside for plotting and ignored on
//! read. In `T2`/`T3` rows, `i` is the weight index (`σ²_j` for `j < n`,
//! then the return products in `(0,0), (0,1), (1,1)` order) and `j` the
//! return index or pair index.

use super::{unordered_pairs, CovarianceSuite, FitFamily, LagTable, SmoothFit};
use crate::error::{Error, Result};
use std::io::{Read, Write};

const SUITE_HEADER: [&str; 6] = ["structure", "i", "j", "tau1", "tau2", "value"];
const FIT_HEADER: [&str; 6] = ["structure", "i", "j", "family", "param_name", "value"];

/// A named smoothing fit attached to one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub structure: String,
    pub i: usize,
    pub j: usize,
    pub fit: SmoothFit,
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what} '{s}'")))
}

impl CovarianceSuite {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(SUITE_HEADER)?;
        let mut row = |s: &str,
                       i: Option<usize>,
                       j: Option<usize>,
                       t1: Option<usize>,
                       t2: Option<usize>,
                       v: f64| {
            let f = |x: Option<usize>| x.map(|x| x.to_string()).unwrap_or_default();
            wr.write_record([s.to_string(), f(i), f(j), f(t1), f(t2), v.to_string()])
        };
        row("n_assets", None, None, None, None, self.n_assets as f64)?;
        row("max_lag", None, None, None, None, self.max_lag as f64)?;
        row("n_days", None, None, None, None, self.n_days as f64)?;
        row(
            "bins_per_day",
            None,
            None,
            None,
            None,
            self.bins_per_day as f64,
        )?;
        row(
            "symmetric",
            None,
            None,
            None,
            None,
            if self.symmetric { 1.0 } else { 0.0 },
        )?;
        let n = self.n_assets;
        let q = self.max_lag;
        for a in 0..n {
            row(
                "mean_sigma2",
                Some(a),
                None,
                None,
                None,
                self.mean_sigma2[a],
            )?;
            row("mean_r", Some(a), None, None, None, self.mean_r[a])?;
        }
        for l in 0..n {
            for c in 0..n {
                for u in 0..=q {
                    row(
                        "gamma",
                        Some(l),
                        Some(c),
                        Some(u),
                        None,
                        self.gamma[l][c][u],
                    )?;
                }
            }
        }
        for (w, per_c) in self.t2.iter().enumerate() {
            for (c, v) in per_c.iter().enumerate() {
                for (u, x) in v.iter().enumerate() {
                    row("T2", Some(w), Some(c), Some(u), None, *x)?;
                }
            }
        }
        for (w, per_cd) in self.t3.iter().enumerate() {
            for (cd, t) in per_cd.iter().enumerate() {
                for u1 in 0..t.n {
                    for u2 in 0..t.n {
                        row("T3", Some(w), Some(cd), Some(u1), Some(u2), t.get(u1, u2))?;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for u in 0..=q {
                    row("C", Some(i), Some(j), Some(u), None, self.c(i, j, u))?;
                    row(
                        "Cr",
                        Some(i),
                        Some(j),
                        Some(u),
                        None,
                        self.cr(i, j, u as isize),
                    )?;
                    row("V", Some(i), Some(j), Some(u), None, self.v(i, j, u))?;
                    row("Vr", Some(i), Some(j), Some(u), None, self.vr(i, i, j, u))?;
                }
                for t1 in 1..=q {
                    for t2 in 1..=q {
                        row(
                            "D",
                            Some(i),
                            Some(j),
                            Some(t1),
                            Some(t2),
                            self.d(i, j, t1, t2),
                        )?;
                    }
                }
            }
            if n == 2 {
                for t1 in 0..=q {
                    for t2 in 0..=q {
                        row(
                            "Dx",
                            Some(i),
                            Some(1 - i),
                            Some(t1),
                            Some(t2),
                            self.dx(i, t1, t2),
                        )?;
                    }
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if headers != SUITE_HEADER {
            return Err(Error::Parse(format!("unexpected suite header {headers:?}")));
        }
        let records: Vec<csv::StringRecord> =
            rd.records().collect::<std::result::Result<_, _>>()?;
        let scalar = |name: &str| -> Result<f64> {
            records
                .iter()
                .find(|r| r.get(0) == Some(name))
                .ok_or_else(|| Error::Parse(format!("missing '{name}' row")))
                .and_then(|r| parse(r.get(5).unwrap_or(""), name))
        };
        let n = scalar("n_assets")? as usize;
        if n == 0 || n > 2 {
            return Err(Error::Parse(format!("n_assets must be 1 or 2, got {n}")));
        }
        let q = scalar("max_lag")? as usize;
        let nl = q + 1;
        let n_w = n + unordered_pairs(n).len();
        let n_cd = unordered_pairs(n).len();
        let mut s = CovarianceSuite {
            n_assets: n,
            max_lag: q,
            n_days: scalar("n_days")? as usize,
            bins_per_day: scalar("bins_per_day")? as usize,
            symmetric: scalar("symmetric")? != 0.0,
            mean_sigma2: vec![0.0; n],
            mean_r: vec![0.0; n],
            gamma: vec![vec![vec![0.0; nl]; n]; n],
            t2: vec![vec![vec![0.0; nl]; n]; n_w],
            t3: vec![vec![LagTable::zeros(nl); n_cd]; n_w],
        };
        let idx = |x: Option<&str>, bound: usize, what: &str| -> Result<usize> {
            let v: usize = parse(x.unwrap_or(""), what)?;
            if v >= bound {
                return Err(Error::Parse(format!("{what} {v} out of range")));
            }
            Ok(v)
        };
        for rec in &records {
            let name = rec.get(0).unwrap_or("");
            let value = || parse::<f64>(rec.get(5).unwrap_or(""), "value");
            match name {
                "mean_sigma2" => s.mean_sigma2[idx(rec.get(1), n, "asset")?] = value()?,
                "mean_r" => s.mean_r[idx(rec.get(1), n, "asset")?] = value()?,
                "gamma" => {
                    let (l, c, u) = (
                        idx(rec.get(1), n, "asset")?,
                        idx(rec.get(2), n, "asset")?,
                        idx(rec.get(3), nl, "lag")?,
                    );
                    s.gamma[l][c][u] = value()?;
                }
                "T2" => {
                    let (w, c, u) = (
                        idx(rec.get(1), n_w, "weight")?,
                        idx(rec.get(2), n, "asset")?,
                        idx(rec.get(3), nl, "lag")?,
                    );
                    s.t2[w][c][u] = value()?;
                }
                "T3" => {
                    let w = idx(rec.get(1), n_w, "weight")?;
                    let cd = idx(rec.get(2), n_cd, "pair")?;
                    let (u1, u2) = (idx(rec.get(3), nl, "lag")?, idx(rec.get(4), nl, "lag")?);
                    s.t3[w][cd].set(u1, u2, value()?);
                }
                _ => {}
            }
        }
        Ok(s)
    }
}

/// Writes fits as `(structure, i, j, family, param_name, value)`.
pub fn write_fits_csv<W: Write>(fits: &[FitRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(FIT_HEADER)?;
    for f in fits {
        let fam = f.fit.family;
        for (name, v) in fam.param_names().iter().zip(&f.fit.params) {
            wr.write_record([
                &f.structure,
                &f.i.to_string(),
                &f.j.to_string(),
                fam.as_str(),
                name,
                &v.to_string(),
            ])?;
        }
        wr.write_record([
            &f.structure,
            &f.i.to_string(),
            &f.j.to_string(),
            fam.as_str(),
            "sse",
            &f.fit.sse.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads fits written by [`write_fits_csv`].
pub fn read_fits_csv<R: Read>(r: R) -> Result<Vec<FitRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if headers != FIT_HEADER {
        return Err(Error::Parse(format!("unexpected fit header {headers:?}")));
    }
    let mut out: Vec<FitRecord> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let structure = rec.get(0).unwrap_or("").to_string();
        let i: usize = parse(rec.get(1).unwrap_or(""), "i")?;
        let j: usize = parse(rec.get(2).unwrap_or(""), "j")?;
        let family = FitFamily::parse(rec.get(3).unwrap_or(""))?;
        let pname = rec.get(4).unwrap_or("");
        let v: f64 = parse(rec.get(5).unwrap_or(""), "value")?;
        let pos = out
            .iter()
            .position(|f| f.structure == structure && f.i == i && f.j == j);
        let k = match pos {
            Some(k) => k,
            None => {
                out.push(FitRecord {
                    structure,
                    i,
                    j,
                    fit: SmoothFit {
                        family,
                        params: vec![f64::NAN; family.param_names().len()],
                        sse: f64::NAN,
                    },
                });
                out.len() - 1
            }
        };
        if pname == "sse" {
            out[k].fit.sse = v;
        } else if let Some(p) = family.param_names().iter().position(|x| *x == pname) {
            out[k].fit.params[p] = v;
        } else {
            return Err(Error::Parse(format!("unknown parameter '{pname}'")));
        }
    }
    Ok(out)
}
