//! The seven commands. Each reads its config section, runs the library and
//! writes CSV outputs into the staging directory.

use crate::config::RunConfig;
use crate::staging::Staging;
use crate::CliError;
use mqarch::exec::Exec;
use mqarch::factor::{
    calibrate_factor_model, cross_section_aggregate, write_norms_csv, write_profiles_csv,
    FactorOptions,
};
use mqarch::mle::{
    fisher_standard_errors, maximize, read_spec_kv, warm_start, write_fit, MaximizeOptions,
    MleData, MleMode, MleProblem,
};
use mqarch::model::{mean_squared_vol, spectral_radius, KernelGrid, ModelSpec, PointProcessSpec};
use mqarch::moments::{
    estimate_suite, fit_smooth, smooth_suite, write_fits_csv, CovarianceSuite, EstimatorConfig,
    FitFamily, FitRecord, SmoothingConfig,
};
use mqarch::preprocess::{
    lag1_autocorrelation, martingalise, mirror_augment, normalize_intraday, normalize_trailing,
    ohlc_to_returns_vol, parse_clock, read_ohlc_csv, BinnedPanel, SessionConfig,
};
use mqarch::simulate::{
    bin_event_streams, read_events_csv, simulate_mqarch, simulate_qhawkes_thinning,
    write_events_csv, Noise,
};
use mqarch::yulewalker::{write_diagnostics_csv, CalibrationOptions, Calibrator, Solver, Step};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

pub fn dispatch(section: &str, cfg: &RunConfig, out: &mut Staging) -> Result<(), CliError> {
    match section {
        "simulate" => simulate(cfg, out),
        "preprocess" => preprocess(cfg, out),
        "moments" => moments(cfg, out),
        "calibrate" => calibrate(cfg, out),
        "mle" => mle_refine(cfg, out),
        "factor" => factor(cfg, out),
        "report" => report(cfg, out),
        other => unreachable!("no command for section {other}"),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

/// Opens `path` and runs a library reader on it, naming the file in errors.
fn load<T>(
    path: &Path,
    f: impl FnOnce(BufReader<File>) -> mqarch::Result<T>,
) -> Result<T, CliError> {
    let r = open(path)?;
    f(r).map_err(|e| CliError::from(e).context(path.display()))
}

fn first_line(path: &Path) -> Result<String, CliError> {
    let mut line = String::new();
    open(path)?
        .read_line(&mut line)
        .map_err(|e| CliError::io(path, e))?;
    Ok(line.trim().to_string())
}

fn lib<T>(r: mqarch::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::from)
}

fn exec(cfg: &RunConfig) -> Result<Exec, CliError> {
    let workers: usize = cfg.parse_as("run", "workers")?;
    Ok(if workers == 1 {
        Exec::Sequential
    } else {
        Exec::Parallel
    })
}

fn write_key_values(
    out: &mut Staging,
    name: &str,
    rows: &[(String, String)],
) -> Result<(), CliError> {
    let mut text = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(text, "{k},{v}");
    }
    out.write_str(name, &text)
}

fn kv(k: impl Into<String>, v: impl ToString) -> (String, String) {
    (k.into(), v.to_string())
}

/// A kernel specification file in either of the two CSV layouts.
enum SpecFile {
    Process(PointProcessSpec),
    Model(ModelSpec),
}

fn load_spec(path: &Path) -> Result<SpecFile, CliError> {
    let header = first_line(path)?;
    if header.starts_with("kind,") {
        load(path, PointProcessSpec::read_csv).map(SpecFile::Process)
    } else if header.starts_with("kernel_name,") {
        load(path, ModelSpec::read_csv).map(SpecFile::Model)
    } else {
        Err(CliError::Data(format!(
            "{}: not a point-process or model CSV (header '{header}')",
            path.display()
        )))
    }
}

fn load_panel(cfg: &RunConfig, section: &str) -> Result<BinnedPanel, CliError> {
    let path = PathBuf::from(cfg.required(section, "panel")?);
    let bpd: usize = cfg.parse_as(section, "bins_per_day")?;
    load(&path, |r| BinnedPanel::read_csv(r, bpd))
}

fn simulate(cfg: &RunConfig, out: &mut Staging) -> Result<(), CliError> {
    let seed: u64 = cfg.parse_as("run", "seed")?;
    let spec = load_spec(Path::new(&cfg.required("simulate", "spec")?))?;
    let mode = cfg.get("simulate", "mode");
    let mut meta = vec![kv("mode", &mode), kv("seed", seed)];
    match mode.as_str() {
        "mqarch" => {
            let model = match spec {
                SpecFile::Process(p) => lib(ModelSpec::from_exponential(
                    &p,
                    cfg.parse_as("simulate", "q")?,
                    cfg.parse_as("simulate", "q_aux")?,
                ))?,
                SpecFile::Model(m) => m,
            };
            let bins: usize = cfg.parse_as("simulate", "bins")?;
            let rho: f64 = cfg.parse_as("simulate", "noise_correlation")?;
            let noise = if rho == 0.0 {
                Noise::Gaussian
            } else {
                Noise::CorrelatedGaussian(rho)
            };
            let sim = lib(simulate_mqarch(&model, bins, seed, noise))?;
            out.write("panel.csv", |w| lib(sim.write_csv(w)))?;
            out.write("model.csv", |w| lib(model.write_csv(w)))?;
            meta.extend([
                kv("n_assets", sim.n_assets),
                kv("n_bins", sim.n_bins),
                kv("floored", sim.floored),
            ]);
            let target = model.mean_squared_vol().ok();
            for a in 0..sim.n_assets {
                meta.push(kv(
                    format!("sample_mean_sigma2_{a}"),
                    sim.sigma2[a].iter().sum::<f64>() / sim.n_bins as f64,
                ));
                if let Some(t) = &target {
                    meta.push(kv(format!("model_mean_sigma2_{a}"), t[a]));
                }
            }
        }
        "thinning" => {
            let SpecFile::Process(p) = spec else {
                return Err(CliError::Config(
                    "thinning needs a point-process spec (kind,target,source,norm,rate)".into(),
                ));
            };
            let horizon: f64 = cfg.parse_as("simulate", "horizon")?;
            let th = lib(simulate_qhawkes_thinning(&p, horizon, seed))?;
            out.write("events.csv", |w| lib(write_events_csv(&th.streams, w)))?;
            out.write("spec.csv", |w| lib(p.write_csv(w)))?;
            meta.extend([
                kv("n_assets", p.n_assets()),
                kv("horizon", horizon),
                kv("candidates", th.candidates),
                kv("clamped", th.clamped),
            ]);
            let mut base = [0.0; 2];
            base[..p.n_assets()].copy_from_slice(&p.lambda_inf);
            let expected = mean_squared_vol(&p.norm_matrix(), &base).ok();
            for (a, s) in th.streams.iter().enumerate() {
                meta.push(kv(format!("events_{a}"), s.times.len()));
                meta.push(kv(format!("rate_{a}"), s.times.len() as f64 / horizon));
                if let Some(e) = expected {
                    meta.push(kv(format!("expected_rate_{a}"), e[a]));
                }
            }
            if let Some(bs) = cfg.optional::<f64>("simulate", "bin_size")? {
                let counts = lib(bin_event_streams(&th.streams, bs))?;
                out.write("counts.csv", |w| lib(counts.write_csv(w)))?;
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "simulate.mode must be mqarch or thinning, got '{other}'"
            )))
        }
    }
    write_key_values(out, "metadata.csv", &meta)
}

fn clock(cfg: &RunConfig, key: &str) -> Result<u32, CliError> {
    parse_clock(&cfg.get("preprocess", key))
        .map_err(|e| CliError::Config(format!("preprocess.{key}: {e}")))
}

fn preprocess(cfg: &RunConfig, out: &mut Staging) -> Result<(), CliError> {
    let input = PathBuf::from(cfg.required("preprocess", "input")?);
    let header = first_line(&input)?;
    let mut panel = if header.split(',').any(|h| h.trim() == "open") {
        let session = SessionConfig {
            session_start: clock(cfg, "session_start")?,
            session_end: clock(cfg, "session_end")?,
            bin_minutes: cfg.parse_as("preprocess", "bin_minutes")?,
        };
        let bars = load(&input, |r| read_ohlc_csv(r, &session))?;
        lib(ohlc_to_returns_vol(&bars))?
    } else {
        let bpd: usize = cfg.parse_as("preprocess", "bins_per_day")?;
        load(&input, |r| BinnedPanel::read_csv(r, bpd))?
    };
    let window: usize = cfg.parse_as("preprocess", "window_days")?;
    if window > 0 {
        panel = lib(normalize_trailing(&panel, window))?;
    }
    if cfg.flag("preprocess", "intraday")? {
        panel = lib(normalize_intraday(&panel))?;
    }
    if cfg.flag("preprocess", "martingalise")? {
        panel = lib(martingalise(&panel))?;
    }
    if cfg.flag("preprocess", "mirror")? {
        panel = mirror_augment(&panel);
    }
    out.write("panel.csv", |w| lib(panel.write_csv(w)))?;
    let mut text = String::from("asset,stage,days,bins_per_day,mean_sigma2,lag1_autocorrelation\n");
    for (a, name) in panel.assets.iter().enumerate() {
        let mean = panel.sigma2[a].iter().sum::<f64>() / panel.n_bins().max(1) as f64;
        let _ = writeln!(
            text,
            "{name},{},{},{},{mean},{}",
            panel.stage.as_str(),
            panel.n_days(),
            panel.bins_per_day,
            lag1_autocorrelation(&panel, a)
        );
    }
    out.write_str("summary.csv", &text)
}

/// `none`, `all`, or a comma list drawn from `c`, `d`, `dx_diag`, `v`.
fn smoothing(cfg: &RunConfig, section: &str) -> Result<Option<SmoothingConfig>, CliError> {
    let v = cfg.get(section, "smoothing");
    match v.trim() {
        "none" | "" => return Ok(None),
        "all" => return Ok(Some(SmoothingConfig::default())),
        _ => {}
    }
    let mut s = SmoothingConfig {
        c: false,
        d: false,
        dx_diag: false,
        v: false,
    };
    for part in v.split(',') {
        match part.trim() {
            "c" => s.c = true,
            "d" => s.d = true,
            "dx_diag" => s.dx_diag = true,
            "v" => s.v = true,
            other => {
                return Err(CliError::Config(format!(
                    "{section}.smoothing: unknown structure '{other}'"
                )))
            }
        }
    }
    Ok(Some(s))
}

fn estimator(cfg: &RunConfig, section: &str, max_lag: usize) -> Result<EstimatorConfig, CliError> {
    Ok(EstimatorConfig {
        max_lag,
        symmetrize: cfg.flag(section, "symmetrize")?,
        winsorize: cfg.optional(section, "winsorize")?,
        detect_mirror: true,
        exec: exec(cfg)?,
    })
}

fn estimate(
    panel: &BinnedPanel,
    est: &EstimatorConfig,
    smooth: Option<&SmoothingConfig>,
) -> Result<(CovarianceSuite, Vec<FitRecord>), CliError> {
    let suite = lib(estimate_suite(panel, est))?;
    match smooth {
        Some(s) => lib(smooth_suite(&suite, s)),
        None => Ok((suite, Vec::new())),
    }
}

fn moments(cfg: &RunConfig, out: &mut Staging) -> Result<(), CliError> {
    let mut panel = load_panel(cfg, "moments")?;
    if cfg.flag("moments", "mirror")? {
        panel = mirror_augment(&panel);
    }
    let est = estimator(cfg, "moments", cfg.parse_as("moments", "max_lag")?)?;
    let smooth = smoothing(cfg, "moments")?;
    let (suite, fits) = estimate(&panel, &est, smooth.as_ref())?;
    out.write("suite.csv", |w| lib(suite.write_csv(w)))?;
    if smooth.is_some() {
        out.write("fits.csv", |w| lib(write_fits_csv(&fits, w)))?;
    }
    Ok(())
}

fn parse_steps(text: &str) -> Result<Vec<Step>, CliError> {
    text.split(',')
        .map(|s| {
            let n: usize = s
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("calibrate.steps: bad step '{s}'")))?;
            lib(Step::from_number(n))
        })
        .collect()
}

fn calibration_options(cfg: &RunConfig) -> Result<CalibrationOptions, CliError> {
    let solver = match cfg.get("calibrate", "solver").as_str() {
        "gauss-seidel" => Solver::GaussSeidel,
        "joint" => Solver::Joint,
        other => {
            return Err(CliError::Config(format!(
                "calibrate.solver must be gauss-seidel or joint, got '{other}'"
            )))
        }
    };
    Ok(CalibrationOptions {
        q: cfg.parse_as("calibrate", "q")?,
        q_aux: cfg.parse_as("calibrate", "q_aux")?,
        ridge: cfg.parse_as("calibrate", "ridge")?,
        include_k_cross: cfg.flag("calibrate", "include_k_cross")?,
        solver,
        sweeps: cfg.parse_as("calibrate", "sweeps")?,
        tol: cfg.parse_as("calibrate", "tol")?,
        rank_one: cfg.flag("calibrate", "rank_one")?,
        leverage_quadratic_corrections: cfg.flag("calibrate", "leverage_corrections")?,
        exec: exec(cfg)?,
        ..Default::default()
    })
}

fn calibrate(cfg: &RunConfig, out: &mut Staging) -> Result<(), CliError> {
    let opts = calibration_options(cfg)?;
    let steps = parse_steps(&cfg.get("calibrate", "steps"))?;
    let panel = load_panel(cfg, "calibrate")?;
    let est = estimator(cfg, "calibrate", opts.q.max(opts.q_aux))?;
    let smooth = smoothing(cfg, "calibrate")?;
    let (raw, raw_fits) = estimate(&panel, &est, smooth.as_ref())?;
    // Steps 1 to 3 read the mirror-symmetrized suite, leverage the original.
    let mirrored = if cfg.flag("calibrate", "mirror")? {
        Some(estimate(&mirror_augment(&panel), &est, smooth.as_ref())?)
    } else {
        None
    };
    let (first, fits) = mirrored
        .as_ref()
        .map(|(s, f)| (s, f))
        .unwrap_or((&raw, &raw_fits));
    let mut cal = lib(Calibrator::new(first, opts))?;
    for &st in &steps {
        if st == Step::Leverage && mirrored.is_some() {
            lib(cal.switch_suite(&raw))?;
        }
        cal.run(st).map_err(|e| {
            CliError::from(e).context(format!("step {} ({})", st.number(), st.name()))
        })?;
    }
    let result = lib(cal.finish())?;
    out.write_str(
        "model.csv",
        &gated_model_csv(&result.model, &result.completed)?,
    )?;
    out.write("diagnostics.csv", |w| {
        lib(write_diagnostics_csv(&result.diagnostics, w))
    })?;
    out.write("suite.csv", |w| lib(first.write_csv(w)))?;
    if mirrored.is_some() {
        out.write("suite_unmirrored.csv", |w| lib(raw.write_csv(w)))?;
    }
    if smooth.is_some() {
        out.write("fits.csv", |w| lib(write_fits_csv(fits, w)))?;
    }
    out.write_str(
        "kernels.csv",
        &kernel_table(&result.model, Some(&result.completed)),
    )?;
    if cfg.flag("calibrate", "refine")? {
        let dt: f64 = cfg.parse_as("calibrate", "dt")?;
        let init = lib(warm_start(&result.model, dt))?;
        let problem = lib(MleProblem::new(
            MleMode::BinnedProxy,
            MleData::Proxy { panel, dt },
            &init,
            opts.exec,
        ))?;
        let fit = lib(maximize(&problem, &init, &MaximizeOptions::default()))?;
        if !fit.converged {
            log::warn!(
                "refinement stopped after {} iterations without converging",
                fit.iterations
            );
        }
        out.write("refined_fit.txt", |w| {
            lib(write_fit(&problem, &fit, None, w))
        })?;
        out.write("refined_spec.csv", |w| lib(fit.spec.write_csv(w)))?;
    }
    Ok(())
}

/// Model CSV holding only the grids estimated by `completed`: cross-asset
/// `φ` and `K` need step 2, `φ_×` and `K_×` step 3 and leverage step 4.
fn gated_model_csv(model: &ModelSpec, completed: &[Step]) -> Result<String, CliError> {
    let mut buf = Vec::new();
    lib(model.write_csv(&mut buf))?;
    let done = |s: Step| completed.contains(&s);
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let mut wr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    wr.write_record(rd.headers().map_err(csv_err)?)
        .map_err(csv_err)?;
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let keep = match &rec[0] {
            "phi" | "k" | "k_full" => rec[1] == rec[2] || done(Step::CrossFeedback),
            "leverage" => done(Step::Leverage),
            "phi_cross" | "k_cross" => done(Step::CrossCovariance),
            _ => true,
        };
        if keep {
            wr.write_record(&rec).map_err(csv_err)?;
        }
    }
    let bytes = wr.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Wide table with one row per lag and one column per kernel, for plotting.
/// With `completed`, grids of steps that did not run are left out.
fn kernel_table(model: &ModelSpec, completed: Option<&[Step]>) -> String {
    let done = |s: Step| completed.is_none_or(|c| c.contains(&s));
    let n = model.n_assets;
    let mut cols: Vec<(String, &KernelGrid)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && !done(Step::CrossFeedback) {
                continue;
            }
            cols.push((format!("phi_{i}_{j}"), &model.quad[i][j].diag));
            if let Some(k) = &model.quad[i][j].rank_one {
                cols.push((format!("k_{i}_{j}"), k));
            }
        }
    }
    if done(Step::Leverage) {
        for i in 0..n {
            for j in 0..n {
                cols.push((format!("leverage_{i}_{j}"), &model.leverage[i][j]));
            }
        }
    }
    if n == 2 && done(Step::CrossCovariance) {
        for i in 0..n {
            cols.push((format!("phi_cross_{i}"), &model.phi_cross[i]));
        }
    }
    let mut text = String::from("lag");
    for (name, _) in &cols {
        let _ = write!(text, ",{name}");
    }
    text.push('\n');
    for lag in 1..=model.q.max(model.q_aux) {
        let _ = write!(text, "{lag}");
        for (_, g) in &cols {
            match g.values.get(lag - 1) {
                Some(v) => {
                    let _ = write!(text, ",{v}");
                }
                None => text.push(','),
            }
        }
        text.push('\n');
    }
    text
}

fn mle_refine(cfg: &RunConfig, out: &mut Staging) -> Result<(), CliError> {
    let mode = MleMode::parse(&cfg.get("mle", "mode"))
        .map_err(|e| CliError::Config(format!("mle.mode: {e}")))?;
    let n_assets: usize = cfg.parse_as("mle", "n_assets")?;
    let dt: f64 = cfg.parse_as("mle", "dt")?;
    let init_path = PathBuf::from(cfg.required("mle", "init")?);
    let header = first_line(&init_path)?;
    let init = if header.starts_with("kind,") {
        load(&init_path, PointProcessSpec::read_csv)?
    } else if header.starts_with("kernel_name,") {
        let model = load(&init_path, ModelSpec::read_csv)?;
        lib(warm_start(&model, dt))?
    } else {
        load(&init_path, |r| read_spec_kv(r, n_assets))?
    };
    let data = match mode {
        MleMode::BinnedProxy => MleData::Proxy {
            panel: load_panel(cfg, "mle")?,
            dt,
        },
        _ => {
            let horizon: f64 = cfg
                .optional("mle", "horizon")?
                .ok_or_else(|| CliError::Config("mle.horizon is required for event data".into()))?;
            let path = PathBuf::from(cfg.required("mle", "events")?);
            MleData::Events(load(&path, |r| read_events_csv(r, horizon, n_assets))?)
        }
    };
    let problem = lib(MleProblem::new(mode, data, &init, exec(cfg)?))?;
    let opts = MaximizeOptions {
        max_iter: cfg.parse_as("mle", "max_iter")?,
        grad_tol: cfg.parse_as("mle", "grad_tol")?,
        ..Default::default()
    };
    let fit = lib(maximize(&problem, &init, &opts))?;
    if !fit.converged {
        log::warn!(
            "maximization stopped after {} iterations without converging",
            fit.iterations
        );
    }
    let se = if cfg.flag("mle", "standard_errors")? {
        match fisher_standard_errors(&problem, &fit.theta) {
            Ok(se) => Some(se),
            Err(e) => {
                log::warn!("standard errors unavailable: {e}");
                None
            }
        }
    } else {
        None
    };
    out.write("fit.txt", |w| {
        lib(write_fit(&problem, &fit, se.as_deref(), w))
    })?;
    out.write("spec.csv", |w| lib(fit.spec.write_csv(w)))?;
    out.write("init_spec.csv", |w| lib(init.write_csv(w)))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !name.starts_with('.')
}

/// One manifest row.
struct Stock {
    name: String,
    sector: String,
    panel: PathBuf,
}

/// Reads a manifest with a `ticker` (or `name`) column, a `panel` column and
/// an optional `sector` column; relative panel paths are taken from the
/// manifest's directory.
fn read_manifest(path: &Path) -> Result<Vec<Stock>, CliError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rd = csv::Reader::from_reader(open(path)?);
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let headers = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let (Some(name_col), Some(panel_col)) = (col(&["ticker", "name"]), col(&["panel"])) else {
        return Err(bad(format!(
            "expected columns ticker,panel[,sector], got {:?}",
            headers
        )));
    };
    let sector_col = col(&["sector"]);
    let mut rows: Vec<Stock> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let name = rec[name_col].trim().to_string();
        if !valid_name(&name) {
            return Err(bad(format!(
                "stock name '{name}' must use letters, digits, '_', '-' or '.'"
            )));
        }
        if rows.iter().any(|s| s.name == name) {
            return Err(bad(format!("stock '{name}' listed twice")));
        }
        let sector = sector_col
            .and_then(|c| rec.get(c))
            .map(|s| s.trim().to_string())
            .unwrap_or_default();
        if sector.contains([',', '"', '\n']) {
            return Err(bad(format!("sector of '{name}' contains a separator")));
        }
        rows.push(Stock {
            name,
            sector,
            panel: base.join(rec[panel_col].trim()),
        });
    }
    Ok(rows)
}

fn factor(cfg: &RunConfig, out: &mut Staging) -> Result<(), CliError> {
    let manifest = read_manifest(Path::new(&cfg.required("factor", "manifest")?))?;
    if manifest.is_empty() {
        return Err(CliError::Config("factor manifest lists no stocks".into()));
    }
    let bpd: usize = cfg.parse_as("factor", "bins_per_day")?;
    let one_asset = |path: &Path| -> Result<BinnedPanel, CliError> {
        let p = load(path, |r| BinnedPanel::read_csv(r, bpd))?;
        if p.n_assets() != 1 {
            return Err(CliError::Data(format!(
                "{}: expected one asset, found {}",
                path.display(),
                p.n_assets()
            )));
        }
        Ok(p)
    };
    let factor_panel = one_asset(Path::new(&cfg.required("factor", "factor")?))?;
    let mut stocks = BinnedPanel {
        assets: Vec::new(),
        returns: Vec::new(),
        sigma2: Vec::new(),
        ..factor_panel.clone()
    };
    for Stock {
        name, panel: path, ..
    } in &manifest
    {
        let p = one_asset(path)?;
        if p.dates != factor_panel.dates {
            return Err(CliError::Data(format!(
                "{}: dates differ from the factor panel",
                path.display()
            )));
        }
        stocks.assets.push(name.clone());
        stocks.returns.extend(p.returns);
        stocks.sigma2.extend(p.sigma2);
    }
    let exec = exec(cfg)?;
    let opts = FactorOptions {
        calibration: CalibrationOptions {
            q: cfg.parse_as("factor", "q")?,
            q_aux: cfg.parse_as("factor", "q_aux")?,
            exec,
            ..Default::default()
        },
        estimator: EstimatorConfig {
            exec,
            ..Default::default()
        },
        leverage: cfg.flag("factor", "leverage")?,
    };
    let fm = lib(calibrate_factor_model(&stocks, &factor_panel, &opts))?;
    let names: Vec<String> = manifest.iter().map(|s| s.name.clone()).collect();
    for (name, m) in names.iter().zip(&fm.stock_models) {
        out.write(&format!("spec_{name}.csv"), |w| lib(m.write_csv(w)))?;
    }
    out.write("factor_model.csv", |w| lib(fm.factor_model.write_csv(w)))?;
    let mut betas = String::from("stock,sector,beta\n");
    for (s, b) in manifest.iter().zip(&fm.decomposition.beta) {
        let _ = writeln!(betas, "{},{},{b}", s.name, s.sector);
    }
    out.write_str("betas.csv", &betas)?;
    let summary = lib(cross_section_aggregate(&fm.stock_models, &names))?;
    out.write("norms.csv", |w| lib(write_norms_csv(&summary.norms, w)))?;
    out.write("profiles.csv", |w| lib(write_profiles_csv(&summary, w)))
}

fn report(cfg: &RunConfig, out: &mut Staging) -> Result<(), CliError> {
    let model = load(
        Path::new(&cfg.required("report", "model")?),
        ModelSpec::read_csv,
    )?;
    out.write_str("kernels.csv", &kernel_table(&model, None))?;
    let n = model.n_assets;
    let nm = model.norm_matrix();
    let mut rows = vec![
        kv("n_assets", n),
        kv("q", model.q),
        kv("q_aux", model.q_aux),
    ];
    for i in 0..n {
        rows.push(kv(format!("sigma_inf_sq_{i}"), model.sigma_inf_sq[i]));
        for j in 0..n {
            rows.push(kv(format!("norm_{i}_{j}"), nm[i][j]));
            if let Some(k) = &model.quad[i][j].rank_one {
                rows.push(kv(format!("k_squared_norm_{i}_{j}"), k.squared_norm()));
            }
        }
    }
    rows.push(kv("spectral_radius", spectral_radius(&nm)));
    rows.push(kv(
        "endogeneity_max",
        (0..n).map(|i| nm[i][i]).fold(f64::NEG_INFINITY, f64::max),
    ));
    match model.mean_squared_vol() {
        Ok(m) => rows.extend(
            m.iter()
                .enumerate()
                .map(|(i, v)| kv(format!("mean_squared_vol_{i}"), v)),
        ),
        Err(e) => log::warn!("no stationary mean: {e}"),
    }
    write_key_values(out, "summary.csv", &rows)?;
    let mut fits = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let g = &model.quad[i][j];
            for (name, grid) in [("phi", Some(&g.diag)), ("k", g.rank_one.as_ref())] {
                let Some(grid) = grid else { continue };
                if grid.values.iter().all(|v| *v == 0.0) {
                    continue;
                }
                match fit_smooth(&grid.values, FitFamily::Exp) {
                    Ok(fit) => fits.push(FitRecord {
                        structure: name.to_string(),
                        i,
                        j,
                        fit,
                    }),
                    Err(e) => log::warn!("exponential fit of {name}_{i}_{j} failed: {e}"),
                }
            }
        }
    }
    out.write("fits.csv", |w| lib(write_fits_csv(&fits, w)))
}
