//! Method-of-moments recovery of MQARCH kernels from a covariance suite.
//!
//! Calibration runs in four steps, each building on the previous ones:
//!
//! 1. [`Step::SelfFeedback`]: `φ^j_j` and `K^j_j` for every asset;
//! 2. [`Step::CrossFeedback`]: adds `φ^j_j̄` and `K^j_j̄`;
//! 3. [`Step::CrossCovariance`]: adds `φ^j_×` (and optionally `K^j_×`);
//! 4. [`Step::Leverage`]: the linear kernels `L^j_i`, solved per lag.
//!
//! Steps 2 and 3 only apply to two assets. Within a step the unknown blocks
//! of a target are coupled; [`Solver::GaussSeidel`] iterates block solves
//! against cached factorizations and [`Solver::Joint`] factors the whole
//! system at once. Both reach the same least-squares fixed point for square
//! systems.

mod builders;
mod system;

pub use builders::{
    a1_rect, a2_rect, a3_rect, a4_rect, a5_rect, build_a1, build_a2, build_a3, build_a4, build_a5,
    causal,
};
pub use system::{RowLabel, UnknownLabel};

use crate::error::{Error, Result};
use crate::exec::{map_range, Exec};
use crate::linalg::{symmetric_eigen_desc, LeastSquares};
use crate::model::{
    baseline_from_mean, n_pairs, pair_index, spectral_radius, KernelGrid, ModelSpec, SquareTable,
    UpperTriangle,
};
use crate::moments::{rank_one_approx_with, CovarianceSuite, DEFAULT_REFINE_ITERS};
use nalgebra::{DMatrix, DVector};
use std::io::Write;
use system::{hstack, vstack, Blocks};

/// Calibration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    SelfFeedback,
    CrossFeedback,
    CrossCovariance,
    Leverage,
}

impl Step {
    pub const ALL: [Step; 4] = [
        Step::SelfFeedback,
        Step::CrossFeedback,
        Step::CrossCovariance,
        Step::Leverage,
    ];

    /// One-based step number.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn from_number(n: usize) -> Result<Self> {
        Step::ALL.get(n.wrapping_sub(1)).copied().ok_or_else(|| {
            Error::InvalidInput(format!("calibration steps are numbered 1 to 4, got {n}"))
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Step::SelfFeedback => "self-feedback",
            Step::CrossFeedback => "cross-feedback",
            Step::CrossCovariance => "cross-covariance",
            Step::Leverage => "leverage",
        }
    }

    fn applies_to(self, n_assets: usize) -> bool {
        n_assets == 2 || matches!(self, Step::SelfFeedback | Step::Leverage)
    }
}

/// How coupled unknown blocks are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    #[default]
    GaussSeidel,
    Joint,
}

/// Calibration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Grid of `φ` and `K`.
    pub q: usize,
    /// Grid of `L`, `φ_×` and `K_×`.
    pub q_aux: usize,
    /// Tikhonov weight `λ` in `‖Ax − b‖² + λ‖x‖²`.
    pub ridge: f64,
    /// Estimate `K_×` in step 3; otherwise it is fixed at zero.
    pub include_k_cross: bool,
    /// Solve the cross block in step 3; when off, `φ_×` and `K_×` stay zero
    /// and step 3 only marks its place in the order.
    pub cross_block: bool,
    pub solver: Solver,
    /// Gauss-Seidel sweep limit for coupled steps.
    pub sweeps: usize,
    /// Sweeps stop once the largest change is below `tol·(1 + max |x|)`.
    pub tol: f64,
    /// Attach a rank-one factor `k̃` to each estimated `K`.
    pub rank_one: bool,
    pub rank_one_iters: usize,
    /// Subtract the `K` and `K_×` terms from `V` before solving for `L`.
    pub leverage_quadratic_corrections: bool,
    pub exec: Exec,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            q: 50,
            q_aux: 30,
            ridge: 0.0,
            include_k_cross: false,
            cross_block: true,
            solver: Solver::GaussSeidel,
            sweeps: 100,
            tol: 1e-10,
            rank_one: true,
            rank_one_iters: DEFAULT_REFINE_ITERS,
            leverage_quadratic_corrections: false,
            exec: Exec::default(),
        }
    }
}

/// Solver report for one step and target.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: Step,
    pub target: usize,
    pub sweeps: usize,
    pub converged: bool,
    /// Largest condition estimate among the factorizations used.
    pub max_condition: f64,
    /// `‖Ax − b‖ / ‖b‖` over the rows of the step; zero when `b = 0`.
    pub residual: f64,
}

/// A fully assembled system for one target and step.
#[derive(Debug, Clone)]
pub struct YWBlockSystem {
    pub step: Step,
    pub target: usize,
    pub design: DMatrix<f64>,
    pub rhs: Vec<f64>,
    pub rows: Vec<RowLabel>,
    pub unknowns: Vec<UnknownLabel>,
}

impl YWBlockSystem {
    pub fn solve(&self, ridge: f64) -> Result<Vec<f64>> {
        LeastSquares::new(self.design.clone(), ridge)?.solve(&self.rhs)
    }
}

/// Output of a calibration run.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: ModelSpec,
    pub completed: Vec<Step>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Stateful calibration that can be advanced one step at a time.
pub struct Calibrator<'a> {
    suite: &'a CovarianceSuite,
    opts: CalibrationOptions,
    blocks: Blocks,
    probe_ls: Vec<Option<LeastSquares>>,
    x_ls: Vec<Option<LeastSquares>>,
    /// `quad[j][i] = [φ^j_i, K^j_i]`.
    quad: Vec<Vec<Vec<f64>>>,
    /// `cross[j] = [φ^j_×, K^j_×]`.
    cross: Vec<Vec<f64>>,
    /// `leverage[j][i]` on `1..=q_aux`.
    leverage: Vec<Vec<Vec<f64>>>,
    completed: Vec<Step>,
    diagnostics: Vec<StepDiagnostics>,
}

fn dv(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn max_abs(x: impl Iterator<Item = f64>) -> f64 {
    x.fold(0.0, |m, v| m.max(v.abs()))
}

impl<'a> Calibrator<'a> {
    pub fn new(suite: &'a CovarianceSuite, opts: CalibrationOptions) -> Result<Self> {
        let n = suite.n_assets;
        if n != 1 && n != 2 {
            return Err(Error::InvalidInput(format!(
                "calibration supports one or two assets, got {n}"
            )));
        }
        if opts.q == 0 || opts.q_aux == 0 {
            return Err(Error::InvalidInput("q and q_aux must be at least 1".into()));
        }
        let need = opts.q.max(opts.q_aux);
        if suite.max_lag < need {
            return Err(Error::InvalidInput(format!(
                "covariance suite has max lag {} but the kernel grids need {need}",
                suite.max_lag
            )));
        }
        if opts.sweeps == 0 || !(opts.tol > 0.0) {
            return Err(Error::InvalidInput(
                "sweeps must be >= 1 and tol > 0".into(),
            ));
        }
        let k_cross = opts.include_k_cross && n == 2;
        let blocks = Blocks::build(suite, opts.q, opts.q_aux, k_cross, opts.exec);
        let (ql, xl) = (blocks.quad_len(), if n == 2 { blocks.x_len() } else { 0 });
        Ok(Self {
            suite,
            opts,
            blocks,
            probe_ls: (0..n).map(|_| None).collect(),
            x_ls: (0..n).map(|_| None).collect(),
            quad: vec![vec![vec![0.0; ql]; n]; n],
            cross: vec![vec![0.0; xl]; n],
            leverage: vec![vec![vec![0.0; opts.q_aux]; n]; n],
            completed: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn options(&self) -> &CalibrationOptions {
        &self.opts
    }

    pub fn completed(&self) -> &[Step] {
        &self.completed
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    /// Makes later steps read `suite`. Systems already assembled keep the
    /// earlier suite; this lets steps 1 to 3 run on a mirror-symmetrized
    /// suite and step 4 on the original one.
    pub fn switch_suite(&mut self, suite: &'a CovarianceSuite) -> Result<()> {
        let s = self.suite;
        if suite.n_assets != s.n_assets || suite.max_lag != s.max_lag {
            return Err(Error::InvalidInput(format!(
                "replacement suite has {} assets and max lag {}, expected {} and {}",
                suite.n_assets, suite.max_lag, s.n_assets, s.max_lag
            )));
        }
        self.suite = suite;
        Ok(())
    }

    fn check_order(&self, step: Step) -> Result<()> {
        let n = self.suite.n_assets;
        for prior in Step::ALL.iter().filter(|s| **s < step && s.applies_to(n)) {
            if !self.completed.contains(prior) {
                return Err(Error::StepOrder(format!(
                    "step {} ({}) requires step {} ({}) first",
                    step.number(),
                    step.name(),
                    prior.number(),
                    prior.name()
                )));
            }
        }
        Ok(())
    }

    /// Runs one step. Steps 2 and 3 are no-ops for one asset.
    pub fn run(&mut self, step: Step) -> Result<()> {
        self.check_order(step)?;
        if step == Step::Leverage {
            self.run_leverage()?;
        } else if !step.applies_to(self.suite.n_assets) {
            log::info!(
                "step {} ({}) does not apply to one asset; skipped",
                step.number(),
                step.name()
            );
        } else if step == Step::CrossCovariance && !self.opts.cross_block {
            log::info!(
                "step 3 ({}) skipped; the cross block is excluded",
                step.name()
            );
        } else {
            match self.opts.solver {
                Solver::GaussSeidel => self.run_gauss_seidel(step)?,
                Solver::Joint => self.run_joint(step)?,
            }
        }
        if !self.completed.contains(&step) {
            self.completed.push(step);
        }
        Ok(())
    }

    fn ensure_factorizations(&mut self, with_x: bool) -> Result<()> {
        let (blocks, ridge, exec) = (&self.blocks, self.opts.ridge, self.opts.exec);
        let n = blocks.n;
        let missing: Vec<usize> = (0..n).filter(|l| self.probe_ls[*l].is_none()).collect();
        let made = map_range(exec, missing.len(), |k| {
            LeastSquares::new(blocks.g[missing[k]][missing[k]].clone(), ridge)
        });
        for (l, ls) in missing.into_iter().zip(made) {
            self.probe_ls[l] = Some(ls?);
        }
        if with_x {
            let missing: Vec<usize> = (0..n).filter(|j| self.x_ls[*j].is_none()).collect();
            let made = map_range(exec, missing.len(), |k| {
                LeastSquares::new(blocks.xx[missing[k]].clone(), ridge)
            });
            for (j, ls) in missing.into_iter().zip(made) {
                self.x_ls[j] = Some(ls?);
            }
        }
        Ok(())
    }

    fn solve_self(&self, j: usize, quad: &[Vec<f64>], cross: &[f64]) -> Result<Vec<f64>> {
        let b = &self.blocks;
        let mut rhs = dv(&b.rhs_probe[j][j]);
        if b.n == 2 {
            rhs -= &b.g[j][1 - j] * dv(&quad[1 - j]);
            rhs -= &b.h[j] * dv(cross);
        }
        self.probe_ls[j]
            .as_ref()
            .expect("factorized")
            .solve(rhs.as_slice())
    }

    fn solve_cross(&self, j: usize, quad: &[Vec<f64>], cross: &[f64]) -> Result<Vec<f64>> {
        let b = &self.blocks;
        let jb = 1 - j;
        let mut rhs = dv(&b.rhs_probe[j][jb]);
        rhs -= &b.g[jb][j] * dv(&quad[j]);
        rhs -= &b.h[jb] * dv(cross);
        self.probe_ls[jb]
            .as_ref()
            .expect("factorized")
            .solve(rhs.as_slice())
    }

    fn solve_x(&self, j: usize, quad: &[Vec<f64>]) -> Result<Vec<f64>> {
        let b = &self.blocks;
        let mut rhs = dv(&b.rhs_x[j]);
        rhs -= &b.xs[j][j] * dv(&quad[j]);
        rhs -= &b.xs[j][1 - j] * dv(&quad[1 - j]);
        self.x_ls[j]
            .as_ref()
            .expect("factorized")
            .solve(rhs.as_slice())
    }

    /// Relative residual of the rows of `step` for target `j`.
    fn residual(&self, step: Step, j: usize, quad: &[Vec<f64>], cross: &[f64]) -> f64 {
        let b = &self.blocks;
        let sources = self.sources(step, j);
        let mut num = 0.0;
        let mut den = 0.0;
        let mut add = |r: DVector<f64>, rhs: &[f64]| {
            num += (r - dv(rhs)).norm_squared();
            den += rhs.iter().map(|v| v * v).sum::<f64>();
        };
        for &l in &sources {
            let mut r = DVector::zeros(b.rhs_probe[j][l].len());
            for &i in &sources {
                r += &b.g[l][i] * dv(&quad[i]);
            }
            if step == Step::CrossCovariance {
                r += &b.h[l] * dv(cross);
            }
            add(r, &b.rhs_probe[j][l]);
        }
        if step == Step::CrossCovariance {
            let mut r = &b.xx[j] * dv(cross);
            for &i in &sources {
                r += &b.xs[j][i] * dv(&quad[i]);
            }
            add(r, &b.rhs_x[j]);
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }

    fn sources(&self, step: Step, j: usize) -> Vec<usize> {
        if step == Step::SelfFeedback || self.blocks.n == 1 {
            vec![j]
        } else {
            vec![j, 1 - j]
        }
    }

    fn run_gauss_seidel(&mut self, step: Step) -> Result<()> {
        let with_x = step == Step::CrossCovariance;
        self.ensure_factorizations(with_x)?;
        let n = self.blocks.n;
        let this = &*self;
        let results = map_range(this.opts.exec, n, |j| this.gauss_seidel_target(step, j));
        for (j, r) in results.into_iter().enumerate() {
            let (quad, cross, diag) = r?;
            self.quad[j] = quad;
            self.cross[j] = cross;
            self.diagnostics.push(diag);
        }
        Ok(())
    }

    fn gauss_seidel_target(
        &self,
        step: Step,
        j: usize,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>, StepDiagnostics)> {
        let mut quad = self.quad[j].clone();
        let mut cross = self.cross[j].clone();
        let coupled = step != Step::SelfFeedback;
        let limit = if coupled { self.opts.sweeps } else { 1 };
        let mut converged = !coupled;
        let mut used = 0;
        let (mut first_change, mut change) = (f64::NAN, 0.0);
        for _ in 0..limit {
            let before: Vec<f64> = quad.iter().flatten().chain(cross.iter()).copied().collect();
            if step == Step::CrossCovariance {
                cross = self.solve_x(j, &quad)?;
            }
            quad[j] = self.solve_self(j, &quad, &cross)?;
            if coupled {
                quad[1 - j] = self.solve_cross(j, &quad, &cross)?;
            }
            used += 1;
            if coupled {
                let after = quad.iter().flatten().chain(cross.iter());
                change = max_abs(after.clone().zip(&before).map(|(a, b)| a - b));
                if used == 1 {
                    first_change = change;
                }
                if change <= self.opts.tol * (1.0 + max_abs(after.copied())) {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            log::warn!(
                "step {} target {j}: Gauss-Seidel stopped after {used} sweeps without converging",
                step.number()
            );
        }
        // Sweeps that grow instead of shrinking mean the block iteration
        // diverges for this system, so the coupled rows are solved at once.
        if !converged && (!change.is_finite() || change > first_change) {
            log::warn!(
                "step {} target {j}: Gauss-Seidel diverged; using the joint solve",
                step.number()
            );
            let sys = self.system(step, j)?;
            let x = LeastSquares::new(sys.design, self.opts.ridge)?.solve(&sys.rhs)?;
            let ql = self.blocks.quad_len();
            let sources = self.sources(step, j);
            for (k, &i) in sources.iter().enumerate() {
                quad[i] = x[k * ql..(k + 1) * ql].to_vec();
            }
            if step == Step::CrossCovariance {
                cross = x[sources.len() * ql..].to_vec();
            }
        }
        let mut max_condition = self.probe_ls[j].as_ref().map_or(0.0, |ls| ls.cond());
        if coupled {
            max_condition =
                max_condition.max(self.probe_ls[1 - j].as_ref().map_or(0.0, |ls| ls.cond()));
        }
        if step == Step::CrossCovariance {
            max_condition = max_condition.max(self.x_ls[j].as_ref().map_or(0.0, |ls| ls.cond()));
        }
        let residual = self.residual(step, j, &quad, &cross);
        Ok((
            quad,
            cross,
            StepDiagnostics {
                step,
                target: j,
                sweeps: used,
                converged,
                max_condition,
                residual,
            },
        ))
    }

    fn run_joint(&mut self, step: Step) -> Result<()> {
        let n = self.blocks.n;
        let this = &*self;
        let results = map_range(this.opts.exec, n, |j| -> Result<_> {
            let sys = this.system(step, j)?;
            let ls = LeastSquares::new(sys.design, this.opts.ridge)?;
            Ok((ls.solve(&sys.rhs)?, ls.cond()))
        });
        let ql = self.blocks.quad_len();
        for (j, r) in results.into_iter().enumerate() {
            let (x, cond) = r?;
            let sources = self.sources(step, j);
            for (k, &i) in sources.iter().enumerate() {
                self.quad[j][i] = x[k * ql..(k + 1) * ql].to_vec();
            }
            if step == Step::CrossCovariance {
                self.cross[j] = x[sources.len() * ql..].to_vec();
            }
            let residual = self.residual(step, j, &self.quad[j], &self.cross[j]);
            self.diagnostics.push(StepDiagnostics {
                step,
                target: j,
                sweeps: 1,
                converged: true,
                max_condition: cond,
                residual,
            });
        }
        Ok(())
    }

    /// The full coupled system of `step` for target `j`, with unknowns
    /// ordered own source first, then the other source, then the cross block.
    pub fn system(&self, step: Step, j: usize) -> Result<YWBlockSystem> {
        let b = &self.blocks;
        if j >= b.n {
            return Err(Error::InvalidInput(format!("target {j} out of range")));
        }
        if step == Step::Leverage {
            return Err(Error::InvalidInput(
                "leverage is solved lag by lag, not as a block system".into(),
            ));
        }
        if !step.applies_to(b.n) {
            return Err(Error::InvalidInput(format!(
                "step {} needs two assets",
                step.number()
            )));
        }
        let sources = self.sources(step, j);
        let with_x = step == Step::CrossCovariance;
        let mut row_blocks = Vec::new();
        let mut rhs = Vec::new();
        let mut rows = Vec::new();
        for &l in &sources {
            let mut parts: Vec<&DMatrix<f64>> = sources.iter().map(|&i| &b.g[l][i]).collect();
            if with_x {
                parts.push(&b.h[l]);
            }
            row_blocks.push(hstack(&parts));
            rhs.extend_from_slice(&b.rhs_probe[j][l]);
            rows.extend(b.probe_rows(l));
        }
        if with_x {
            let mut parts: Vec<&DMatrix<f64>> = sources.iter().map(|&i| &b.xs[j][i]).collect();
            parts.push(&b.xx[j]);
            row_blocks.push(hstack(&parts));
            rhs.extend_from_slice(&b.rhs_x[j]);
            rows.extend(b.x_rows());
        }
        let mut unknowns: Vec<UnknownLabel> =
            sources.iter().flat_map(|&i| b.source_unknowns(i)).collect();
        if with_x {
            unknowns.extend(b.x_unknowns());
        }
        let design = vstack(&row_blocks.iter().collect::<Vec<_>>());
        Ok(YWBlockSystem {
            step,
            target: j,
            design,
            rhs,
            rows,
            unknowns,
        })
    }

    fn run_leverage(&mut self) -> Result<()> {
        let s = self.suite;
        let n = s.n_assets;
        let sigma = DMatrix::from_fn(n, n, |l, i| s.return_moment(l, i));
        let (vals, _) = symmetric_eigen_desc(sigma.clone());
        let top = vals[0].abs();
        if !(top > 0.0) || !(vals[n - 1] > 1e-12 * top) {
            return Err(Error::SingularCorrelation(format!(
                "equal-time return moments have eigenvalues {vals:?}"
            )));
        }
        let lu = sigma.lu();
        for j in 0..n {
            for tau in 1..=self.opts.q_aux {
                let vt = DVector::from_fn(n, |l, _| self.v_tilde(j, l, tau));
                let l_vec = lu
                    .solve(&vt)
                    .ok_or_else(|| Error::SingularCorrelation("LU solve failed".into()))?;
                for i in 0..n {
                    self.leverage[j][i][tau - 1] = l_vec[i];
                }
            }
        }
        let residual = 0.0;
        let cond = top / vals[n - 1];
        for j in 0..n {
            self.diagnostics.push(StepDiagnostics {
                step: Step::Leverage,
                target: j,
                sweeps: 1,
                converged: true,
                max_condition: cond,
                residual,
            });
        }
        Ok(())
    }

    /// `V_jl(τ)` minus the quadratic contributions of the estimated kernels.
    fn v_tilde(&self, j: usize, l: usize, tau: usize) -> f64 {
        let s = self.suite;
        let (n, q, qa) = (s.n_assets, self.opts.q, self.opts.q_aux);
        let mut v = s.v(j, l, tau);
        for i in 0..n {
            let phi = &self.quad[j][i][..q];
            for m in 1..=q.min(tau) {
                v -= s.vr(i, i, l, tau - m) * phi[m - 1];
            }
        }
        if n == 2 {
            let px = &self.cross[j][..qa];
            for m in 1..=tau {
                v -= s.vr(0, 1, l, tau - m) * px[m - 1];
            }
        }
        if self.opts.leverage_quadratic_corrections {
            for i in 0..n {
                let kq = &self.quad[j][i][q..];
                for b in (tau + 1)..=q {
                    v -= 2.0 * s.vr(i, l, i, b - tau) * kq[pair_index(tau, b, q)];
                }
            }
            if n == 2 && self.blocks.k_cross {
                let jb = 1 - j;
                let kx = &self.cross[j][qa..];
                let np = n_pairs(qa);
                for b in (tau + 1)..=qa {
                    let p = pair_index(tau, b, qa);
                    v -= s.vr(j, l, jb, b - tau) * kx[p];
                    v -= s.vr(jb, l, j, b - tau) * kx[np + p];
                }
            }
        }
        v
    }

    /// Assembles the calibrated model from the completed steps.
    pub fn finish(self) -> Result<Calibration> {
        let s = self.suite;
        let (n, q, qa) = (s.n_assets, self.opts.q, self.opts.q_aux);
        let mut m = ModelSpec::zeros(n, q, qa);
        let has = |st: Step| self.completed.contains(&st);
        for j in 0..n {
            for i in 0..n {
                let x = &self.quad[j][i];
                let g = &mut m.quad[j][i];
                g.diag = KernelGrid {
                    values: x[..q].to_vec(),
                };
                if has(Step::SelfFeedback) && q > 1 {
                    let upper = UpperTriangle::from_packed(q, x[q..].to_vec())?;
                    if self.opts.rank_one {
                        let r1 = rank_one_approx_with(&upper.to_dense(), self.opts.rank_one_iters)?;
                        g.rank_one = Some(KernelGrid { values: r1.k });
                    }
                    g.full_upper = Some(upper);
                }
                m.leverage[j][i] = KernelGrid {
                    values: self.leverage[j][i].clone(),
                };
            }
            if n == 2 {
                m.phi_cross[j] = KernelGrid {
                    values: self.cross[j][..qa].to_vec(),
                };
                if self.blocks.k_cross && has(Step::CrossCovariance) {
                    let mut t = SquareTable::zeros(qa);
                    let np = n_pairs(qa);
                    for (p, (a, b)) in crate::model::pairs(qa).into_iter().enumerate() {
                        t.set(a, b, self.cross[j][qa + p]);
                        t.set(b, a, self.cross[j][qa + np + p]);
                    }
                    m.k_cross[j] = Some(t);
                }
            }
        }
        let norms = m.norm_matrix();
        let radius = spectral_radius(&norms);
        if radius >= 1.0 {
            log::warn!("calibrated feedback has spectral radius {radius:.4} >= 1; the model is not stationary");
        }
        let mut mean = [0.0; 2];
        mean[..n].copy_from_slice(&s.mean_sigma2);
        let base = baseline_from_mean(&norms, &mean);
        m.sigma_inf_sq = base[..n].to_vec();
        if m.sigma_inf_sq.iter().any(|v| *v < 0.0) {
            log::warn!("calibrated baseline {:?} is negative", m.sigma_inf_sq);
        }
        m.equal_time_cov = s.equal_time_cov();
        Ok(Calibration {
            model: m,
            completed: self.completed,
            diagnostics: self.diagnostics,
        })
    }
}

/// Runs `steps` in order on `suite`.
pub fn calibrate(
    suite: &CovarianceSuite,
    opts: &CalibrationOptions,
    steps: &[Step],
) -> Result<Calibration> {
    let mut c = Calibrator::new(suite, *opts)?;
    for &st in steps {
        c.run(st)?;
    }
    c.finish()
}

/// Writes diagnostics as `step,target,sweeps,converged,max_condition,residual`.
pub fn write_diagnostics_csv<W: Write>(diags: &[StepDiagnostics], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "step",
        "target",
        "sweeps",
        "converged",
        "max_condition",
        "residual",
    ])?;
    for d in diags {
        wr.write_record([
            d.step.number().to_string(),
            d.target.to_string(),
            d.sweeps.to_string(),
            d.converged.to_string(),
            d.max_condition.to_string(),
            d.residual.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
