//! End-to-end mass comparison: solve `(P_h)` and `(P_h^#)`, build the mass
//! functions and check `∫₀ˢ u_j* ≤ ∫₀ˢ v_j*` with an explicit slack budget.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::forcing::Forcing;
use crate::grid::{make_ball_grid, make_disk_grid, make_interval_grid, make_square_grid, CellGrid, Grading, RadialGrid, Shape, SliceStack};
use crate::nonlinearity::{moreau_yosida, Flux, Nonlinearity};
use crate::rearrange::{steiner_rearrangement, MassFunction};
use crate::solver::{
    discrete_h1_norm, l1_distance, slice_lq, solve_ph, solve_ph_symmetrized, DiscreteProblem, DiscreteSolution,
    SolverError, SolverOptions,
};
use crate::star::{
    comparison_chain_defect, slice_masses, slice_masses_reconstructed, solve_star_system, subsolution_residual, StarOperator, StarSystem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Grid,
    Forcing,
    Regularize,
    Solve,
    Symmetrize,
    SolveSymmetrized,
    MassFunctions,
    StarSystem,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(stage_name(*self))
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Grid => "grid",
        Stage::Forcing => "forcing",
        Stage::Regularize => "regularize",
        Stage::Solve => "solve",
        Stage::Symmetrize => "symmetrize",
        Stage::SolveSymmetrized => "solve_symmetrized",
        Stage::MassFunctions => "mass_functions",
        Stage::StarSystem => "star_system",
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

fn tag<E: fmt::Display>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError { stage, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularize {
    /// Only when the law has no ellipticity bound (e.g. `p ≠ 2`).
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resolution {
    /// Cells per axis of the cross-section grid.
    pub cells: usize,
    /// Interior slices `N`.
    pub slices: usize,
    /// Intervals of the s-grid.
    pub s_intervals: usize,
}

impl Resolution {
    /// The resolution used when a run does not set one.
    pub fn default_for(dim: usize) -> Self {
        if dim == 1 {
            Self { cells: 64, slices: 15, s_intervals: 64 }
        } else {
            Self { cells: 24, slices: 7, s_intervals: 32 }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub domain: Shape,
    pub nl: Nonlinearity,
    pub eps: f64,
    pub tau: f64,
    pub regularize: Regularize,
    pub forcing: Forcing,
    pub mollify: Option<f64>,
    pub resolution: Resolution,
    /// Defaults to uniform for `n = 1` and square-root grading for `n = 2`.
    pub grading: Option<Grading>,
    pub tol: f64,
    pub max_iter: usize,
    pub star_tol: f64,
    pub star_max_sweeps: usize,
    pub slack_constant: f64,
}

impl ProblemSpec {
    pub fn new(domain: Shape, nl: Nonlinearity, forcing: Forcing, resolution: Resolution) -> Self {
        Self {
            domain,
            nl,
            eps: 1e-6,
            tau: 1e-6,
            regularize: Regularize::Auto,
            forcing,
            mollify: None,
            resolution,
            grading: None,
            tol: 1e-9,
            max_iter: 200,
            star_tol: 1e-11,
            star_max_sweeps: 100_000,
            slack_constant: 10.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn grading(&self) -> Grading {
        self.grading.unwrap_or(if self.dim() == 1 { Grading::Uniform } else { Grading::Sqrt })
    }

    /// The flux actually used by the solvers, with the regularization
    /// parameters when applied.
    pub fn flux(&self) -> Result<(Arc<dyn Flux>, Option<(f64, f64)>), PipelineError> {
        let apply = match self.regularize {
            Regularize::Always => true,
            Regularize::Never => false,
            Regularize::Auto => self.nl.ellipticity().is_none(),
        };
        if apply {
            let reg = moreau_yosida(&self.nl, self.eps, self.tau).map_err(tag(Stage::Regularize))?;
            Ok((Arc::new(reg), Some((self.eps, self.tau))))
        } else {
            Ok((Arc::new(self.nl.clone()), None))
        }
    }

    pub fn grid(&self) -> Result<Arc<CellGrid>, PipelineError> {
        let m = self.resolution.cells;
        let grid = match self.domain {
            Shape::Interval { length } => make_interval_grid(length, m),
            Shape::Square { side } => make_square_grid(side, m),
            Shape::Disk { radius } => make_disk_grid(radius, m),
        };
        grid.map(Arc::new).map_err(tag(Stage::Grid))
    }

    /// The centered ball grid of `Ω₁⋆`; the grid itself when `Ω₁` is a disk.
    pub fn ball_grid(&self, grid: &Arc<CellGrid>) -> Result<Arc<CellGrid>, PipelineError> {
        match self.domain {
            Shape::Disk { .. } => Ok(grid.clone()),
            _ => make_ball_grid(self.dim(), self.domain.measure(), grid.dx()).map(Arc::new).map_err(tag(Stage::Grid)),
        }
    }

    pub fn s_grid(&self, grid: &CellGrid) -> Result<RadialGrid, PipelineError> {
        RadialGrid::new(self.dim(), grid.total_measure(), self.resolution.s_intervals, self.grading())
            .map_err(tag(Stage::Grid))
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { tol: self.tol, max_iter: self.max_iter, ..SolverOptions::default() }
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.resolution.slices + 1) as f64
    }

    /// Solves with `f` as data. A regularized solve that stalls is redone by
    /// continuation in `ε` from 0.1 down, warm-starting each level.
    pub fn solve_stack(&self, f: SliceStack, symmetrized: bool) -> Result<DiscreteSolution, PipelineError> {
        let stage = if symmetrized { Stage::SolveSymmetrized } else { Stage::Solve };
        let run = |flux: Arc<dyn Flux>, f: SliceStack, opts: &SolverOptions| {
            solve_direct(flux, f, symmetrized, opts).map_err(tag(stage))
        };
        let (flux, reg) = self.flux()?;
        let opts = self.solver_options();
        let first = match solve_direct(flux, f.clone(), symmetrized, &opts) {
            Ok(sol) => return Ok(sol),
            Err(e) => e,
        };
        let Some((eps, tau)) = reg else {
            return Err(PipelineError { stage, message: first.to_string() });
        };
        if !matches!(first, SolverError::NotConverged { .. }) || eps >= 0.1 {
            return Err(PipelineError { stage, message: first.to_string() });
        }
        let mut levels = Vec::new();
        let mut e = 0.1;
        while e > eps * (1.0 + 1e-12) {
            levels.push(e);
            e *= 0.1;
        }
        levels.push(eps);
        let mut iterations = 0;
        let mut initial = None;
        let mut last = None;
        for level in levels {
            let flux: Arc<dyn Flux> =
                Arc::new(moreau_yosida(&self.nl, level, tau).map_err(tag(Stage::Regularize))?);
            let opts = SolverOptions { initial: initial.take(), ..self.solver_options() };
            let sol = run(flux, f.clone(), &opts)?;
            iterations += sol.iterations;
            initial = Some(sol.stack.clone());
            last = Some(sol);
        }
        let mut sol = last.expect("at least one level");
        sol.iterations = iterations;
        Ok(sol)
    }
}

fn solve_direct(
    flux: Arc<dyn Flux>,
    f: SliceStack,
    symmetrized: bool,
    opts: &SolverOptions,
) -> Result<DiscreteSolution, SolverError> {
    let prob = DiscreteProblem::new(flux, f)?;
    if symmetrized {
        solve_ph_symmetrized(&prob, opts)
    } else {
        solve_ph(&prob, opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    pub j: usize,
    pub s: f64,
    pub u: f64,
    pub v: f64,
    pub v_star: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub pass: bool,
    /// `min (V_j − U_j)` over all interior slices and s-nodes.
    pub worst_gap: f64,
    pub worst_at: (usize, f64),
    pub slack_budget: f64,
    pub slack_constant: f64,
    pub dx: f64,
    pub ds: f64,
    pub h: f64,
    pub eps: Option<f64>,
    pub tau: Option<f64>,
    pub n: usize,
    pub domain: Shape,
    pub nonlinearity: String,
    pub forcing: String,
    pub resolution: Resolution,
    /// `max |V_j − V_j^ode|`: symmetrized solve against the s-system.
    pub star_gap: f64,
    /// `min (V_j^ode − U_j)`.
    pub worst_gap_ode: f64,
    pub worst_subsolution_slack: f64,
    pub chain_defect: f64,
    pub iterations_u: usize,
    pub iterations_v: usize,
    pub energy_u: f64,
    pub energy_v: f64,
    pub residual_u: f64,
    pub residual_v: f64,
    pub star_sweeps: usize,
    #[serde(skip)]
    pub rows: Vec<GapRow>,
}

impl ComparisonReport {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("j,s,U,V,gap,V_ode\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{:e},{:e},{:e},{:e}\n", r.j, r.s, r.u, r.v, r.gap, r.v_star));
        }
        out
    }
}

/// Everything produced by one pipeline run.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub report: ComparisonReport,
    pub grid: Arc<CellGrid>,
    pub ball: Arc<CellGrid>,
    pub f: SliceStack,
    pub f_sharp: SliceStack,
    pub u: DiscreteSolution,
    pub v: DiscreteSolution,
    pub s_grid: RadialGrid,
    pub u_mass: Vec<MassFunction>,
    pub v_mass: Vec<MassFunction>,
    pub v_ode: Vec<MassFunction>,
    pub f_mass: Vec<MassFunction>,
    pub subsolution: Vec<Vec<f64>>,
}

/// Solves `(P_h)` alone.
pub fn solve_problem(spec: &ProblemSpec) -> Result<(DiscreteProblem, DiscreteSolution), PipelineError> {
    let grid = spec.grid()?;
    let (flux, _) = spec.flux()?;
    let f = spec.forcing.sample(&grid, spec.resolution.slices, spec.mollify).map_err(tag(Stage::Forcing))?;
    let prob = DiscreteProblem::new(flux, f.clone()).map_err(tag(Stage::Forcing))?;
    let sol = spec.solve_stack(f, false)?;
    Ok((prob, sol))
}

pub fn verify_mass_comparison(spec: &ProblemSpec) -> Result<ComparisonRun, PipelineError> {
    let grid = spec.grid()?;
    let ball = spec.ball_grid(&grid)?;
    let (flux, reg) = spec.flux()?;
    let n = spec.resolution.slices;

    let f = spec.forcing.sample(&grid, n, spec.mollify).map_err(tag(Stage::Forcing))?;
    DiscreteProblem::new(flux.clone(), f.clone()).map_err(tag(Stage::Forcing))?;
    let u = spec.solve_stack(f.clone(), false)?;

    let f_sharp = steiner_rearrangement(&f, ball.clone()).map_err(tag(Stage::Symmetrize))?;
    let v = spec.solve_stack(f_sharp.clone(), true)?;

    let s_grid = spec.s_grid(&grid)?;
    let u_mass = slice_masses(&u.stack, &s_grid).map_err(tag(Stage::MassFunctions))?;
    let v_mass = slice_masses(&v.stack, &s_grid).map_err(tag(Stage::MassFunctions))?;
    let f_mass = slice_masses(&f, &s_grid).map_err(tag(Stage::MassFunctions))?;

    let op = StarOperator::new(s_grid.clone(), flux);
    let system = StarSystem { op: op.clone(), n_interior: n, f: f_mass.clone() };
    let star = solve_star_system(&system, spec.star_tol, spec.star_max_sweeps).map_err(tag(Stage::StarSystem))?;
    let v_ode = star.v;

    let h = spec.h();
    let u_smooth = slice_masses_reconstructed(&u.stack, &s_grid).map_err(tag(Stage::MassFunctions))?;
    let v_smooth = slice_masses_reconstructed(&v.stack, &s_grid).map_err(tag(Stage::MassFunctions))?;
    let subsolution = subsolution_residual(&u_smooth, &f_mass, &op, h);
    let chain_defect = comparison_chain_defect(&u_smooth, &v_smooth, &op, h);

    let nodes = s_grid.nodes();
    let mut rows = Vec::with_capacity(n * nodes.len());
    let mut worst_gap = f64::INFINITY;
    let mut worst_at = (0, 0.0);
    let mut worst_gap_ode = f64::INFINITY;
    let mut star_gap = 0.0f64;
    for j in 1..=n {
        for (i, &s) in nodes.iter().enumerate() {
            let (uu, vv, vo) = (u_mass[j].values()[i], v_mass[j].values()[i], v_ode[j].values()[i]);
            let gap = vv - uu;
            if gap < worst_gap {
                worst_gap = gap;
                worst_at = (j, s);
            }
            worst_gap_ode = worst_gap_ode.min(vo - uu);
            star_gap = star_gap.max((vv - vo).abs());
            rows.push(GapRow { j, s, u: uu, v: vv, v_star: vo, gap });
        }
    }
    let dx = grid.dx();
    let ds = s_grid.max_spacing();
    let slack_budget = spec.slack_constant * (dx + ds + h);
    let worst_subsolution_slack = subsolution.iter().flat_map(|r| r[1..].iter()).fold(f64::INFINITY, |a, &b| a.min(b));
    let report = ComparisonReport {
        pass: worst_gap >= -slack_budget,
        worst_gap,
        worst_at,
        slack_budget,
        slack_constant: spec.slack_constant,
        dx,
        ds,
        h,
        eps: reg.map(|r| r.0),
        tau: reg.map(|r| r.1),
        n: spec.dim(),
        domain: spec.domain,
        nonlinearity: spec.nl.name().to_string(),
        forcing: spec.forcing.describe(),
        resolution: spec.resolution,
        star_gap,
        worst_gap_ode,
        worst_subsolution_slack,
        chain_defect,
        iterations_u: u.iterations,
        iterations_v: v.iterations,
        energy_u: u.energy,
        energy_v: v.energy,
        residual_u: u.residual_norm,
        residual_v: v.residual_norm,
        star_sweeps: star.sweeps,
        rows,
    };
    Ok(ComparisonRun { report, grid, ball, f, f_sharp, u, v, s_grid, u_mass, v_mass, v_ode, f_mass, subsolution })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LqCheck {
    pub q: f64,
    /// `Σ_j h ∫_{Ω₁} |u_j|^q`.
    pub lhs: f64,
    /// The same for `v_j` on `Ω₁⋆`.
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Relative slack allowed in the `L^q` comparison.
pub const LQ_RELATIVE_SLACK: f64 = 1e-6;

pub fn verify_lq_consequence(run: &ComparisonRun, q: f64) -> LqCheck {
    let lhs = slice_lq(&run.u.stack, q);
    let scale = run.grid.total_measure() / run.ball.total_measure();
    let rhs = scale * slice_lq(&run.v.stack, q);
    let slack = LQ_RELATIVE_SLACK * rhs.abs().max(lhs.abs()) + 1e-300;
    LqCheck { q, lhs, rhs, slack, pass: lhs <= rhs + slack }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub eps: Option<f64>,
    pub tau: Option<f64>,
    pub slices: usize,
    pub report: Option<ComparisonReport>,
    pub error: Option<String>,
    pub energy: Option<f64>,
    pub h1_norm: Option<f64>,
    /// `‖u − u_prev‖_{L¹}` against the previous point of the same family.
    pub l1_to_previous: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepChecks {
    pub all_pass: bool,
    /// Energies non-decreasing as `ε` decreases at each fixed `τ`.
    pub energy_monotone: Option<bool>,
    /// Successive `L¹` differences strictly decreasing.
    pub l1_decreasing: bool,
    pub h1_bound: Option<f64>,
    pub worst_gaps: Vec<f64>,
    pub worst_gap_nondecreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub param: String,
    pub points: Vec<SweepPoint>,
    pub checks: SweepChecks,
}

pub type Executor<'a> = &'a (dyn Fn(&[ProblemSpec]) -> Vec<Result<ComparisonRun, PipelineError>> + Sync);

pub fn sequential(specs: &[ProblemSpec]) -> Vec<Result<ComparisonRun, PipelineError>> {
    specs.iter().map(verify_mass_comparison).collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Regularized solves over `(ε, τ)`; `ε` is visited from large to small at
/// each `τ`.
pub fn epsilon_tau_sweep(base: &ProblemSpec, eps_list: &[f64], tau_list: &[f64], exec: Executor) -> SweepReport {
    let mut eps_sorted = eps_list.to_vec();
    eps_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut specs = Vec::new();
    for &tau in tau_list {
        for &eps in &eps_sorted {
            let mut s = base.clone();
            s.eps = eps;
            s.tau = tau;
            s.regularize = Regularize::Always;
            specs.push(s);
        }
    }
    let runs = exec(&specs);
    let mut points = Vec::new();
    let mut energy_monotone = true;
    let mut l1_decreasing = true;
    for (t, &tau) in tau_list.iter().enumerate() {
        let block = &runs[t * eps_sorted.len()..(t + 1) * eps_sorted.len()];
        let mut prev: Option<&ComparisonRun> = None;
        let mut diffs = Vec::new();
        let mut energies = Vec::new();
        for (&eps, run) in eps_sorted.iter().zip(block) {
            let mut point = SweepPoint {
                value: eps,
                eps: Some(eps),
                tau: Some(tau),
                slices: base.resolution.slices,
                report: None,
                error: None,
                energy: None,
                h1_norm: None,
                l1_to_previous: None,
            };
            match run {
                Ok(r) => {
                    point.energy = Some(r.u.energy);
                    point.h1_norm = Some(discrete_h1_norm(&r.u.stack));
                    if let Some(p) = prev {
                        let d = l1_distance(&r.u.stack, &p.u.stack);
                        point.l1_to_previous = Some(d);
                        diffs.push(d);
                    }
                    energies.push(r.u.energy);
                    point.report = Some(r.report.clone());
                    prev = Some(r);
                }
                Err(e) => {
                    point.error = Some(e.to_string());
                    prev = None;
                }
            }
            points.push(point);
        }
        let scale = energies.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        energy_monotone &= energies.windows(2).all(|w| w[1] >= w[0] - 1e-12 * scale);
        l1_decreasing &= strictly_decreasing(&diffs);
    }
    finish_sweep("eps_tau", points, Some(energy_monotone), l1_decreasing)
}

/// Sweeps a single regularization parameter at the other's base value.
pub fn single_parameter_sweep(base: &ProblemSpec, param: &str, values: &[f64], exec: Executor) -> SweepReport {
    let (eps, tau): (Vec<f64>, Vec<f64>) = match param {
        "tau" => (vec![base.eps], values.to_vec()),
        _ => (values.to_vec(), vec![base.tau]),
    };
    let mut report = if param == "tau" {
        // Treat τ as the family parameter: one ε, several τ, largest first.
        let mut taus = tau.clone();
        taus.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let specs: Vec<ProblemSpec> = taus
            .iter()
            .map(|&t| {
                let mut s = base.clone();
                s.tau = t;
                s.eps = eps[0];
                s.regularize = Regularize::Always;
                s
            })
            .collect();
        let runs = exec(&specs);
        let mut points = Vec::new();
        let mut diffs = Vec::new();
        let mut prev: Option<&ComparisonRun> = None;
        for (&t, run) in taus.iter().zip(&runs) {
            points.push(point_from(run, t, Some(eps[0]), Some(t), base.resolution.slices, &mut prev, &mut diffs));
        }
        let l1 = strictly_decreasing(&diffs);
        finish_sweep("tau", points, None, l1)
    } else {
        epsilon_tau_sweep(base, &eps, &tau, exec)
    };
    report.param = param.to_string();
    report
}

fn point_from<'a>(
    run: &'a Result<ComparisonRun, PipelineError>,
    value: f64,
    eps: Option<f64>,
    tau: Option<f64>,
    slices: usize,
    prev: &mut Option<&'a ComparisonRun>,
    diffs: &mut Vec<f64>,
) -> SweepPoint {
    let mut point = SweepPoint {
        value,
        eps,
        tau,
        slices,
        report: None,
        error: None,
        energy: None,
        h1_norm: None,
        l1_to_previous: None,
    };
    match run {
        Ok(r) => {
            point.energy = Some(r.u.energy);
            point.h1_norm = Some(discrete_h1_norm(&r.u.stack));
            if let Some(p) = prev {
                if p.grid.len() == r.grid.len() {
                    let d = l1_distance(&r.u.stack, &p.u.stack);
                    point.l1_to_previous = Some(d);
                    diffs.push(d);
                }
            }
            point.report = Some(r.report.clone());
            *prev = Some(r);
        }
        Err(e) => {
            point.error = Some(e.to_string());
            *prev = None;
        }
    }
    point
}

fn finish_sweep(param: &str, points: Vec<SweepPoint>, energy_monotone: Option<bool>, l1_decreasing: bool) -> SweepReport {
    let worst_gaps: Vec<f64> = points.iter().filter_map(|p| p.report.as_ref().map(|r| r.worst_gap)).collect();
    let all_pass = points.iter().all(|p| p.report.as_ref().is_some_and(|r| r.pass));
    let h1_bound = points.iter().filter_map(|p| p.h1_norm).reduce(f64::max);
    let checks = SweepChecks {
        all_pass,
        energy_monotone,
        l1_decreasing,
        h1_bound,
        worst_gap_nondecreasing: worst_gaps.windows(2).all(|w| w[1] >= w[0] - 1e-9),
        worst_gaps,
    };
    SweepReport { param: param.to_string(), points, checks }
}

/// Pipeline at each `N` of an increasing list on a fixed cross-section grid.
pub fn h_refinement_study(base: &ProblemSpec, n_list: &[usize], exec: Executor) -> SweepReport {
    let specs: Vec<ProblemSpec> = n_list
        .iter()
        .map(|&n| {
            let mut s = base.clone();
            s.resolution.slices = n;
            s
        })
        .collect();
    let runs = exec(&specs);
    let mut points = Vec::new();
    let mut diffs = Vec::new();
    let mut prev: Option<&ComparisonRun> = None;
    for (&n, run) in n_list.iter().zip(&runs) {
        let (eps, tau) = run
            .as_ref()
            .ok()
            .map(|r| (r.report.eps, r.report.tau))
            .unwrap_or((None, None));
        points.push(point_from(run, 1.0 / (n + 1) as f64, eps, tau, n, &mut prev, &mut diffs));
    }
    let l1 = strictly_decreasing(&diffs) && diffs.len() + 1 == n_list.len();
    finish_sweep("h", points, None, l1)
}
