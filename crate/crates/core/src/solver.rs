//! The y-discretized problem `(P_h)`: energy, damped Newton solve, the
//! symmetrized variant and the piecewise-linear interpolant in y.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::{CellGrid, SliceStack};
use crate::linalg::BandMatrix;
use crate::nonlinearity::Flux;
use crate::rearrange::radial_monotonicity_defect;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("stack has {got_cells} cells × {got_n} slices, problem expects {cells} × {n}")]
    Dimension { cells: usize, n: usize, got_cells: usize, got_n: usize },
    #[error("data slice {slice} is negative at cell {cell}: {value}")]
    NegativeData { slice: usize, cell: usize, value: f64 },
    #[error("non-finite value in data")]
    NonFinite,
    #[error("no convergence after {iterations} iterations (residual {residual:e}); increase regularization")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("slice {slice} is not radially non-increasing (defect {defect:e})")]
    RadialMonotonicity { slice: usize, defect: f64 },
    #[error("grid is not a centered ball")]
    NotBall,
    #[error("y = {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// `(P_h)` on a fixed cross-section grid with `N` interior slices.
#[derive(Clone)]
pub struct DiscreteProblem {
    grid: Arc<CellGrid>,
    flux: Arc<dyn Flux>,
    f: SliceStack,
    /// Factor on the `y`-difference terms; 0 decouples the slices.
    coupling: f64,
}

impl std::fmt::Debug for DiscreteProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteProblem")
            .field("cells", &self.grid.len())
            .field("n", &self.f.n_interior())
            .field("flux", &self.flux.describe())
            .finish()
    }
}

impl DiscreteProblem {
    /// Requires `f ≥ 0` on every slice.
    pub fn new(flux: Arc<dyn Flux>, f: SliceStack) -> Result<Self, SolverError> {
        for j in 1..=f.n_interior() {
            for (c, &v) in f.slice(j).iter().enumerate() {
                if !v.is_finite() {
                    return Err(SolverError::NonFinite);
                }
                if v < 0.0 {
                    return Err(SolverError::NegativeData { slice: j, cell: c, value: v });
                }
            }
        }
        Ok(Self { grid: f.grid().clone(), flux, f, coupling: 1.0 })
    }

    /// The cross-section problem `−div(a(|∇u|)∇u) = f` on `grid` alone.
    pub fn cross_section(flux: Arc<dyn Flux>, grid: Arc<CellGrid>, f: Vec<f64>) -> Result<Self, SolverError> {
        if f.len() != grid.len() {
            return Err(SolverError::Dimension { cells: grid.len(), got_cells: f.len(), n: 1, got_n: 1 });
        }
        let stack = SliceStack::from_interior(grid, vec![f]);
        Ok(Self { coupling: 0.0, ..Self::new(flux, stack)? })
    }

    pub fn grid(&self) -> &Arc<CellGrid> {
        &self.grid
    }

    pub fn flux(&self) -> &Arc<dyn Flux> {
        &self.flux
    }

    pub fn data(&self) -> &SliceStack {
        &self.f
    }

    pub fn n_interior(&self) -> usize {
        self.f.n_interior()
    }

    pub fn h(&self) -> f64 {
        self.f.h()
    }

    fn check(&self, stack: &SliceStack) -> Result<(), SolverError> {
        if !Arc::ptr_eq(stack.grid(), &self.grid) && stack.grid().len() != self.grid.len()
            || stack.n_interior() != self.n_interior()
        {
            return Err(SolverError::Dimension {
                cells: self.grid.len(),
                n: self.n_interior(),
                got_cells: stack.grid().len(),
                got_n: stack.n_interior(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Bound on the max over slices of the mass-weighted residual norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub initial: Option<SliceStack>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200, armijo: 1e-4, initial: None }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub stack: SliceStack,
    pub energy: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub energy_history: Vec<f64>,
}

/// `J_h(u) = Σ_j ∫ B(|∇ₓu_j|) + ½ Σ_{j=0}^{N} ∫ ((u_{j+1} − u_j)/h)² − Σ_j ∫ f_j u_j`.
pub fn energy_jh(prob: &DiscreteProblem, stack: &SliceStack) -> Result<f64, SolverError> {
    prob.check(stack)?;
    Ok(energy_unchecked(prob, stack))
}

fn energy_unchecked(prob: &DiscreteProblem, stack: &SliceStack) -> f64 {
    let grid = &prob.grid;
    let n = prob.n_interior();
    let wy = prob.coupling / (prob.h() * prob.h());
    let flux = prob.flux.as_ref();
    let mut total = 0.0;
    for j in 1..=n {
        total += grid.gradient_energy(stack.slice(j), |t| flux.potential(t));
        let (u, f) = (stack.slice(j), prob.f.slice(j));
        total -= grid.cells().iter().enumerate().map(|(c, cell)| cell.measure * f[c] * u[c]).sum::<f64>();
    }
    for j in 0..=n {
        let (lo, hi) = (stack.slice(j), stack.slice(j + 1));
        total += 0.5
            * grid
                .cells()
                .iter()
                .enumerate()
                .map(|(c, cell)| cell.measure * (hi[c] - lo[c]) * (hi[c] - lo[c]))
                .sum::<f64>()
            * wy;
    }
    total
}

#[inline]
fn unknown(c: usize, j: usize, n: usize) -> usize {
    c * n + (j - 1)
}

/// Gradient of `J_h` with respect to the interior unknowns, by slice.
fn gradient(prob: &DiscreteProblem, stack: &SliceStack) -> Vec<Vec<f64>> {
    let grid = &prob.grid;
    let n = prob.n_interior();
    let wy = prob.coupling / (prob.h() * prob.h());
    let flux = prob.flux.as_ref();
    let mut out = Vec::with_capacity(n);
    for j in 1..=n {
        let u = stack.slice(j);
        let mut r = vec![0.0; grid.len()];
        for q in grid.quadrants() {
            let g = grid.quadrant_gradient(q, u);
            let t = g[0].hypot(g[1]);
            if t == 0.0 {
                continue;
            }
            let a = flux.a(t) * q.weight;
            for (k, diff) in q.axes.iter().enumerate().take(grid.dim()) {
                let v = a * g[k] * diff.scale;
                r[q.cell] -= v;
                if let Some(nb) = diff.neighbor {
                    r[nb] += v;
                }
            }
        }
        let (lo, hi) = (stack.slice(j - 1), stack.slice(j + 1));
        for (c, cell) in grid.cells().iter().enumerate() {
            r[c] += cell.measure * ((2.0 * u[c] - lo[c] - hi[c]) * wy - prob.f.slice(j)[c]);
        }
        out.push(r);
    }
    out
}

/// `max_j (Σ_c r_{j,c}²/|c|)^{1/2}`: the residual as an `L²` density.
fn residual_norm(prob: &DiscreteProblem, r: &[Vec<f64>]) -> f64 {
    let cells = prob.grid.cells();
    r.iter()
        .map(|rj| rj.iter().zip(cells).map(|(v, c)| v * v / c.measure).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn bandwidth(grid: &CellGrid, n: usize) -> usize {
    let mut w = 0;
    for q in grid.quadrants() {
        let nbs: Vec<usize> = q.axes.iter().take(grid.dim()).filter_map(|d| d.neighbor).collect();
        for &a in nbs.iter().chain(std::iter::once(&q.cell)) {
            for &b in nbs.iter().chain(std::iter::once(&q.cell)) {
                w = w.max(a.abs_diff(b));
            }
        }
    }
    (w + 1) * n
}

fn hessian(prob: &DiscreteProblem, stack: &SliceStack, width: usize) -> BandMatrix {
    let grid = &prob.grid;
    let n = prob.n_interior();
    let wy = prob.coupling / (prob.h() * prob.h());
    let flux = prob.flux.as_ref();
    let dim = grid.dim();
    let mut m = BandMatrix::zeros(grid.len() * n, width);
    for j in 1..=n {
        let u = stack.slice(j);
        for q in grid.quadrants() {
            let g = grid.quadrant_gradient(q, u);
            let t = g[0].hypot(g[1]);
            let db = flux.dbeta(t);
            // H = a I + (β' − a) ĝĝᵀ in gradient coordinates.
            let mut hq = [[0.0; 2]; 2];
            if dim == 1 {
                hq[0][0] = db;
            } else if t == 0.0 {
                hq = [[db, 0.0], [0.0, db]];
            } else {
                let a = flux.a(t);
                let e = [g[0] / t, g[1] / t];
                for (r, row) in hq.iter_mut().enumerate() {
                    for (s, v) in row.iter_mut().enumerate() {
                        *v = (db - a) * e[r] * e[s] + if r == s { a } else { 0.0 };
                    }
                }
            }
            // g_k = scale_k (u_nb_k − u_c): sparse rows of ∂g/∂u.
            let mut entries: [(usize, [f64; 2]); 3] = [(q.cell, [0.0; 2]); 3];
            let mut count = 1;
            for (k, diff) in q.axes.iter().enumerate().take(dim) {
                entries[0].1[k] = -diff.scale;
                if let Some(nb) = diff.neighbor {
                    let mut col = [0.0; 2];
                    col[k] = diff.scale;
                    entries[count] = (nb, col);
                    count += 1;
                }
            }
            for &(a, ga) in &entries[..count] {
                for &(b, gb) in &entries[..count] {
                    if b > a {
                        continue;
                    }
                    let mut v = 0.0;
                    for r in 0..dim {
                        for s in 0..dim {
                            v += ga[r] * hq[r][s] * gb[s];
                        }
                    }
                    if v != 0.0 {
                        m.add(unknown(a, j, n), unknown(b, j, n), q.weight * v);
                    }
                }
            }
        }
        for (c, cell) in grid.cells().iter().enumerate() {
            m.add(unknown(c, j, n), unknown(c, j, n), 2.0 * cell.measure * wy);
            if j < n {
                m.add(unknown(c, j, n), unknown(c, j + 1, n), -cell.measure * wy);
            }
        }
    }
    m
}

fn axpy(stack: &SliceStack, dir: &[f64], alpha: f64) -> SliceStack {
    let n = stack.n_interior();
    let mut out = stack.clone();
    for j in 1..=n {
        for (c, v) in out.slice_mut(j).iter_mut().enumerate() {
            *v += alpha * dir[unknown(c, j, n)];
        }
    }
    out
}

/// Minimizes `J_h` by damped Newton with Armijo backtracking.
pub fn solve_ph(prob: &DiscreteProblem, opts: &SolverOptions) -> Result<DiscreteSolution, SolverError> {
    if !(opts.tol > 0.0) {
        return Err(SolverError::BadTolerance);
    }
    let n = prob.n_interior();
    let mut stack = match &opts.initial {
        Some(s) => {
            prob.check(s)?;
            SliceStack::from_interior(prob.grid.clone(), (1..=n).map(|j| s.slice(j).to_vec()).collect())
        }
        None => SliceStack::zeros(prob.grid.clone(), n),
    };
    let width = bandwidth(&prob.grid, n);
    let mut energy = energy_unchecked(prob, &stack);
    let mut history = vec![energy];
    let mut r = gradient(prob, &stack);
    let mut res = residual_norm(prob, &r);
    let mut iterations = 0;
    while res > opts.tol {
        if iterations == opts.max_iter {
            return Err(SolverError::NotConverged { iterations, residual: res });
        }
        iterations += 1;
        let mut rhs = vec![0.0; prob.grid.len() * n];
        for j in 1..=n {
            for (c, v) in r[j - 1].iter().enumerate() {
                rhs[unknown(c, j, n)] = -v;
            }
        }
        let h = hessian(prob, &stack, width);
        let diag: Vec<f64> = (0..rhs.len()).map(|i| h.get(i, i)).collect();
        let dir = match h.cholesky() {
            Ok(chol) => chol.solve(&rhs),
            Err(_) => rhs.iter().zip(&diag).map(|(g, d)| g / d).collect(),
        };
        let slope: f64 = -dir.iter().zip(&rhs).map(|(d, g)| d * g).sum::<f64>();
        let noise = 1e-13 * (energy.abs() + 1.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = axpy(&stack, &dir, alpha);
            let e = energy_unchecked(prob, &trial);
            if e <= energy + opts.armijo * alpha * slope {
                accepted = Some((trial, e, None));
                break;
            }
            if (e - energy).abs() <= noise {
                // Energy differences at round-off level: judge by residual.
                let rt = gradient(prob, &trial);
                let rn = residual_norm(prob, &rt);
                if rn < res {
                    accepted = Some((trial, e, Some((rt, rn))));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, e, cached)) = accepted else {
            return Err(SolverError::NotConverged { iterations, residual: res });
        };
        stack = trial;
        energy = e;
        history.push(energy);
        match cached {
            Some((rt, rn)) => {
                r = rt;
                res = rn;
            }
            None => {
                r = gradient(prob, &stack);
                res = residual_norm(prob, &r);
            }
        }
    }
    Ok(DiscreteSolution { stack, energy, residual_norm: res, iterations, energy_history: history })
}

/// Solves `(P_h^#)` on a ball grid and checks that every slice is radially
/// non-increasing.
pub fn solve_ph_symmetrized(prob: &DiscreteProblem, opts: &SolverOptions) -> Result<DiscreteSolution, SolverError> {
    if !prob.grid.is_ball() {
        return Err(SolverError::NotBall);
    }
    let sol = solve_ph(prob, opts)?;
    for j in 1..=prob.n_interior() {
        let defect = radial_monotonicity_defect(&prob.grid, sol.stack.slice(j));
        if defect > RADIAL_TOLERANCE {
            return Err(SolverError::RadialMonotonicity { slice: j, defect });
        }
    }
    Ok(sol)
}

pub const RADIAL_TOLERANCE: f64 = 1e-8;

/// Solves at `τ` and `τ/2` and extrapolates linearly to `τ = 0`.
pub fn solve_richardson(
    prob_tau: &DiscreteProblem,
    prob_half: &DiscreteProblem,
    opts: &SolverOptions,
) -> Result<SliceStack, SolverError> {
    let a = solve_ph(prob_tau, opts)?;
    let b = solve_ph(prob_half, opts)?;
    let n = prob_tau.n_interior();
    let interior = (1..=n)
        .map(|j| a.stack.slice(j).iter().zip(b.stack.slice(j)).map(|(x, y)| 2.0 * y - x).collect())
        .collect();
    Ok(SliceStack::from_interior(prob_tau.grid.clone(), interior))
}

/// `u^h(x, y) = u_j(x) + (u_{j+1} − u_j)(y − jh)/h`, `j = ⌊y/h⌋`.
#[derive(Debug, Clone)]
pub struct YInterpolant {
    stack: SliceStack,
}

pub fn interpolate_y(sol: &DiscreteSolution) -> YInterpolant {
    YInterpolant { stack: sol.stack.clone() }
}

impl YInterpolant {
    pub fn from_stack(stack: SliceStack) -> Self {
        Self { stack }
    }

    pub fn stack(&self) -> &SliceStack {
        &self.stack
    }

    pub fn eval(&self, cell: usize, y: f64) -> Result<f64, SolverError> {
        if !(0.0..=1.0).contains(&y) {
            return Err(SolverError::OutOfRange(y));
        }
        let m = self.stack.n_interior() + 1;
        let pos = y * m as f64;
        let j = (pos.floor() as usize).min(m - 1);
        let w = pos - j as f64;
        let (a, b) = (self.stack.slice(j)[cell], self.stack.slice(j + 1)[cell]);
        Ok(if w == 0.0 { a } else { a + (b - a) * w })
    }

    /// Slice values at `y`.
    pub fn sample(&self, y: f64) -> Result<Vec<f64>, SolverError> {
        (0..self.stack.grid().len()).map(|c| self.eval(c, y)).collect()
    }
}

/// `∫₀¹ |p − q|` for piecewise-linear functions given by node values on
/// uniform partitions of `[0, 1]`.
fn l1_piecewise_linear(p: &[f64], q: &[f64]) -> f64 {
    let (mp, mq) = (p.len() - 1, q.len() - 1);
    let mut cuts: Vec<f64> = (0..=mp)
        .map(|i| i as f64 / mp as f64)
        .chain((0..=mq).map(|i| i as f64 / mq as f64))
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let value = |v: &[f64], y: f64| {
        let m = v.len() - 1;
        let pos = y * m as f64;
        let j = (pos.floor() as usize).min(m - 1);
        let w = pos - j as f64;
        v[j] + (v[j + 1] - v[j]) * w
    };
    cuts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let da = value(p, a) - value(q, a);
            let db = value(p, b) - value(q, b);
            let len = b - a;
            if da * db >= 0.0 {
                0.5 * (da.abs() + db.abs()) * len
            } else {
                0.5 * (da * da + db * db) / (da.abs() + db.abs()) * len
            }
        })
        .sum()
}

/// `‖u^{h₁} − u^{h₂}‖_{L¹(Ω)}` for two stacks on the same cross-section grid.
pub fn l1_distance(a: &SliceStack, b: &SliceStack) -> f64 {
    let grid = a.grid();
    assert_eq!(grid.len(), b.grid().len(), "stacks on different grids");
    grid.cells()
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let pa: Vec<f64> = a.slices().iter().map(|s| s[c]).collect();
            let pb: Vec<f64> = b.slices().iter().map(|s| s[c]).collect();
            cell.measure * l1_piecewise_linear(&pa, &pb)
        })
        .sum()
}

/// `‖u^h‖_{L¹(Ω)}` of the interpolant.
pub fn l1_norm(a: &SliceStack) -> f64 {
    let zero = SliceStack::zeros(a.grid().clone(), 1);
    l1_distance(a, &zero)
}

/// Discrete `H¹₀` norm `(Σ_j h ∫|∇ₓu_j|² + Σ_{j=0}^{N} h ∫((u_{j+1}−u_j)/h)²)^{1/2}`.
pub fn discrete_h1_norm(stack: &SliceStack) -> f64 {
    let grid = stack.grid();
    let h = stack.h();
    let n = stack.n_interior();
    let mut total = 0.0;
    for j in 1..=n {
        total += h * grid.gradient_energy(stack.slice(j), |t| t * t);
    }
    for j in 0..=n {
        let (lo, hi) = (stack.slice(j), stack.slice(j + 1));
        total += grid
            .cells()
            .iter()
            .enumerate()
            .map(|(c, cell)| cell.measure * (hi[c] - lo[c]).powi(2))
            .sum::<f64>()
            / h;
    }
    total.sqrt()
}

/// `Σ_j h ∫ |u_j|^q`.
pub fn slice_lq(stack: &SliceStack, q: f64) -> f64 {
    let h = stack.h();
    let cells = stack.grid().cells();
    (1..=stack.n_interior())
        .map(|j| h * stack.slice(j).iter().zip(cells).map(|(v, c)| c.measure * v.abs().powf(q)).sum::<f64>())
        .sum()
}
