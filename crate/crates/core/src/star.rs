//! The operator `AU = κ_n(s) β(−κ_n(s) U_ss)` on `Ω₁* = (0, L)`, its
//! resolvent, and the coupled system for the mass functions.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{RadialGrid, SliceStack};
use crate::linalg::solve_tridiagonal;
use crate::nonlinearity::{odd_beta, odd_dbeta, Flux};
use crate::rearrange::{decreasing_rearrangement, reconstructed_mass_function, MassFunction, RearrangeError};

#[derive(Debug, Error, PartialEq)]
pub enum StarError {
    #[error("U(0) = {0} must vanish")]
    NonzeroOrigin(f64),
    #[error("mass function is convex at node {node}: U_ss = {value:e}")]
    Convexity { node: usize, value: f64 },
    #[error("function has {got} nodes, s-grid has {expected}")]
    Length { expected: usize, got: usize },
    #[error("resolvent parameter must be positive, got {0}")]
    BadLambda(f64),
    #[error("resolvent Newton failed (residual {0:e}); regularize β")]
    Newton(f64),
    #[error("coupled system did not settle after {sweeps} sweeps (change {change:e})")]
    Sweep { sweeps: usize, change: f64 },
    #[error(transparent)]
    Rearrange(#[from] RearrangeError),
}

/// Absolute tolerance on `U_ss` when checking concavity.
pub const CONCAVITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone)]
pub struct StarOperator {
    grid: RadialGrid,
    flux: Arc<dyn Flux>,
}

impl std::fmt::Debug for StarOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StarOperator")
            .field("n", &self.grid.dim())
            .field("intervals", &self.grid.intervals())
            .field("flux", &self.flux.describe())
            .finish()
    }
}

/// Weights of the three-point second difference at a node with left and
/// right spacings `hm`, `hp`.
#[inline]
fn stencil(hm: f64, hp: f64) -> (f64, f64) {
    let a = 2.0 / ((hm + hp) * hm);
    let b = 2.0 / ((hm + hp) * hp);
    (a, b)
}

#[inline]
fn second_difference_at(um: f64, u: f64, up: f64, hm: f64, hp: f64) -> f64 {
    let (a, b) = stencil(hm, hp);
    a * um - (a + b) * u + b * up
}

impl StarOperator {
    pub fn new(grid: RadialGrid, flux: Arc<dyn Flux>) -> Self {
        Self { grid, flux }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn flux(&self) -> &Arc<dyn Flux> {
        &self.flux
    }

    fn check_len(&self, len: usize) -> Result<(), StarError> {
        let expected = self.grid.nodes().len();
        if len != expected {
            return Err(StarError::Length { expected, got: len });
        }
        Ok(())
    }

    /// `D²U` at nodes `1..=M` (index 0 unused, set to 0); the last node uses
    /// the even reflection `U_{M+1} = U_{M−1}`.
    pub fn second_difference(&self, u: &[f64]) -> Vec<f64> {
        let s = self.grid.nodes();
        let m = s.len() - 1;
        let mut d = vec![0.0; m + 1];
        for i in 1..m {
            d[i] = second_difference_at(u[i - 1], u[i], u[i + 1], s[i] - s[i - 1], s[i + 1] - s[i]);
        }
        let h = s[m] - s[m - 1];
        d[m] = second_difference_at(u[m - 1], u[m], u[m - 1], h, h);
        d
    }

    /// `κ_i β(−κ_i D²U_i)` with `β` extended oddly; node 0 carries only the
    /// boundary condition and gets 0.
    pub fn apply_unchecked(&self, u: &[f64]) -> Vec<f64> {
        let d = self.second_difference(u);
        let kappa = self.grid.kappa();
        let flux = self.flux.as_ref();
        let mut out = vec![0.0; u.len()];
        for i in 1..u.len() {
            out[i] = kappa[i] * odd_beta(flux, -kappa[i] * d[i]);
        }
        out
    }

    /// `AU` for a mass function in `D(A)`: `U(0) = 0` and `U` concave.
    pub fn apply(&self, u: &MassFunction) -> Result<Vec<f64>, StarError> {
        let v = u.values();
        self.check_len(v.len())?;
        if v[0].abs() > CONCAVITY_TOLERANCE {
            return Err(StarError::NonzeroOrigin(v[0]));
        }
        let d = self.second_difference(v);
        if let Some(node) = (1..d.len()).find(|&i| d[i] > CONCAVITY_TOLERANCE) {
            return Err(StarError::Convexity { node, value: d[node] });
        }
        Ok(self.apply_unchecked(v))
    }

    /// Applies the stencil to the even extension of `u` about `s = L` on
    /// `(0, 2L)` and restricts to nodes `1..=M`.
    pub fn apply_even_extension(&self, u: &[f64]) -> Vec<f64> {
        let s = self.grid.nodes();
        let m = s.len() - 1;
        let l = s[m];
        let ext_s: Vec<f64> = s.iter().copied().chain(s[..m].iter().rev().map(|x| 2.0 * l - x)).collect();
        let ext_u: Vec<f64> = u.iter().copied().chain(u[..m].iter().rev().copied()).collect();
        let kappa = self.grid.kappa();
        let flux = self.flux.as_ref();
        let mut out = vec![0.0; m + 1];
        for i in 1..=m {
            let hm = s[i] - s[i - 1];
            // Spacing to the right in the extension mirrors the left one at i = M.
            let hp = if i == m { hm } else { ext_s[i + 1] - ext_s[i] };
            let d = second_difference_at(ext_u[i - 1], ext_u[i], ext_u[i + 1], hm, hp);
            out[i] = kappa[i] * odd_beta(flux, -kappa[i] * d);
        }
        out
    }

    /// Solves `U + λ AU = G`, `U(0) = 0`, `U_s(L) = 0`, by damped Newton.
    pub fn resolvent(&self, lambda: f64, g: &[f64]) -> Result<MassFunction, StarError> {
        self.resolvent_from(lambda, g, None)
    }

    pub fn resolvent_from(&self, lambda: f64, g: &[f64], start: Option<&[f64]>) -> Result<MassFunction, StarError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(StarError::BadLambda(lambda));
        }
        self.check_len(g.len())?;
        let m = g.len() - 1;
        let mut u: Vec<f64> = match start {
            Some(s) => s.to_vec(),
            None => g.to_vec(),
        };
        u[0] = 0.0;
        let scale = 1.0 + g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let tol = 1e-13 * scale;
        let residual = |u: &[f64]| -> Vec<f64> {
            let au = self.apply_unchecked(u);
            (0..=m).map(|i| if i == 0 { 0.0 } else { u[i] + lambda * au[i] - g[i] }).collect()
        };
        let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut r = residual(&u);
        let mut rn = norm(&r);
        let s = self.grid.nodes();
        let kappa = self.grid.kappa();
        let flux = self.flux.as_ref();
        for _ in 0..200 {
            if rn <= tol {
                return Ok(MassFunction::from_values(s.to_vec(), u));
            }
            let d = self.second_difference(&u);
            // Unknowns are U_1..U_M; row i ↦ index i−1.
            let mut sub = vec![0.0; m];
            let mut diag = vec![0.0; m];
            let mut sup = vec![0.0; m];
            for i in 1..=m {
                let (hm, hp) = if i == m {
                    let h = s[m] - s[m - 1];
                    (h, h)
                } else {
                    (s[i] - s[i - 1], s[i + 1] - s[i])
                };
                let (a, b) = stencil(hm, hp);
                let k = kappa[i];
                let c = lambda * k * k * odd_dbeta(flux, -k * d[i]);
                diag[i - 1] = 1.0 + c * (a + b);
                if i > 1 {
                    sub[i - 1] = -c * a;
                }
                if i < m {
                    sup[i - 1] = -c * b;
                } else {
                    // Ghost node folds onto U_{M−1}.
                    sub[i - 1] = -c * (a + b);
                }
            }
            if m == 1 {
                sub[0] = 0.0;
            }
            let rhs: Vec<f64> = r[1..].iter().map(|x| -x).collect();
            let step = solve_tridiagonal(&sub, &diag, &sup, &rhs).map_err(|_| StarError::Newton(rn))?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..50 {
                let trial: Vec<f64> =
                    (0..=m).map(|i| if i == 0 { 0.0 } else { u[i] + alpha * step[i - 1] }).collect();
                let rt = residual(&trial);
                let rtn = norm(&rt);
                if rtn < rn || rtn <= tol {
                    u = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if rn <= 1e-9 * scale {
            Ok(MassFunction::from_values(s.to_vec(), u))
        } else {
            Err(StarError::Newton(rn))
        }
    }
}

/// Mass functions `Φ_j(s) = ∫₀ˢ φ_j*` of every slice `j = 0..=N+1` of a
/// stack, with cell measures rescaled so the slices live on `(0, L)`.
pub fn slice_masses(stack: &SliceStack, grid: &RadialGrid) -> Result<Vec<MassFunction>, StarError> {
    let cells = stack.grid().cells();
    let total: f64 = cells.iter().map(|c| c.measure).sum();
    let scale = grid.measure() / total;
    let measures: Vec<f64> = cells.iter().map(|c| c.measure * scale).collect();
    (0..stack.slices().len())
        .map(|j| {
            let profile = decreasing_rearrangement(stack.slice(j), &measures)?;
            Ok(MassFunction::from_profile(&profile, grid))
        })
        .collect()
}

/// Like [`slice_masses`] but through [`reconstructed_mass_function`], for
/// evaluating `A` and `Δʸ` on computed solutions.
pub fn slice_masses_reconstructed(stack: &SliceStack, grid: &RadialGrid) -> Result<Vec<MassFunction>, StarError> {
    (0..stack.slices().len())
        .map(|j| Ok(reconstructed_mass_function(stack.grid(), stack.slice(j), grid)?))
        .collect()
}

/// `(U_j, F_j)` for `j = 0..=N+1` from a solved stack and its data.
pub fn build_star_data(
    u: &SliceStack,
    f: &SliceStack,
    grid: &RadialGrid,
) -> Result<(Vec<MassFunction>, Vec<MassFunction>), StarError> {
    Ok((slice_masses(u, grid)?, slice_masses(f, grid)?))
}

/// The coupled system `AV_j − (V_{j+1} − 2V_j + V_{j−1})/h² = F_j`,
/// `V_0 = V_{N+1} = 0`.
#[derive(Debug, Clone)]
pub struct StarSystem {
    pub op: StarOperator,
    pub n_interior: usize,
    /// `F_j` for `j = 0..=N+1`; the end entries are ignored.
    pub f: Vec<MassFunction>,
}

impl StarSystem {
    pub fn h(&self) -> f64 {
        1.0 / (self.n_interior + 1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct StarSolution {
    /// `V_j` for `j = 0..=N+1`.
    pub v: Vec<MassFunction>,
    pub sweeps: usize,
    pub last_change: f64,
}

/// Block Gauss–Seidel: `V_j ← R_{h²/2}((h²/2)F_j + ½(V_{j+1} + V_{j−1}))`.
pub fn solve_star_system(sys: &StarSystem, tol: f64, max_sweeps: usize) -> Result<StarSolution, StarError> {
    let n = sys.n_interior;
    let nodes = sys.op.grid().nodes().to_vec();
    let len = nodes.len();
    if sys.f.len() != n + 2 {
        return Err(StarError::Length { expected: n + 2, got: sys.f.len() });
    }
    for f in &sys.f {
        sys.op.check_len(f.values().len())?;
    }
    let h2 = sys.h() * sys.h();
    let lambda = 0.5 * h2;
    let mut v = vec![vec![0.0; len]; n + 2];
    let mut change = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        change = 0.0f64;
        for j in 1..=n {
            let g: Vec<f64> = (0..len)
                .map(|i| lambda * sys.f[j].values()[i] + 0.5 * (v[j + 1][i] + v[j - 1][i]))
                .collect();
            let next = sys.op.resolvent_from(lambda, &g, Some(&v[j]))?;
            let next = next.values().to_vec();
            change = change.max(next.iter().zip(&v[j]).fold(0.0, |a, (x, y)| a.max((x - y).abs())));
            v[j] = next;
        }
        if change <= tol {
            let v = v.into_iter().map(|vals| MassFunction::from_values(nodes.clone(), vals)).collect();
            return Ok(StarSolution { v, sweeps: sweep, last_change: change });
        }
    }
    Err(StarError::Sweep { sweeps: max_sweeps, change })
}

/// `F_j − AU_j + (U_{j+1} − 2U_j + U_{j−1})/h²` at nodes `1..=M` of every
/// interior slice (index 0 of each row is 0).
pub fn subsolution_residual(u: &[MassFunction], f: &[MassFunction], op: &StarOperator, h: f64) -> Vec<Vec<f64>> {
    let n = u.len() - 2;
    let h2 = h * h;
    (1..=n)
        .map(|j| {
            let au = op.apply_unchecked(u[j].values());
            let (lo, mid, hi) = (u[j - 1].values(), u[j].values(), u[j + 1].values());
            let fj = f[j].values();
            (0..mid.len())
                .map(|i| if i == 0 { 0.0 } else { fj[i] - au[i] + (hi[i] - 2.0 * mid[i] + lo[i]) / h2 })
                .collect()
        })
        .collect()
}

/// Largest value of
/// `(h²/2)(AU_j − AV_j) + (U_j − V_j) − ½(U_{j+1} − V_{j+1}) − ½(U_{j−1} − V_{j−1})`,
/// non-positive when `U` is a subsolution and `V` a solution.
pub fn comparison_chain_defect(u: &[MassFunction], v: &[MassFunction], op: &StarOperator, h: f64) -> f64 {
    let n = u.len() - 2;
    let half_h2 = 0.5 * h * h;
    let mut worst = f64::NEG_INFINITY;
    for j in 1..=n {
        let au = op.apply_unchecked(u[j].values());
        let av = op.apply_unchecked(v[j].values());
        for i in 1..au.len() {
            let d = |k: usize| u[k].values()[i] - v[k].values()[i];
            let lhs = half_h2 * (au[i] - av[i]) + d(j) - 0.5 * d(j + 1) - 0.5 * d(j - 1);
            worst = worst.max(lhs);
        }
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct AccretivityReport {
    pub trials: usize,
    pub lambdas: Vec<f64>,
    pub evaluations: usize,
    pub violations: usize,
    /// Smallest `‖(U−V+λ(AU−AV))₊‖_∞ − ‖(U−V)₊‖_∞` seen.
    pub worst_margin: f64,
}

pub const ACCRETIVITY_SLACK: f64 = -1e-9;

/// Mass function of a random non-increasing profile built from
/// nonnegative random decrements.
pub fn random_mass_function<R: Rng>(grid: &RadialGrid, rng: &mut R) -> Vec<f64> {
    let s = grid.nodes();
    let m = s.len() - 1;
    let amplitude = rng.gen_range(0.1..10.0);
    let decrements: Vec<f64> = (0..m).map(|_| rng.gen::<f64>().powi(2)).collect();
    let total: f64 = decrements.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    // Profile level on interval k is the sum of decrements from k on.
    let mut level = vec![0.0; m];
    let mut acc = 0.0;
    for k in (0..m).rev() {
        acc += decrements[k];
        level[k] = amplitude * acc / total;
    }
    let mut u = vec![0.0; m + 1];
    for k in 0..m {
        u[k + 1] = u[k] + level[k] * (s[k + 1] - s[k]);
    }
    u
}

/// `‖(U−V)₊‖_∞ ≤ ‖(U−V+λ(AU−AV))₊‖_∞` on random pairs.
pub fn t_accretivity_check<R: Rng>(op: &StarOperator, trials: usize, lambdas: &[f64], rng: &mut R) -> AccretivityReport {
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    let mut evaluations = 0;
    let pos_max = |w: &[f64]| w.iter().fold(0.0f64, |a, x| a.max(*x));
    for _ in 0..trials {
        let u = random_mass_function(op.grid(), rng);
        let v = random_mass_function(op.grid(), rng);
        let au = op.apply_unchecked(&u);
        let av = op.apply_unchecked(&v);
        let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let lhs = pos_max(&diff);
        for &lambda in lambdas {
            let shifted: Vec<f64> = (0..diff.len()).map(|i| diff[i] + lambda * (au[i] - av[i])).collect();
            let margin = pos_max(&shifted) - lhs;
            worst = worst.min(margin);
            evaluations += 1;
            if margin < ACCRETIVITY_SLACK {
                violations += 1;
            }
        }
    }
    AccretivityReport { trials, lambdas: lambdas.to_vec(), evaluations, violations, worst_margin: worst }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grading;
    use crate::nonlinearity::{make_p_laplacian, moreau_yosida};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn op(n: usize, p: f64, m: usize, grading: Grading) -> StarOperator {
        let grid = RadialGrid::new(n, 1.0, m, grading).unwrap();
        StarOperator::new(grid, Arc::new(make_p_laplacian(p).unwrap()))
    }

    #[test]
    fn linear_mass_gives_zero() {
        let op = op(2, 3.0, 16, Grading::Sqrt);
        let u: Vec<f64> = op.grid().nodes().iter().map(|s| 0.7 * s).collect();
        // Linear U violates U_s(L) = 0 only through the ghost node.
        let au = op.apply_unchecked(&u);
        assert!(au[1..au.len() - 1].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_beta_in_one_dimension() {
        let op = op(1, 2.0, 20, Grading::Uniform);
        let u: Vec<f64> = op.grid().nodes().iter().map(|s| s - s * s / 2.0).collect();
        let au = op.apply(&MassFunction::from_values(op.grid().nodes().to_vec(), u)).unwrap();
        // U_ss = −1 exactly for a quadratic, so AU = −4 U_ss = 4.
        for v in &au[1..] {
            assert!((v - 4.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn apply_rejects_convex_input() {
        let op = op(1, 2.0, 8, Grading::Uniform);
        let u: Vec<f64> = op.grid().nodes().iter().map(|s| s * s).collect();
        let r = op.apply(&MassFunction::from_values(op.grid().nodes().to_vec(), u));
        assert!(matches!(r, Err(StarError::Convexity { node: 1, .. })));
    }

    #[test]
    fn even_extension_matches_direct() {
        let op = op(2, 3.0, 24, Grading::Sqrt);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let u = random_mass_function(op.grid(), &mut rng);
            assert_eq!(op.apply_even_extension(&u), op.apply_unchecked(&u));
        }
    }

    #[test]
    fn resolvent_of_zero_is_zero() {
        let op = op(2, 3.0, 16, Grading::Sqrt);
        let u = op.resolvent(1.0, &vec![0.0; 17]).unwrap();
        assert!(u.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn resolvent_solves_its_equation() {
        let base = make_p_laplacian(1.5).unwrap();
        let nl = moreau_yosida(&base, 1e-4, 1e-4).unwrap();
        let grid = RadialGrid::new(2, 1.0, 32, Grading::Sqrt).unwrap();
        let op = StarOperator::new(grid, Arc::new(nl));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_mass_function(op.grid(), &mut rng);
        for lambda in [0.01, 1.0, 100.0] {
            let u = op.resolvent(lambda, &g).unwrap();
            let au = op.apply_unchecked(u.values());
            for i in 1..g.len() {
                assert!((u.values()[i] + lambda * au[i] - g[i]).abs() < 1e-9);
            }
        }
        assert_eq!(op.resolvent(0.0, &g).unwrap_err(), StarError::BadLambda(0.0));
    }

    #[test]
    fn accretivity_zero_pair() {
        let op = op(1, 3.0, 16, Grading::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = t_accretivity_check(&op, 50, &[0.01, 1.0, 100.0], &mut rng);
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.evaluations, 150);
    }

    #[test]
    fn random_mass_functions_are_concave() {
        let grid = RadialGrid::new(2, 2.0, 20, Grading::Sqrt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = random_mass_function(&grid, &mut rng);
            let m = MassFunction::from_values(grid.nodes().to_vec(), u);
            assert!(m.is_concave_nondecreasing(1e-12));
        }
    }
}
