//! Distribution functions, decreasing rearrangements, Schwarz and Steiner
//! symmetrization of grid functions, and mass functions on `Ω₁*`.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{CellGrid, Link, RadialGrid, SliceStack};

#[derive(Debug, Error, PartialEq)]
pub enum RearrangeError {
    #[error("length mismatch: {values} values for {measures} cells")]
    LengthMismatch { values: usize, measures: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("non-positive cell measure at index {0}")]
    BadMeasure(usize),
    #[error("target ball has measure {target}, domain has {domain}")]
    MeasureMismatch { domain: f64, target: f64 },
    #[error("target grid is not a centered ball")]
    NotBall,
}

/// Relative measure mismatch tolerated between a domain and its ball grid.
pub const BALL_MEASURE_TOLERANCE: f64 = 0.02;

fn check(values: &[f64], measures: &[f64]) -> Result<(), RearrangeError> {
    if values.len() != measures.len() {
        return Err(RearrangeError::LengthMismatch {
            values: values.len(),
            measures: measures.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(RearrangeError::NonFinite(i));
    }
    if let Some(i) = measures.iter().position(|m| !(*m > 0.0)) {
        return Err(RearrangeError::BadMeasure(i));
    }
    Ok(())
}

/// `μ(t) = |{u > t}|`.
pub fn distribution_function(values: &[f64], measures: &[f64], t: f64) -> f64 {
    values
        .iter()
        .zip(measures)
        .filter(|(v, _)| **v > t)
        .map(|(_, m)| m)
        .sum()
}

/// Non-increasing step function on `[0, L]`: value `levels[k]` on
/// `[breaks[k-1], breaks[k])`, with `breaks[-1] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    levels: Vec<f64>,
    breaks: Vec<f64>,
}

/// How a step profile is sampled at isolated points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// `u*(s) = inf{t : μ(t) ≤ s}`, right-continuous steps.
    Step,
    /// Piecewise linear through the step midpoints, constant at both ends.
    Linear,
}

/// `u*` of a grid function; ties are merged into one step.
pub fn decreasing_rearrangement(values: &[f64], measures: &[f64]) -> Result<Profile, RearrangeError> {
    check(values, measures)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut levels: Vec<f64> = Vec::new();
    let mut widths: Vec<f64> = Vec::new();
    for i in order {
        match levels.last() {
            Some(&last) if last == values[i] => *widths.last_mut().unwrap() += measures[i],
            _ => {
                levels.push(values[i]);
                widths.push(measures[i]);
            }
        }
    }
    let mut acc = 0.0;
    let breaks = widths
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    Ok(Profile { levels, breaks })
}

impl Profile {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn measure(&self) -> f64 {
        self.breaks.last().copied().unwrap_or(0.0)
    }

    fn start(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.breaks[k - 1]
        }
    }

    pub fn eval(&self, s: f64, convention: Convention) -> f64 {
        if self.levels.is_empty() {
            return 0.0;
        }
        match convention {
            Convention::Step => {
                let k = self.breaks.partition_point(|&b| b <= s);
                self.levels[k.min(self.levels.len() - 1)]
            }
            Convention::Linear => {
                let mids: Vec<f64> =
                    (0..self.levels.len()).map(|k| 0.5 * (self.start(k) + self.breaks[k])).collect();
                let k = mids.partition_point(|&m| m <= s);
                if k == 0 {
                    self.levels[0]
                } else if k == mids.len() {
                    self.levels[k - 1]
                } else {
                    let w = (s - mids[k - 1]) / (mids[k] - mids[k - 1]);
                    self.levels[k - 1] + w * (self.levels[k] - self.levels[k - 1])
                }
            }
        }
    }

    /// `∫₀ˢ u*(σ) dσ`, exact; constant beyond `L`.
    pub fn mass(&self, s: f64) -> f64 {
        let mut total = 0.0;
        for (k, (&level, &end)) in self.levels.iter().zip(&self.breaks).enumerate() {
            let start = self.start(k);
            if s <= start {
                break;
            }
            total += level * (s.min(end) - start);
        }
        total
    }

    /// `∫ₐᵇ u*`, exact.
    pub fn integral_between(&self, a: f64, b: f64) -> f64 {
        self.mass(b) - self.mass(a)
    }

    /// `|{u* > t}|`.
    pub fn distribution(&self, t: f64) -> f64 {
        let k = self.levels.partition_point(|&l| l > t);
        if k == 0 {
            0.0
        } else {
            self.breaks[k - 1]
        }
    }

    /// `∫ u* v*` for two profiles on intervals of equal length, exact.
    pub fn product_integral(&self, other: &Profile) -> f64 {
        let mut cuts: Vec<f64> = self.breaks.iter().chain(&other.breaks).copied().collect();
        cuts.push(0.0);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let end = self.measure().min(other.measure());
        cuts.windows(2)
            .filter(|w| w[0] < end)
            .map(|w| {
                let (a, b) = (w[0], w[1].min(end));
                self.eval(a, Convention::Step) * other.eval(a, Convention::Step) * (b - a)
            })
            .sum()
    }

    /// Two-column `s,u_star` rows at the step boundaries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s_start,s_end,u_star\n");
        for (k, (&level, &end)) in self.levels.iter().zip(&self.breaks).enumerate() {
            let _ = writeln!(out, "{:e},{:e},{:e}", self.start(k), end, level);
        }
        out
    }
}

/// `F(s) = ∫₀ˢ f*` sampled on the nodes of an s-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MassFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl MassFunction {
    pub fn from_profile(profile: &Profile, grid: &RadialGrid) -> Self {
        let nodes = grid.nodes().to_vec();
        let values = nodes.iter().map(|&s| profile.mass(s)).collect();
        Self { nodes, values }
    }

    pub fn from_values(nodes: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(nodes.len(), values.len());
        Self { nodes, values }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation between nodes, clamped at the ends.
    pub fn eval(&self, s: f64) -> f64 {
        interpolate(&self.nodes, &self.values, s)
    }

    /// Concave, non-decreasing and vanishing at 0, up to `tol`.
    pub fn is_concave_nondecreasing(&self, tol: f64) -> bool {
        let v = &self.values;
        if v.first().map_or(true, |x| x.abs() > tol) {
            return false;
        }
        if v.windows(2).any(|w| w[1] < w[0] - tol) {
            return false;
        }
        let slopes: Vec<f64> = self
            .nodes
            .windows(2)
            .zip(v.windows(2))
            .map(|(s, f)| (f[1] - f[0]) / (s[1] - s[0]))
            .collect();
        let scale = slopes.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        slopes.windows(2).all(|w| w[1] <= w[0] + tol * scale)
    }
}

pub(crate) fn interpolate(nodes: &[f64], values: &[f64], s: f64) -> f64 {
    let k = nodes.partition_point(|&x| x <= s);
    if k == 0 {
        values[0]
    } else if k == nodes.len() {
        values[k - 1]
    } else {
        let w = (s - nodes[k - 1]) / (nodes[k] - nodes[k - 1]);
        values[k - 1] + w * (values[k] - values[k - 1])
    }
}

/// Cells of a ball grid grouped by exact distance from the center, nearest
/// first, with the total measure of each group.
pub fn radius_classes(ball: &CellGrid) -> Vec<(Vec<usize>, f64)> {
    let mut order: Vec<usize> = (0..ball.len()).collect();
    let r2: Vec<f64> = order.iter().map(|&c| ball.radius_squared(c)).collect();
    order.sort_by(|&a, &b| r2[a].partial_cmp(&r2[b]).unwrap().then(a.cmp(&b)));
    let mut classes: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut last = f64::NAN;
    for c in order {
        let m = ball.cells()[c].measure;
        if r2[c] == last {
            let class = classes.last_mut().unwrap();
            class.0.push(c);
            class.1 += m;
        } else {
            classes.push((vec![c], m));
            last = r2[c];
        }
    }
    classes
}

/// Schwarz symmetrization `u⋆` of a grid function onto a centered ball grid.
///
/// Cells at equal distance from the center form one class; classes are filled
/// outward with the mean of `u*` over the matching `s`-interval, after scaling
/// the ball measures to the measure of the source domain.
pub fn schwarz_rearrangement(
    values: &[f64],
    measures: &[f64],
    ball: &CellGrid,
) -> Result<Vec<f64>, RearrangeError> {
    let profile = decreasing_rearrangement(values, measures)?;
    schwarz_from_profile(&profile, ball)
}

pub fn schwarz_from_profile(profile: &Profile, ball: &CellGrid) -> Result<Vec<f64>, RearrangeError> {
    if !ball.is_ball() {
        return Err(RearrangeError::NotBall);
    }
    let source = profile.measure();
    let target = ball.total_measure();
    if (target - source).abs() > BALL_MEASURE_TOLERANCE * source {
        return Err(RearrangeError::MeasureMismatch { domain: source, target });
    }
    let scale = source / target;
    let mut out = vec![0.0; ball.len()];
    let mut s = 0.0;
    for (cells, m) in radius_classes(ball) {
        let width = m * scale;
        let mean = profile.integral_between(s, s + width) / width;
        for c in cells {
            out[c] = mean;
        }
        s += width;
    }
    Ok(out)
}

/// Steiner symmetrization `u^#`: Schwarz symmetrization of every slice.
pub fn steiner_rearrangement(stack: &SliceStack, ball: Arc<CellGrid>) -> Result<SliceStack, RearrangeError> {
    let measures = stack.grid().measures();
    let interior = (1..=stack.n_interior())
        .map(|j| schwarz_rearrangement(stack.slice(j), &measures, &ball))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SliceStack::from_interior(ball, interior))
}

/// Mass functions `U_j(s) = ∫₀ˢ u_j*` of the interior slices.
pub fn slice_mass_functions(stack: &SliceStack, grid: &RadialGrid) -> Result<Vec<MassFunction>, RearrangeError> {
    let measures = stack.grid().measures();
    (1..=stack.n_interior())
        .map(|j| {
            let profile = decreasing_rearrangement(stack.slice(j), &measures)?;
            Ok(MassFunction::from_profile(&profile, grid))
        })
        .collect()
}

/// One quadrant's share of a cell, with its values taken uniform on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    weight: f64,
    lo: f64,
    hi: f64,
}

impl Piece {
    fn above(&self, t: f64) -> f64 {
        if t < self.lo {
            1.0
        } else if t >= self.hi {
            0.0
        } else {
            (self.hi - t) / (self.hi - self.lo)
        }
    }

    /// `E[(X − t)₊]`.
    fn excess(&self, t: f64) -> f64 {
        if t <= self.lo {
            0.5 * (self.lo + self.hi) - t
        } else if t >= self.hi {
            0.0
        } else {
            (self.hi - t).powi(2) / (2.0 * (self.hi - self.lo))
        }
    }
}

/// Mass function of the piecewise-linear reconstruction of `values`: each
/// quadrant spreads its cell value over the range its one-sided gradient
/// covers. Exact for piecewise-linear data in one dimension, and free of the
/// step oscillations of the cellwise profile, so `U_ss` is meaningful.
///
/// Measures are rescaled so that the grid has measure `s_grid.measure()`.
pub fn reconstructed_mass_function(
    grid: &CellGrid,
    values: &[f64],
    s_grid: &RadialGrid,
) -> Result<MassFunction, RearrangeError> {
    check(values, &grid.measures())?;
    let scale = s_grid.measure() / grid.total_measure();
    let half = 0.5 * grid.dx();
    let pieces: Vec<Piece> = grid
        .quadrants()
        .iter()
        .map(|q| {
            let l = values[q.cell];
            let g = grid.quadrant_gradient(q, values);
            let d: Vec<f64> = (0..grid.dim()).map(|k| g[k] * q.axes[k].scale.signum() * half).collect();
            let corners = match d.as_slice() {
                [a] => vec![0.0, *a],
                [a, b] => vec![0.0, *a, *b, a + b],
                _ => vec![0.0],
            };
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Piece { weight: q.weight * scale, lo: l + lo, hi: l + hi }
        })
        .collect();
    let tmin = pieces.iter().map(|p| p.lo).fold(f64::INFINITY, f64::min);
    let tmax = pieces.iter().map(|p| p.hi).fold(f64::NEG_INFINITY, f64::max);
    let mu = |t: f64| pieces.iter().map(|p| p.weight * p.above(t)).sum::<f64>();
    let nodes = s_grid.nodes().to_vec();
    let out = nodes
        .iter()
        .map(|&s| {
            if s <= 0.0 || pieces.is_empty() {
                return 0.0;
            }
            // Smallest t with μ(t) ≤ s; U(s) = s t + ∫(u − t)₊ there.
            let (mut a, mut b) = (tmin, tmax);
            if mu(a) <= s {
                b = a;
            }
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if mu(m) <= s {
                    b = m;
                } else {
                    a = m;
                }
            }
            let t = b;
            s * t + pieces.iter().map(|p| p.weight * p.excess(t)).sum::<f64>()
        })
        .collect();
    Ok(MassFunction { nodes, values: out })
}

/// `(∫ u v, ∫ u* v*)`; the first never exceeds the second.
pub fn hardy_littlewood_gap(u: &[f64], v: &[f64], measures: &[f64]) -> Result<(f64, f64), RearrangeError> {
    check(u, measures)?;
    check(v, measures)?;
    let lhs = u.iter().zip(v).zip(measures).map(|((a, b), m)| a * b * m).sum();
    let rhs = decreasing_rearrangement(u, measures)?.product_integral(&decreasing_rearrangement(v, measures)?);
    Ok((lhs, rhs))
}

/// `max_σ Σ u_i v_σ(i)` over all permutations, for a handful of equal-measure
/// cells.
pub fn max_permuted_pairing(u: &[f64], v: &[f64]) -> f64 {
    fn recurse(u: &[f64], v: &mut Vec<f64>, k: usize, best: &mut f64) {
        if k == v.len() {
            let s: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            *best = best.max(s);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            recurse(u, v, k + 1, best);
            v.swap(k, i);
        }
    }
    let mut best = f64::NEG_INFINITY;
    recurse(u, &mut v.to_vec(), 0, &mut best);
    best
}

/// Largest increase of `values` when stepping along a grid axis away from
/// the center of a ball grid; non-positive for radially non-increasing data.
pub fn radial_monotonicity_defect(ball: &CellGrid, values: &[f64]) -> f64 {
    let quarter = 0.25 * ball.dx();
    let origin = ball.origin();
    let mut worst = f64::NEG_INFINITY;
    for (c, cell) in ball.cells().iter().enumerate() {
        for axis in 0..ball.dim() {
            let r = cell.center[axis] - origin[axis];
            for dir in 0..2 {
                let away = if dir == 1 { r > -quarter } else { r < quarter };
                if let (true, Link::Cell(n)) = (away, ball.links(c)[axis][dir]) {
                    worst = worst.max(values[n] - values[c]);
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_ball_grid, make_disk_grid, make_interval_grid, make_square_grid, Grading};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn spike_rearrangement() {
        let values = [0.0, 0.0, 1.0, 0.0];
        let measures = [0.25; 4];
        let p = decreasing_rearrangement(&values, &measures).unwrap();
        assert_eq!(p.eval(0.1, Convention::Step), 1.0);
        assert_eq!(p.eval(0.3, Convention::Step), 0.0);
        assert_eq!(p.eval(0.25, Convention::Step), 0.0);
        assert_eq!(p.levels(), &[1.0, 0.0]);
        assert_relative_eq!(p.mass(0.1), 0.1);
        assert_relative_eq!(p.mass(1.0), 0.25);
    }

    #[test]
    fn distribution_matches_profile() {
        let values = [0.3, -1.0, 2.0, 0.3, 0.7];
        let measures = [0.1, 0.2, 0.3, 0.15, 0.25];
        let p = decreasing_rearrangement(&values, &measures).unwrap();
        for t in [-2.0, -1.0, 0.0, 0.3, 0.5, 1.9, 2.0] {
            assert_relative_eq!(p.distribution(t), distribution_function(&values, &measures, t), epsilon = 1e-15);
        }
        assert_eq!(p.levels().len(), 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            decreasing_rearrangement(&[1.0, f64::NAN], &[0.5, 0.5]),
            Err(RearrangeError::NonFinite(1))
        );
        assert!(matches!(
            decreasing_rearrangement(&[1.0], &[0.5, 0.5]),
            Err(RearrangeError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn linear_convention_interpolates_midpoints() {
        let p = decreasing_rearrangement(&[1.0, 3.0], &[0.5, 0.5]).unwrap();
        assert_eq!(p.eval(0.0, Convention::Linear), 3.0);
        assert_relative_eq!(p.eval(0.5, Convention::Linear), 2.0);
        assert_eq!(p.eval(1.0, Convention::Linear), 1.0);
    }

    #[test]
    fn schwarz_of_radial_data_is_identity_on_interval() {
        let g = make_interval_grid(1.0, 8).unwrap();
        let ball = make_ball_grid(1, 1.0, g.dx()).unwrap();
        let v: Vec<f64> = ball.cells().iter().map(|c| 1.0 - c.center[0].abs()).collect();
        let out = schwarz_rearrangement(&v, &ball.measures(), &ball).unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn schwarz_preserves_integral_and_is_radial() {
        let g = make_square_grid(1.0, 12).unwrap();
        let v: Vec<f64> = g.cells().iter().map(|c| (7.0 * c.center[0]).sin() + c.center[1]).collect();
        let ball = make_ball_grid(2, 1.0, g.dx()).unwrap();
        let out = schwarz_rearrangement(&v, &g.measures(), &ball).unwrap();
        let scale = g.total_measure() / ball.total_measure();
        assert_relative_eq!(ball.integrate(&out) * scale, g.integrate(&v), max_relative = 1e-12);
        assert!(radial_monotonicity_defect(&ball, &out) <= 1e-12);
    }

    #[test]
    fn schwarz_rejects_wrong_ball() {
        let ball = make_disk_grid(1.0, 16).unwrap();
        assert!(matches!(
            schwarz_rearrangement(&[1.0; 4], &[0.25; 4], &ball),
            Err(RearrangeError::MeasureMismatch { .. })
        ));
        let sq = make_square_grid(1.0, 4).unwrap();
        assert_eq!(schwarz_rearrangement(&[1.0; 16], &[1.0 / 16.0; 16], &sq), Err(RearrangeError::NotBall));
    }

    #[test]
    fn hardy_littlewood_on_small_case() {
        let u = [1.0, 3.0, 2.0];
        let v = [5.0, 4.0, 6.0];
        let (lhs, rhs) = hardy_littlewood_gap(&u, &v, &[1.0; 3]).unwrap();
        assert_eq!(lhs, 5.0 + 12.0 + 12.0);
        assert_eq!(rhs, 18.0 + 10.0 + 4.0);
        assert_eq!(max_permuted_pairing(&u, &v), rhs);
    }

    #[test]
    fn mass_function_concavity() {
        let grid = RadialGrid::new(1, 1.0, 16, Grading::Uniform).unwrap();
        let g = make_interval_grid(1.0, 20).unwrap();
        let v: Vec<f64> = g.cells().iter().map(|c| (c.center[0] * 9.0).cos()).collect();
        let p = decreasing_rearrangement(&v, &g.measures()).unwrap();
        let m = MassFunction::from_profile(&p, &grid);
        assert!(m.values()[0] == 0.0);
        assert!(m.is_concave_nondecreasing(1e-12) || v.iter().any(|x| *x < 0.0));
        let pos: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let m = MassFunction::from_profile(&decreasing_rearrangement(&pos, &g.measures()).unwrap(), &grid);
        assert!(m.is_concave_nondecreasing(1e-12));
        assert_relative_eq!(m.eval(1.0), g.integrate(&pos), max_relative = 1e-12);
    }

    #[test]
    fn reconstructed_mass_matches_sine_profile() {
        // u = sin(πx): u*(s) = cos(πs/2), U(s) = (2/π) sin(πs/2).
        let g = make_interval_grid(1.0, 128).unwrap();
        let v: Vec<f64> = g.cells().iter().map(|c| (PI * c.center[0]).sin()).collect();
        let sg = RadialGrid::new(1, 1.0, 32, Grading::Uniform).unwrap();
        let m = reconstructed_mass_function(&g, &v, &sg).unwrap();
        let ds = 1.0 / 32.0;
        for (i, &s) in sg.nodes().iter().enumerate() {
            assert!((m.values()[i] - 2.0 / PI * (PI * s / 2.0).sin()).abs() < 2e-4);
            if i > 0 && i < 32 {
                let d2 = (m.values()[i + 1] - 2.0 * m.values()[i] + m.values()[i - 1]) / (ds * ds);
                assert!((d2 + PI / 2.0 * (PI * s / 2.0).sin()).abs() < 2e-2, "{s} {d2}");
            }
        }
        assert!(m.is_concave_nondecreasing(1e-12));
    }

    #[test]
    fn csv_export_has_one_row_per_step() {
        let p = decreasing_rearrangement(&[2.0, 1.0, 2.0], &[1.0; 3]).unwrap();
        let csv = p.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("s_start,s_end,u_star"));
    }
}
