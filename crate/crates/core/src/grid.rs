//! Cartesian cell grids for the cross-section `Ω₁ ⊂ Rⁿ` (n = 1, 2), the
//! s-partition of `Ω₁* = (0, |Ω₁|)` and stacks of y-slices.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("need at least {min} cells per axis, got {got}")]
    TooFewCells { min: usize, got: usize },
    #[error("domain size must be positive and finite, got {0}")]
    BadSize(f64),
    #[error("dimension {0} unsupported (expected 1 or 2)")]
    Dimension(usize),
    #[error("negative measure coordinate s = {0}")]
    NegativeS(f64),
    #[error("s-grid needs at least 2 intervals, got {0}")]
    TooFewNodes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Interval { length: f64 },
    Square { side: f64 },
    Disk { radius: f64 },
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Exact Lebesgue measure of the continuous domain.
    pub fn measure(&self) -> f64 {
        match *self {
            Shape::Interval { length } => length,
            Shape::Square { side } => side * side,
            Shape::Disk { radius } => PI * radius * radius,
        }
    }
}

/// Neighbor of a cell across one face: another cell, or the Dirichlet
/// boundary at the given distance from the cell center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    Cell(usize),
    Wall(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub center: [f64; 2],
    pub measure: f64,
    pub boundary: bool,
}

/// One-sided difference along an axis: `g = scale · (u[neighbor] − u[cell])`,
/// with `u = 0` when the neighbor is the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisDiff {
    pub neighbor: Option<usize>,
    pub scale: f64,
}

/// A corner sub-box of a cell where the gradient is approximated by one-sided
/// differences towards that corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrant {
    pub cell: usize,
    pub weight: f64,
    pub axes: [AxisDiff; 2],
}

#[derive(Debug, Clone)]
pub struct CellGrid {
    dim: usize,
    dx: f64,
    shape: Shape,
    origin: [f64; 2],
    cells: Vec<Cell>,
    links: Vec<[[Link; 2]; 2]>,
    quadrants: Vec<Quadrant>,
    total_measure: f64,
}

const MIN_WALL_FRACTION: f64 = 1e-3;

/// Uniform grid of `(0, length)` with `m` cells.
pub fn make_interval_grid(length: f64, m: usize) -> Result<CellGrid, GridError> {
    check_size(length)?;
    if m < 4 {
        return Err(GridError::TooFewCells { min: 4, got: m });
    }
    Ok(build_interval(length, m, 0.5 * length))
}

/// Uniform grid of the square `(0, side)²` with `m × m` cells.
pub fn make_square_grid(side: f64, m: usize) -> Result<CellGrid, GridError> {
    check_size(side)?;
    if m < 4 {
        return Err(GridError::TooFewCells { min: 4, got: m });
    }
    let dx = side / m as f64;
    let c = 0.5 * side;
    let half = 0.5 * dx;
    build_planar(
        Shape::Square { side },
        dx,
        m,
        [c, c],
        |_| true,
        |_, _, _| half,
    )
}

/// Cells of the `m × m` lattice on `[−R, R]²` whose centers lie in the open
/// disk. Faces crossed by the circle carry the exact distance to it.
pub fn make_disk_grid(radius: f64, m_per_axis: usize) -> Result<CellGrid, GridError> {
    check_size(radius)?;
    if m_per_axis < 8 {
        return Err(GridError::TooFewCells { min: 8, got: m_per_axis });
    }
    let dx = 2.0 * radius / m_per_axis as f64;
    let r2 = radius * radius;
    build_planar(
        Shape::Disk { radius },
        dx,
        m_per_axis,
        [0.0, 0.0],
        |x| x[0] * x[0] + x[1] * x[1] < r2,
        |x, axis, dir| {
            let along = x[axis];
            let across = x[1 - axis];
            let sign = if dir == 0 { -1.0 } else { 1.0 };
            let reach = (r2 - across * across).max(0.0).sqrt();
            (reach - sign * along).clamp(MIN_WALL_FRACTION * dx, dx)
        },
    )
}

/// The symmetrized cross-section `Ω₁⋆`: the centered ball of the given measure,
/// at a resolution close to `dx`.
pub fn make_ball_grid(dim: usize, measure: f64, dx: f64) -> Result<CellGrid, GridError> {
    check_size(measure)?;
    check_size(dx)?;
    match dim {
        1 => {
            let m = ((measure / dx).round() as usize).max(4);
            Ok(build_interval(measure, m, 0.0))
        }
        2 => {
            let radius = (measure / PI).sqrt();
            let m = ((2.0 * radius / dx).round() as usize).max(8);
            make_disk_grid(radius, m)
        }
        d => Err(GridError::Dimension(d)),
    }
}

fn check_size(v: f64) -> Result<(), GridError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(GridError::BadSize(v))
    }
}

fn build_interval(length: f64, m: usize, center: f64) -> CellGrid {
    let dx = length / m as f64;
    let mid = (m as f64 - 1.0) / 2.0;
    let half = 0.5 * dx;
    let mut cells = Vec::with_capacity(m);
    let mut links = Vec::with_capacity(m);
    for i in 0..m {
        let left = if i == 0 { Link::Wall(half) } else { Link::Cell(i - 1) };
        let right = if i + 1 == m { Link::Wall(half) } else { Link::Cell(i + 1) };
        cells.push(Cell {
            center: [center + (i as f64 - mid) * dx, 0.0],
            measure: 0.0,
            boundary: i == 0 || i + 1 == m,
        });
        links.push([[left, right], [Link::Wall(half), Link::Wall(half)]]);
    }
    finish(Shape::Interval { length }, 1, dx, [center, 0.0], cells, links)
}

fn build_planar(
    shape: Shape,
    dx: f64,
    m: usize,
    origin: [f64; 2],
    inside: impl Fn([f64; 2]) -> bool,
    wall: impl Fn([f64; 2], usize, usize) -> f64,
) -> Result<CellGrid, GridError> {
    let mid = (m as f64 - 1.0) / 2.0;
    let coord = |i: usize| (i as f64 - mid) * dx;
    let mut index = vec![usize::MAX; m * m];
    let mut cells = Vec::new();
    for b in 0..m {
        for a in 0..m {
            let rel = [coord(a), coord(b)];
            if inside(rel) {
                index[b * m + a] = cells.len();
                cells.push(Cell {
                    center: [origin[0] + rel[0], origin[1] + rel[1]],
                    measure: 0.0,
                    boundary: false,
                });
            }
        }
    }
    if cells.is_empty() {
        return Err(GridError::TooFewCells { min: 1, got: 0 });
    }
    let mut links = Vec::with_capacity(cells.len());
    for b in 0..m {
        for a in 0..m {
            let c = index[b * m + a];
            if c == usize::MAX {
                continue;
            }
            let rel = [coord(a), coord(b)];
            let mut cell_links = [[Link::Wall(0.0); 2]; 2];
            for axis in 0..2 {
                for dir in 0..2 {
                    let (na, nb) = match (axis, dir) {
                        (0, 0) => (a.wrapping_sub(1), b),
                        (0, _) => (a + 1, b),
                        (_, 0) => (a, b.wrapping_sub(1)),
                        _ => (a, b + 1),
                    };
                    let neighbor = (na < m && nb < m)
                        .then(|| index[nb * m + na])
                        .filter(|&k| k != usize::MAX);
                    cell_links[axis][dir] = match neighbor {
                        Some(k) => Link::Cell(k),
                        None => {
                            cells[c].boundary = true;
                            Link::Wall(wall(rel, axis, dir))
                        }
                    };
                }
            }
            links.push(cell_links);
        }
    }
    Ok(finish(shape, 2, dx, origin, cells, links))
}

fn finish(
    shape: Shape,
    dim: usize,
    dx: f64,
    origin: [f64; 2],
    mut cells: Vec<Cell>,
    links: Vec<[[Link; 2]; 2]>,
) -> CellGrid {
    let half = 0.5 * dx;
    let mut quadrants = Vec::with_capacity(cells.len() << dim);
    for (c, cell_links) in links.iter().enumerate() {
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut axes = [AxisDiff { neighbor: None, scale: 0.0 }; 2];
            for (axis, diff) in axes.iter_mut().enumerate().take(dim) {
                let dir = (corner >> axis) & 1;
                let sign = if dir == 0 { -1.0 } else { 1.0 };
                let (neighbor, dist, extent) = match cell_links[axis][dir] {
                    Link::Cell(k) => (Some(k), dx, half),
                    Link::Wall(d) => (None, d, d),
                };
                weight *= extent;
                *diff = AxisDiff { neighbor, scale: sign / dist };
            }
            cells[c].measure += weight;
            quadrants.push(Quadrant { cell: c, weight, axes });
        }
    }
    let total_measure = cells.iter().map(|c| c.measure).sum();
    CellGrid { dim, dx, shape, origin, cells, links, quadrants, total_measure }
}

impl CellGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Center of symmetry of the continuous domain.
    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn links(&self, cell: usize) -> &[[Link; 2]; 2] {
        &self.links[cell]
    }

    pub fn quadrants(&self) -> &[Quadrant] {
        &self.quadrants
    }

    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    pub fn measures(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.measure).collect()
    }

    /// True for grids centered on their own symmetrization (interval or disk).
    pub fn is_ball(&self) -> bool {
        matches!(self.shape, Shape::Interval { .. } | Shape::Disk { .. })
    }

    /// Squared distance of a cell center from the center of symmetry,
    /// computed from lattice offsets so mirror-image cells agree exactly.
    pub fn radius_squared(&self, cell: usize) -> f64 {
        let c = self.cells[cell].center;
        let d0 = ((c[0] - self.origin[0]) / self.dx * 2.0).round();
        let d1 = if self.dim == 2 {
            ((c[1] - self.origin[1]) / self.dx * 2.0).round()
        } else {
            0.0
        };
        (d0 * d0 + d1 * d1) * 0.25 * self.dx * self.dx
    }

    pub fn quadrant_gradient(&self, q: &Quadrant, values: &[f64]) -> [f64; 2] {
        let uc = values[q.cell];
        let mut g = [0.0; 2];
        for (k, diff) in q.axes.iter().enumerate().take(self.dim) {
            let un = diff.neighbor.map_or(0.0, |n| values[n]);
            g[k] = diff.scale * (un - uc);
        }
        g
    }

    /// `Σ_q weight_q · density(|g_q|)`, the discrete `∫ density(|∇u|)`.
    pub fn gradient_energy(&self, values: &[f64], density: impl Fn(f64) -> f64) -> f64 {
        self.quadrants
            .iter()
            .map(|q| {
                let g = self.quadrant_gradient(q, values);
                q.weight * density(g[0].hypot(g[1]))
            })
            .sum()
    }

    /// Weighted mean of the quadrant gradient norms of each cell.
    pub fn cell_gradient_norms(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cells.len()];
        for q in &self.quadrants {
            let g = self.quadrant_gradient(q, values);
            out[q.cell] += q.weight * g[0].hypot(g[1]);
        }
        for (v, cell) in out.iter_mut().zip(&self.cells) {
            *v /= cell.measure;
        }
        out
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.cells.iter().zip(values).map(|(c, v)| c.measure * v).sum()
    }
}

/// Measure of the unit ball of `Rⁿ`.
pub fn omega_n(n: usize) -> Result<f64, GridError> {
    match n {
        1 => Ok(2.0),
        2 => Ok(PI),
        d => Err(GridError::Dimension(d)),
    }
}

/// `κ_n(s) = n ω_n^{1/n} s^{1/n'}`: perimeter of the ball of measure `s`.
/// For `n = 1` the exponent `1/n'` is taken as 0, so `κ₁ ≡ 2`.
pub fn kappa_n(n: usize, s: f64) -> Result<f64, GridError> {
    if s < 0.0 {
        return Err(GridError::NegativeS(s));
    }
    match n {
        1 => Ok(2.0),
        2 => Ok(2.0 * (PI * s).sqrt()),
        d => Err(GridError::Dimension(d)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grading {
    Uniform,
    /// Nodes uniform in `√s`, i.e. `s_i = L (i/M)²`.
    Sqrt,
}

/// Partition `0 = s₀ < … < s_M = |Ω₁|` of `Ω₁*` with `κ_n` at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    n: usize,
    grading: Grading,
    nodes: Vec<f64>,
    kappa: Vec<f64>,
}

impl RadialGrid {
    pub fn new(n: usize, measure: f64, intervals: usize, grading: Grading) -> Result<Self, GridError> {
        check_size(measure)?;
        if intervals < 2 {
            return Err(GridError::TooFewNodes(intervals));
        }
        let m = intervals as f64;
        let nodes: Vec<f64> = (0..=intervals)
            .map(|i| {
                let x = i as f64 / m;
                match grading {
                    Grading::Uniform => measure * x,
                    Grading::Sqrt => measure * x * x,
                }
            })
            .collect();
        let kappa = nodes
            .iter()
            .map(|&s| kappa_n(n, s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { n, grading, nodes, kappa })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn measure(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Number of intervals `M`.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Largest node spacing.
    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn omega_n(&self) -> f64 {
        omega_n(self.n).unwrap_or(f64::NAN)
    }
}

/// The y-discretized unknown `(u_j)`, `j = 0..=N+1`, with `h = 1/(N+1)` and
/// zero boundary slices.
#[derive(Debug, Clone)]
pub struct SliceStack {
    grid: Arc<CellGrid>,
    n_interior: usize,
    slices: Vec<Vec<f64>>,
}

impl SliceStack {
    pub fn zeros(grid: Arc<CellGrid>, n_interior: usize) -> Self {
        let cells = grid.len();
        Self { grid, n_interior, slices: vec![vec![0.0; cells]; n_interior + 2] }
    }

    /// Interior slices sampled from `f(cell, center, y_j)`.
    pub fn from_fn(
        grid: Arc<CellGrid>,
        n_interior: usize,
        f: impl Fn(usize, [f64; 2], f64) -> f64,
    ) -> Self {
        let mut stack = Self::zeros(grid, n_interior);
        for j in 1..=n_interior {
            let y = stack.y(j);
            let values: Vec<f64> = stack
                .grid
                .cells()
                .iter()
                .enumerate()
                .map(|(c, cell)| f(c, cell.center, y))
                .collect();
            stack.slices[j] = values;
        }
        stack
    }

    /// Builds a stack from interior slices; boundary slices are added.
    pub fn from_interior(grid: Arc<CellGrid>, interior: Vec<Vec<f64>>) -> Self {
        let n_interior = interior.len();
        let mut stack = Self::zeros(grid, n_interior);
        for (j, s) in interior.into_iter().enumerate() {
            assert_eq!(s.len(), stack.grid.len(), "slice length mismatch");
            stack.slices[j + 1] = s;
        }
        stack
    }

    pub fn grid(&self) -> &Arc<CellGrid> {
        &self.grid
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n_interior + 1) as f64
    }

    /// `y_j = j/(N+1)`, exact at both ends.
    pub fn y(&self, j: usize) -> f64 {
        j as f64 / (self.n_interior + 1) as f64
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        &self.slices[j]
    }

    /// Mutable access to an interior slice.
    pub fn slice_mut(&mut self, j: usize) -> &mut [f64] {
        assert!(j >= 1 && j <= self.n_interior, "boundary slices are fixed at zero");
        &mut self.slices[j]
    }

    pub fn slices(&self) -> &[Vec<f64>] {
        &self.slices
    }

    /// `(u_{j+1} − 2u_j + u_{j−1})/h²` for an interior `j`.
    pub fn second_difference(&self, j: usize) -> Vec<f64> {
        let h2 = self.h() * self.h();
        let (lo, mid, hi) = (&self.slices[j - 1], &self.slices[j], &self.slices[j + 1]);
        (0..mid.len()).map(|c| (hi[c] - 2.0 * mid[c] + lo[c]) / h2).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.slices.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_measures() {
        let g = make_interval_grid(1.0, 10).unwrap();
        assert_eq!(g.len(), 10);
        for c in g.cells() {
            assert_relative_eq!(c.measure, 0.1, max_relative = 1e-15);
        }
        let g = make_interval_grid(2.0, 4).unwrap();
        assert_relative_eq!(g.total_measure(), 2.0, max_relative = 1e-15);
        let g = make_interval_grid(PI, 100).unwrap();
        assert!((g.total_measure() - PI).abs() <= 1e-12 * PI);
        assert_eq!(make_interval_grid(1.0, 3).unwrap_err(), GridError::TooFewCells { min: 4, got: 3 });
    }

    #[test]
    fn interval_boundary_flags() {
        let g = make_interval_grid(1.0, 6).unwrap();
        let flags: Vec<bool> = g.cells().iter().map(|c| c.boundary).collect();
        assert_eq!(flags, [true, false, false, false, false, true]);
    }

    #[test]
    fn square_measure_exact() {
        let g = make_square_grid(2.0, 16).unwrap();
        assert_eq!(g.len(), 256);
        assert!((g.total_measure() - 4.0).abs() <= 1e-12 * 4.0);
        let interior = g.cells().iter().filter(|c| !c.boundary).count();
        assert_eq!(interior, 14 * 14);
    }

    #[test]
    fn disk_measure_error_is_first_order() {
        for r in [1.0, 0.5] {
            let exact = PI * r * r;
            let g = make_disk_grid(r, 256).unwrap();
            assert!((g.total_measure() - exact).abs() < 0.02 * exact);
            for m in [16, 24, 32, 64, 128, 256] {
                let g = make_disk_grid(r, m).unwrap();
                let err = (g.total_measure() - exact).abs();
                assert!(err <= 0.25 * 2.0 * PI * r * g.dx(), "m={m}: {err}");
            }
        }
        assert!(make_disk_grid(0.0, 16).is_err());
        assert!(make_disk_grid(1.0, 7).is_err());
    }

    #[test]
    fn disk_is_mirror_symmetric() {
        let g = make_disk_grid(1.0, 20).unwrap();
        let mut keys: Vec<(i64, i64)> = g
            .cells()
            .iter()
            .map(|c| ((c.center[0] * 1e9).round() as i64, (c.center[1] * 1e9).round() as i64))
            .collect();
        keys.sort();
        for &(a, b) in &keys {
            assert!(keys.binary_search(&(-a, b)).is_ok());
            assert!(keys.binary_search(&(a, -b)).is_ok());
        }
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa_n(1, 0.7).unwrap(), 2.0);
        assert_relative_eq!(kappa_n(2, PI).unwrap(), 2.0 * PI, max_relative = 1e-15);
        assert_eq!(kappa_n(2, 0.0).unwrap(), 0.0);
        assert_eq!(kappa_n(3, 1.0), Err(GridError::Dimension(3)));
    }

    #[test]
    fn kappa_matches_circumference() {
        // κ₂ of the measure of a sub-disk approximates its circumference.
        let g = make_disk_grid(1.0, 128).unwrap();
        for r in [0.3, 0.6, 0.9] {
            let s: f64 = g
                .cells()
                .iter()
                .filter(|c| c.center[0].hypot(c.center[1]) < r)
                .map(|c| c.measure)
                .sum();
            let k = kappa_n(2, s).unwrap();
            assert!((k - 2.0 * PI * r).abs() < 2.0 * PI * 2.0 * g.dx(), "r={r}: {k}");
        }
    }

    #[test]
    fn radial_grid_grading() {
        let g = RadialGrid::new(2, 4.0, 4, Grading::Sqrt).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 1.0, 2.25, 4.0]);
        assert_eq!(g.kappa()[0], 0.0);
        assert!(g.kappa().windows(2).all(|w| w[1] >= w[0]));
        let u = RadialGrid::new(1, 1.0, 4, Grading::Uniform).unwrap();
        assert_eq!(u.kappa(), &[2.0; 5]);
        assert_eq!(u.max_spacing(), 0.25);
    }

    #[test]
    fn linear_stack_has_zero_second_difference() {
        let grid = Arc::new(make_interval_grid(1.0, 5).unwrap());
        let n = 6;
        let mut stack = SliceStack::zeros(grid, n);
        for j in 1..=n {
            let y = stack.y(j);
            for v in stack.slice_mut(j) {
                *v = 3.0 * y;
            }
        }
        // Only interior j away from the top boundary see a linear profile.
        for j in 1..n {
            assert!(stack.second_difference(j).iter().all(|v| v.abs() < 1e-9));
        }
        assert_eq!(stack.y(n + 1), 1.0);
        assert_eq!(stack.slice(0), &[0.0; 5]);
    }
}
