//! Solver and operator checks against independent closed forms.

use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_relative_eq;
use steiner_core::forcing::Forcing;
use steiner_core::grid::{make_disk_grid, make_interval_grid, make_square_grid, Grading, RadialGrid, SliceStack};
use steiner_core::nonlinearity::{make_p_laplacian, Flux};
use steiner_core::rearrange::MassFunction;
use steiner_core::solver::{energy_jh, solve_ph, DiscreteProblem, SolverOptions};
use steiner_core::star::{solve_star_system, StarOperator, StarSystem};

fn linear_flux() -> Arc<dyn Flux> {
    Arc::new(make_p_laplacian(2.0).unwrap())
}

/// Max-norm error against `u = sin(πx) sin(πy)` for `f = 2π² u`.
fn fourier_error(m: usize, n: usize) -> f64 {
    let grid = Arc::new(make_interval_grid(1.0, m).unwrap());
    let f = Forcing::function(|x, y| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * y).sin());
    let stack = f.sample(&grid, n, None).unwrap();
    let prob = DiscreteProblem::new(linear_flux(), stack).unwrap();
    let sol = solve_ph(&prob, &SolverOptions::default()).unwrap();
    let mut err = 0.0f64;
    for j in 1..=n {
        let y = sol.stack.y(j);
        for (c, cell) in grid.cells().iter().enumerate() {
            let exact = (PI * cell.center[0]).sin() * (PI * y).sin();
            err = err.max((sol.stack.slice(j)[c] - exact).abs());
        }
    }
    err
}

#[test]
fn linear_problem_matches_fourier_solution_at_second_order() {
    let coarse = fourier_error(16, 15);
    let fine = fourier_error(32, 31);
    let rate = (coarse / fine).log2();
    assert!(coarse < 1e-2, "{coarse}");
    assert!(rate >= 1.8, "rate {rate} ({coarse:e} → {fine:e})");
}

/// `I₀(x) = Σ (x/2)^{2k} / (k!)²`.
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// `−v'' − v'/r + c v = 1`, `v'(0) = 0`, `v(R) = 0` by second-order finite
/// differences on `k` intervals; returns nodal values on `[0, R]`.
fn radial_two_point(c: f64, radius: f64, k: usize) -> Vec<f64> {
    let d = radius / k as f64;
    // Unknowns v_0..v_{k−1}; v_k = 0.
    let mut sub = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut sup = vec![0.0; k];
    let rhs = vec![1.0; k];
    // At r = 0 the Laplacian is 2v'', discretized with the even ghost.
    diag[0] = 4.0 / (d * d) + c;
    sup[0] = -4.0 / (d * d);
    for i in 1..k {
        let r = i as f64 * d;
        sub[i] = -1.0 / (d * d) + 1.0 / (2.0 * r * d);
        diag[i] = 2.0 / (d * d) + c;
        sup[i] = -1.0 / (d * d) - 1.0 / (2.0 * r * d);
    }
    // Thomas elimination.
    let mut cp = vec![0.0; k];
    let mut dp = vec![0.0; k];
    for i in 0..k {
        let a = if i == 0 { 0.0 } else { sub[i] };
        let m = diag[i] - if i == 0 { 0.0 } else { a * cp[i - 1] };
        cp[i] = sup[i] / m;
        dp[i] = (rhs[i] - if i == 0 { 0.0 } else { a * dp[i - 1] }) / m;
    }
    let mut v = vec![0.0; k + 1];
    for i in (0..k).rev() {
        v[i] = dp[i] - if i + 1 < k { cp[i] * v[i + 1] } else { 0.0 };
    }
    v
}

#[test]
fn radial_oracle_agrees_with_bessel_solution() {
    let (c, radius, k) = (8.0, 0.5, 4000);
    let v = radial_two_point(c, radius, k);
    let s = c.sqrt();
    for (i, vi) in v.iter().enumerate().step_by(200) {
        let r = radius * i as f64 / k as f64;
        let exact = (1.0 - bessel_i0(s * r) / bessel_i0(s * radius)) / c;
        assert!((vi - exact).abs() < 1e-7, "r={r}: {vi} vs {exact}");
    }
}

#[test]
fn disk_block_matches_radial_two_point_solve() {
    // N = 1: the single slice solves −Δv + (2/h²) v = 1 with h = 1/2.
    let radius = 0.5;
    let grid = Arc::new(make_disk_grid(radius, 64).unwrap());
    let stack = SliceStack::from_fn(grid.clone(), 1, |_, _, _| 1.0);
    let prob = DiscreteProblem::new(linear_flux(), stack).unwrap();
    let sol = solve_ph(&prob, &SolverOptions::default()).unwrap();
    let k = 8000;
    let oracle = radial_two_point(8.0, radius, k);
    let at = |r: f64| {
        let x = (r / radius * k as f64).min(k as f64);
        let i = (x.floor() as usize).min(k - 1);
        let t = x - i as f64;
        oracle[i] * (1.0 - t) + oracle[i + 1] * t
    };
    let peak = oracle[0];
    let mut err = 0.0f64;
    for (c, cell) in grid.cells().iter().enumerate() {
        let r = cell.center[0].hypot(cell.center[1]);
        err = err.max((sol.stack.slice(1)[c] - at(r)).abs());
    }
    assert!(err <= 0.01 * peak, "relative error {}", err / peak);
}

#[test]
fn cross_section_p_laplacian_is_homogeneous() {
    // −Δ₃u = f  ⇒  −Δ₃(2u) = 4f.
    let flux: Arc<dyn Flux> = Arc::new(make_p_laplacian(3.0).unwrap());
    for grid in [make_interval_grid(1.0, 40).unwrap(), make_square_grid(1.0, 12).unwrap()] {
        let grid = Arc::new(grid);
        let f: Vec<f64> = grid.cells().iter().map(|c| 1.0 + c.center[0]).collect();
        let solve = |scale: f64| {
            let data = f.iter().map(|v| scale * v).collect();
            let prob = DiscreteProblem::cross_section(flux.clone(), grid.clone(), data).unwrap();
            solve_ph(&prob, &SolverOptions { tol: 1e-11, ..SolverOptions::default() }).unwrap().stack
        };
        let u1 = solve(1.0);
        let u2 = solve(4.0);
        for (a, b) in u1.slice(1).iter().zip(u2.slice(1)) {
            assert_relative_eq!(*b, 2.0 * a, max_relative = 1e-7);
        }
    }
}

#[test]
fn energy_matches_hand_summation() {
    // Four cells of width 1/4, N = 1 (h = 1/2), u₁ = [1, 2, 2, 1], f₁ = 1.
    // Half-cell gradients: 8, 4 | 4, 0 | 0, −4 | −4, −8, each on measure 1/8,
    // so Σ ∫ B(|∇u|) = (1/8)(1/2)(64+16+16+0+0+16+16+64) = 12.
    // y-terms: ½ (∫u₁²/h² + ∫u₁²/h²) = 4 · (1/4)(1+4+4+1) = 10.
    // Load: (1/4)(1+2+2+1) = 1.5.
    let grid = Arc::new(make_interval_grid(1.0, 4).unwrap());
    let f = SliceStack::from_fn(grid.clone(), 1, |_, _, _| 1.0);
    let prob = DiscreteProblem::new(linear_flux(), f).unwrap();
    let u = SliceStack::from_interior(grid, vec![vec![1.0, 2.0, 2.0, 1.0]]);
    assert_relative_eq!(energy_jh(&prob, &u).unwrap(), 12.0 + 10.0 - 1.5, epsilon = 1e-12);
}

#[test]
fn apply_a_on_quadratic_mass_in_the_plane() {
    // U = s − s²/(2L): U_ss = −1/L, so AU = κ β(κ/L) = κ³/L² = 8π^{3/2} s^{3/2}/L².
    let l = 2.0;
    let grid = RadialGrid::new(2, l, 40, Grading::Uniform).unwrap();
    let op = StarOperator::new(grid.clone(), Arc::new(make_p_laplacian(3.0).unwrap()));
    let u: Vec<f64> = grid.nodes().iter().map(|s| s - s * s / (2.0 * l)).collect();
    let au = op.apply(&MassFunction::from_values(grid.nodes().to_vec(), u)).unwrap();
    for (s, v) in grid.nodes().iter().zip(&au).skip(1) {
        let exact = 8.0 * PI.powf(1.5) * s.powf(1.5) / (l * l);
        assert_relative_eq!(*v, exact, max_relative = 1e-9);
    }
}

#[test]
fn one_slice_star_system_matches_closed_form() {
    // N = 1, n = 1, p = 2, F₁ = s on (0, 1): −4V'' + 8V = s, V(0) = 0, V'(1) = 0,
    // so V = s/8 − sinh(√2 s) / (8√2 cosh √2).
    let m = 400;
    let grid = RadialGrid::new(1, 1.0, m, Grading::Uniform).unwrap();
    let op = StarOperator::new(grid.clone(), linear_flux());
    let nodes = grid.nodes().to_vec();
    let zero = MassFunction::from_values(nodes.clone(), vec![0.0; m + 1]);
    let f1 = MassFunction::from_values(nodes.clone(), nodes.clone());
    let sys = StarSystem { op, n_interior: 1, f: vec![zero.clone(), f1, zero] };
    let sol = solve_star_system(&sys, 1e-13, 1000).unwrap();
    let r2 = 2f64.sqrt();
    for (i, &s) in nodes.iter().enumerate() {
        let exact = s / 8.0 - (r2 * s).sinh() / (8.0 * r2 * r2.cosh());
        assert!((sol.v[1].values()[i] - exact).abs() < 1e-6, "s={s}");
    }
}
