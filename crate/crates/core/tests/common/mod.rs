#![allow(dead_code)]

use std::f64::consts::PI;

use steiner_core::compare::{ProblemSpec, Resolution};
use steiner_core::forcing::Forcing;
use steiner_core::grid::Shape;
use steiner_core::nonlinearity::make_p_laplacian;

pub const P_SET: [f64; 4] = [1.5, 2.0, 3.0, 4.0];

/// Center and half-size (radius for the disk) of a domain.
pub fn frame(domain: Shape) -> ([f64; 2], f64) {
    match domain {
        Shape::Interval { length } => ([length / 2.0, 0.0], length / 2.0),
        Shape::Square { side } => ([side / 2.0, side / 2.0], side / 2.0),
        Shape::Disk { radius } => ([0.0, 0.0], radius),
    }
}

/// Uniform load, a centered Gaussian bump, and an off-center bump that
/// drifts with `y`.
pub fn forcing_shapes(domain: Shape) -> Vec<(&'static str, Forcing)> {
    let (o, size) = frame(domain);
    vec![
        ("uniform", Forcing::constant(1.0)),
        (
            "centered",
            Forcing::function(move |x, y| {
                let r2 = ((x[0] - o[0]).powi(2) + (x[1] - o[1]).powi(2)) / (size * size);
                4.0 * (-r2 / 0.18).exp() * (0.5 + y)
            }),
        ),
        ("shifted", shifted_bump(domain)),
    ]
}

pub fn shifted_bump(domain: Shape) -> Forcing {
    Forcing::function(shifted_bump_fn(domain))
}

pub fn shifted_bump_fn(domain: Shape) -> impl Fn([f64; 2], f64) -> f64 + Clone + Send + Sync + 'static {
    let (o, size) = frame(domain);
    move |x: [f64; 2], y: f64| {
        let cx = o[0] + size * (0.45 - 0.3 * y);
        let cy = o[1] - size * 0.3;
        let r2 = ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)) / (size * size);
        4.0 * (-r2 / 0.08).exp() * (1.0 + (PI * y).sin())
    }
}

/// Two refinement levels `(cells, N, s-intervals)` per dimension.
pub fn levels(dim: usize) -> [Resolution; 2] {
    let r = |cells, slices, s_intervals| Resolution { cells, slices, s_intervals };
    if dim == 1 {
        [r(32, 7, 32), r(64, 15, 64)]
    } else {
        [r(16, 3, 16), r(24, 7, 32)]
    }
}

pub fn domains(dim: usize) -> [Shape; 2] {
    if dim == 1 {
        [Shape::Interval { length: 1.0 }, Shape::Interval { length: 2.0 }]
    } else {
        [Shape::Square { side: 1.0 }, Shape::Disk { radius: 0.5 }]
    }
}

/// Every configuration of the test matrix at one level.
pub fn matrix(level: usize) -> Vec<(String, ProblemSpec)> {
    let mut out = Vec::new();
    for dim in [1, 2] {
        for domain in domains(dim) {
            for p in P_SET {
                for (name, f) in forcing_shapes(domain) {
                    let label = format!("n={dim} {domain:?} p={p} f={name}");
                    let spec = ProblemSpec::new(domain, make_p_laplacian(p).unwrap(), f, levels(dim)[level]);
                    out.push((label, spec));
                }
            }
        }
    }
    out
}

/// One pass/fail line in a fixed format.
pub fn report(name: &str, pass: bool, detail: &str) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}
