//! Diffusion nonlinearities `a`, the flux `β(t) = a(t) t`, the energy density
//! `A(t) = t β(t)` and the potential `B(t) = ∫₀ᵗ β`.
//!
//! Every law used by the solvers implements [`Flux`]. [`Nonlinearity`] covers the
//! power-type prototypes, tabulated data and arbitrary closures;
//! [`RegularizedNonlinearity`] is the Moreau–Yosida smoothing of any of them.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::quadrature::gauss_legendre;

/// Below this argument `a(t) = β(t)/t` is frozen at its value at the threshold.
pub const A_GUARD: f64 = 1e-14;

/// Default sampling range for hypothesis checks.
pub const DEFAULT_SAMPLE_MIN: f64 = 1e-6;
pub const DEFAULT_SAMPLE_MAX: f64 = 1e3;
pub const DEFAULT_SAMPLE_COUNT: usize = 256;

#[derive(Debug, Error)]
pub enum NonlinearityError {
    #[error("growth exponent must satisfy p > 1, got {0}")]
    InvalidExponent(f64),
    #[error("regularization parameter {name} = {value} out of range")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("table: {0}")]
    Table(String),
    #[error("energy density A is not convex near t = {0}; proximal bracket fails")]
    NonConvex(f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Scalar constitutive law evaluated on `t = |∇ₓu| ≥ 0`.
pub trait Flux: Send + Sync {
    /// `β(t)`, with `β(0) = 0`.
    fn beta(&self, t: f64) -> f64;

    /// `β'(t)`; finite for every `t ≥ 0`.
    fn dbeta(&self, t: f64) -> f64;

    /// `B(t) = ∫₀ᵗ β(σ) dσ`.
    fn potential(&self, t: f64) -> f64;

    /// `A(t) = t β(t)`.
    fn energy_density(&self, t: f64) -> f64 {
        t * self.beta(t)
    }

    /// `a(t) = β(t)/t`, guarded near the origin.
    fn a(&self, t: f64) -> f64 {
        let t = t.max(A_GUARD);
        self.beta(t) / t
    }

    /// Ellipticity constant `ε` when `ε ≤ β' ≤ 1/ε` holds on `[0, ∞)`.
    fn ellipticity(&self) -> Option<f64>;

    fn describe(&self) -> String;
}

/// `β` extended as an odd function, as needed when the argument of `β` is
/// a signed second difference.
pub fn odd_beta(flux: &dyn Flux, w: f64) -> f64 {
    if w >= 0.0 {
        flux.beta(w)
    } else {
        -flux.beta(-w)
    }
}

pub fn odd_dbeta(flux: &dyn Flux, w: f64) -> f64 {
    flux.dbeta(w.abs())
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Law {
    Power { p: f64 },
    ShiftedPower { p: f64, tau: f64 },
    Table(Arc<BetaTable>),
    Custom(ScalarFn),
}

/// Growth and regularity data attached to a law.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Growth {
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone)]
pub struct Nonlinearity {
    law: Law,
    growth: Growth,
    smooth_eps: Option<f64>,
    potential: Option<Arc<PotentialTable>>,
    name: String,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("growth", &self.growth)
            .field("smooth_eps", &self.smooth_eps)
            .finish()
    }
}

/// The p-Laplacian prototype `a(t) = t^{p-2}`.
pub fn make_p_laplacian(p: f64) -> Result<Nonlinearity, NonlinearityError> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(NonlinearityError::InvalidExponent(p));
    }
    Ok(Nonlinearity {
        law: Law::Power { p },
        growth: Growth { p, c1: 1.0, c2: 1.0 },
        smooth_eps: if p == 2.0 { Some(1.0) } else { None },
        potential: None,
        name: format!("p_laplacian({p})"),
    })
}

/// `β(t) = t^{p-1} + τ t`.
pub fn make_shifted_p(p: f64, tau: f64) -> Result<Nonlinearity, NonlinearityError> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(NonlinearityError::InvalidExponent(p));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(NonlinearityError::InvalidParameter { name: "tau", value: tau });
    }
    // For p < 2 the linear shift dominates at infinity.
    let growth = if p >= 2.0 {
        Growth { p, c1: 1.0, c2: 1.0 + tau }
    } else if tau > 0.0 {
        Growth { p: 2.0, c1: tau, c2: 1.0 + tau }
    } else {
        Growth { p, c1: 1.0, c2: 1.0 }
    };
    let smooth_eps = if p == 2.0 { Some(1.0 / (1.0 + tau)) } else { None };
    Ok(Nonlinearity {
        law: Law::ShiftedPower { p, tau },
        growth,
        smooth_eps,
        potential: None,
        name: format!("shifted_p({p}, {tau})"),
    })
}

impl Nonlinearity {
    /// Law given by an arbitrary `β` closure. `B` is tabulated once here.
    pub fn custom(
        name: impl Into<String>,
        beta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        growth: Growth,
        smooth_eps: Option<f64>,
    ) -> Self {
        let beta: ScalarFn = Arc::new(move |t: f64| if t == 0.0 { 0.0 } else { beta(t) });
        let table = {
            let b = beta.clone();
            PotentialTable::build(move |t| b(t))
        };
        Nonlinearity {
            law: Law::Custom(beta),
            growth,
            smooth_eps,
            potential: Some(Arc::new(table)),
            name: name.into(),
        }
    }

    /// Piecewise-linear `β` through `(t_k, β_k)`; the first pair must be `(0, 0)`.
    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self, NonlinearityError> {
        let table = BetaTable::new(points)?;
        let (growth, smooth_eps) = table.growth();
        Ok(Nonlinearity {
            name: format!("table({} points)", table.t.len()),
            law: Law::Table(Arc::new(table)),
            growth,
            smooth_eps,
            potential: None,
        })
    }

    /// Reads a two-column whitespace or comma separated `(t, beta)` file.
    pub fn from_table_file(path: &Path) -> Result<Self, NonlinearityError> {
        let text = std::fs::read_to_string(path)?;
        let points = parse_table(&text)?;
        let mut nl = Self::tabulated(points)?;
        nl.name = format!("table({})", path.display());
        Ok(nl)
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn p(&self) -> f64 {
        self.growth.p
    }

    pub fn smooth_eps(&self) -> Option<f64> {
        self.smooth_eps
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `(A'(s), A''(s))` when available in closed form.
    fn energy_derivatives(&self, s: f64) -> Option<(f64, f64)> {
        match &self.law {
            Law::Power { p } => {
                let p = *p;
                let d1 = p * s.powf(p - 1.0);
                let d2 = p * (p - 1.0) * s.max(A_GUARD).powf(p - 2.0);
                Some((d1, d2))
            }
            Law::ShiftedPower { p, tau } => {
                let p = *p;
                let d1 = p * s.powf(p - 1.0) + 2.0 * tau * s;
                let d2 = p * (p - 1.0) * s.max(A_GUARD).powf(p - 2.0) + 2.0 * tau;
                Some((d1, d2))
            }
            Law::Table(table) => {
                let (b, db) = table.eval(s);
                Some((b + s * db, 2.0 * db))
            }
            Law::Custom(_) => None,
        }
    }
}

impl Flux for Nonlinearity {
    fn beta(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Power { p } => t.powf(p - 1.0),
            Law::ShiftedPower { p, tau } => t.powf(p - 1.0) + tau * t,
            Law::Table(table) => table.eval(t).0,
            Law::Custom(beta) => beta(t),
        }
    }

    fn dbeta(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match &self.law {
            Law::Power { p } => {
                if *p == 2.0 {
                    1.0
                } else {
                    (p - 1.0) * t.max(A_GUARD).powf(p - 2.0)
                }
            }
            Law::ShiftedPower { p, tau } => {
                let core = if *p == 2.0 {
                    1.0
                } else {
                    (p - 1.0) * t.max(A_GUARD).powf(p - 2.0)
                };
                core + tau
            }
            Law::Table(table) => table.eval(t).1,
            Law::Custom(beta) => {
                let step = 1e-6 * t.max(1e-6);
                let lo = (t - step).max(0.0);
                (beta(t + step) - beta(lo)) / (t + step - lo)
            }
        }
    }

    fn potential(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Power { p } => t.powf(*p) / p,
            Law::ShiftedPower { p, tau } => t.powf(*p) / p + 0.5 * tau * t * t,
            Law::Table(table) => table.integral(t),
            Law::Custom(beta) => self
                .potential
                .as_ref()
                .map(|tab| tab.eval(t, |s| beta(s)))
                .unwrap_or(0.0),
        }
    }

    fn ellipticity(&self) -> Option<f64> {
        self.smooth_eps
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// Piecewise-linear flux data.
#[derive(Debug, Clone)]
struct BetaTable {
    t: Vec<f64>,
    beta: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BetaTable {
    fn new(points: Vec<(f64, f64)>) -> Result<Self, NonlinearityError> {
        if points.len() < 2 {
            return Err(NonlinearityError::Table("need at least two rows".into()));
        }
        if points[0] != (0.0, 0.0) {
            return Err(NonlinearityError::Table("first row must be `0 0`".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(NonlinearityError::Table(format!(
                    "t must be strictly increasing (found {} after {})",
                    w[1].0, w[0].0
                )));
            }
        }
        if points.iter().any(|(t, b)| !t.is_finite() || !b.is_finite()) {
            return Err(NonlinearityError::Table("non-finite entry".into()));
        }
        let (t, beta): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        let mut cumulative = vec![0.0; t.len()];
        for k in 1..t.len() {
            cumulative[k] = cumulative[k - 1] + 0.5 * (beta[k] + beta[k - 1]) * (t[k] - t[k - 1]);
        }
        Ok(Self { t, beta, cumulative })
    }

    fn segment(&self, t: f64) -> usize {
        let last = self.t.len() - 2;
        match self.t.partition_point(|&x| x <= t) {
            0 => 0,
            k => (k - 1).min(last),
        }
    }

    fn slope(&self, k: usize) -> f64 {
        (self.beta[k + 1] - self.beta[k]) / (self.t[k + 1] - self.t[k])
    }

    /// `(β(t), β'(t))`, extrapolating the last segment.
    fn eval(&self, t: f64) -> (f64, f64) {
        let k = self.segment(t);
        let slope = self.slope(k);
        (self.beta[k] + slope * (t - self.t[k]), slope)
    }

    fn integral(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let (b, _) = self.eval(t);
        self.cumulative[k] + 0.5 * (self.beta[k] + b) * (t - self.t[k])
    }

    fn growth(&self) -> (Growth, Option<f64>) {
        let slopes: Vec<f64> = (0..self.t.len() - 1).map(|k| self.slope(k)).collect();
        let last_slope = *slopes.last().unwrap();
        let mut c2 = last_slope.max(0.0);
        for (&t, &b) in self.t.iter().zip(&self.beta) {
            c2 = c2.max(b / (t + 1.0));
        }
        let t_end = *self.t.last().unwrap();
        let mut c1 = last_slope;
        let samples = 2000;
        for i in 1..=samples {
            let t = 1.0 + (2.0 * t_end.max(2.0) - 1.0) * i as f64 / samples as f64;
            let (b, _) = self.eval(t);
            c1 = c1.min(t * b / (t * t - 1.0));
        }
        let c1 = if c1 > 0.0 { c1 } else { f64::MIN_POSITIVE };
        let min_slope = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_slope = slopes.iter().cloned().fold(0.0, f64::max);
        let eps = if min_slope > 0.0 {
            Some(min_slope.min(1.0 / max_slope))
        } else {
            None
        };
        (Growth { p: 2.0, c1, c2: c2.max(f64::MIN_POSITIVE) }, eps)
    }
}

fn parse_table(text: &str) -> Result<Vec<(f64, f64)>, NonlinearityError> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(NonlinearityError::Table(format!(
                "line {}: expected two columns",
                lineno + 1
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| {
                NonlinearityError::Table(format!("line {}: bad number `{s}`", lineno + 1))
            })
        };
        points.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(points)
}

/// Cached values of `B = ∫β` on a log-spaced grid, evaluated between nodes by
/// cubic Hermite interpolation using `B' = β`.
pub(crate) struct PotentialTable {
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

const TABLE_MIN: f64 = 1e-8;
const TABLE_MAX: f64 = 1e4;
const TABLE_SIZE: usize = 2400;

impl PotentialTable {
    pub(crate) fn build(beta: impl Fn(f64) -> f64) -> Self {
        let mut nodes = Vec::with_capacity(TABLE_SIZE + 1);
        nodes.push(0.0);
        let ratio = (TABLE_MAX / TABLE_MIN).ln() / (TABLE_SIZE - 1) as f64;
        for k in 0..TABLE_SIZE {
            nodes.push(TABLE_MIN * (ratio * k as f64).exp());
        }
        let mut values = vec![0.0; nodes.len()];
        let mut slopes = vec![0.0; nodes.len()];
        for k in 1..nodes.len() {
            values[k] = values[k - 1] + gauss_legendre(&beta, nodes[k - 1], nodes[k]);
            slopes[k] = beta(nodes[k]);
        }
        Self { nodes, values, slopes }
    }

    /// `beta` is used for quadrature outside the tabulated range.
    pub(crate) fn eval(&self, t: f64, beta: impl Fn(f64) -> f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t <= self.nodes[1] {
            return gauss_legendre(&beta, 0.0, t);
        }
        let last = self.nodes.len() - 1;
        if t >= self.nodes[last] {
            let start = self.nodes[last];
            let pieces = ((t / start).log2().ceil() as usize).max(1) * 4;
            let width = (t - start) / pieces as f64;
            let tail: f64 = (0..pieces)
                .map(|i| {
                    let a = start + width * i as f64;
                    gauss_legendre(&beta, a, a + width)
                })
                .sum();
            return self.values[last] + tail;
        }
        let k = self.nodes.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (self.nodes[k], self.nodes[k + 1]);
        let width = t1 - t0;
        let x = (t - t0) / width;
        let (h00, h10, h01, h11) = hermite_basis(x);
        h00 * self.values[k]
            + h10 * width * self.slopes[k]
            + h01 * self.values[k + 1]
            + h11 * width * self.slopes[k + 1]
    }
}

fn hermite_basis(x: f64) -> (f64, f64, f64, f64) {
    let x2 = x * x;
    let x3 = x2 * x;
    (
        2.0 * x3 - 3.0 * x2 + 1.0,
        x3 - 2.0 * x2 + x,
        -2.0 * x3 + 3.0 * x2,
        x3 - x2,
    )
}

/// Moreau–Yosida smoothing of `A` plus an ellipticity shift `τ t`.
#[derive(Clone)]
pub struct RegularizedNonlinearity {
    base: Nonlinearity,
    eps: f64,
    tau: f64,
    potential: Arc<PotentialTable>,
}

impl fmt::Debug for RegularizedNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegularizedNonlinearity")
            .field("base", &self.base.name)
            .field("eps", &self.eps)
            .field("tau", &self.tau)
            .finish()
    }
}

/// Builds `A_ε`, `β_{ε,τ}` and `a_{ε,τ}` from `nl`.
///
/// Fails with [`NonlinearityError::NonConvex`] when sampled slopes of `A`
/// decrease, since the proximal minimization then has no unimodal bracket.
pub fn moreau_yosida(
    nl: &Nonlinearity,
    eps: f64,
    tau: f64,
) -> Result<RegularizedNonlinearity, NonlinearityError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(NonlinearityError::InvalidParameter { name: "eps", value: eps });
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(NonlinearityError::InvalidParameter { name: "tau", value: tau });
    }
    let samples = log_samples(DEFAULT_SAMPLE_MIN, DEFAULT_SAMPLE_MAX, DEFAULT_SAMPLE_COUNT);
    if let Some(t) = first_convexity_violation(&|t| nl.energy_density(t), &samples) {
        return Err(NonlinearityError::NonConvex(t));
    }
    let mut reg = RegularizedNonlinearity {
        base: nl.clone(),
        eps,
        tau,
        potential: Arc::new(PotentialTable { nodes: vec![], values: vec![], slopes: vec![] }),
    };
    let table = {
        let r = reg.clone();
        PotentialTable::build(move |t| r.beta_uncached(t))
    };
    reg.potential = Arc::new(table);
    Ok(reg)
}

impl RegularizedNonlinearity {
    pub fn base(&self) -> &Nonlinearity {
        &self.base
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Proximal point `P_ε(t) = argmin_{s ≥ 0} |t − s|²/(2ε) + A(s)`.
    pub fn prox(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.base.energy_derivatives(t) {
            Some(_) => self.prox_newton(t),
            None => self.prox_golden(t),
        }
    }

    /// Golden-section search on `[0, t]`, argument tolerance `1e-10 · t`.
    pub fn prox_golden(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let objective = |s: f64| (t - s) * (t - s) / (2.0 * self.eps) + self.base.energy_density(s);
        let tol = 1e-10 * t;
        let invphi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0, t);
        let mut x1 = hi - invphi * (hi - lo);
        let mut x2 = lo + invphi * (hi - lo);
        let mut f1 = objective(x1);
        let mut f2 = objective(x2);
        while hi - lo > tol {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - invphi * (hi - lo);
                f1 = objective(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + invphi * (hi - lo);
                f2 = objective(x2);
            }
        }
        let mid = 0.5 * (lo + hi);
        // The endpoints are admissible minimizers too.
        [0.0, mid, t]
            .into_iter()
            .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
            .unwrap()
    }

    /// Safeguarded Newton on `s + ε A'(s) = t`.
    fn prox_newton(&self, t: f64) -> f64 {
        let phi = |s: f64| -> (f64, f64) {
            let (d1, d2) = self.base.energy_derivatives(s).unwrap();
            (s + self.eps * d1 - t, 1.0 + self.eps * d2)
        };
        let (mut lo, mut hi) = (0.0, t);
        if phi(lo).0 >= 0.0 {
            return 0.0;
        }
        let mut s = t / (1.0 + self.eps * self.base.energy_derivatives(t).unwrap().1.min(1e300));
        s = s.clamp(lo, hi);
        for _ in 0..200 {
            let (value, slope) = phi(s);
            if value == 0.0 {
                return s;
            }
            if value > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let mut next = s - value / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() <= 1e-15 * t || hi - lo <= 1e-15 * t {
                return next;
            }
            s = next;
        }
        s
    }

    /// `A_ε(t)`.
    pub fn envelope(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let s = self.prox(t);
        (t - s) * (t - s) / (2.0 * self.eps) + self.base.energy_density(s)
    }

    /// `A_ε'(t) = (t − P_ε(t))/ε`.
    pub fn envelope_slope(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        (t - self.prox(t)) / self.eps
    }

    fn beta_uncached(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let t0 = 1e-12;
        if t < t0 {
            return t * (self.envelope(t0) / (t0 * t0)) + self.tau * t;
        }
        self.envelope(t) / t + self.tau * t
    }
}

impl Flux for RegularizedNonlinearity {
    fn beta(&self, t: f64) -> f64 {
        self.beta_uncached(t)
    }

    fn dbeta(&self, t: f64) -> f64 {
        let t0 = 1e-12;
        if t < t0 {
            return self.envelope(t0) / (t0 * t0) + self.tau;
        }
        let s = self.prox(t);
        let env = (t - s) * (t - s) / (2.0 * self.eps) + self.base.energy_density(s);
        let slope = (t - s) / self.eps;
        (slope / t - env / (t * t)).max(0.0) + self.tau
    }

    fn potential(&self, t: f64) -> f64 {
        self.potential.eval(t, |s| self.beta_uncached(s))
    }

    fn ellipticity(&self) -> Option<f64> {
        if self.tau > 0.0 {
            Some(self.tau.min(1.0 / (1.0 / self.eps + self.tau)))
        } else {
            None
        }
    }

    fn describe(&self) -> String {
        format!("moreau_yosida({}, eps={}, tau={})", self.base.name, self.eps, self.tau)
    }
}

/// `count` log-spaced samples in `(min, max]`.
pub fn log_samples(min: f64, max: f64, count: usize) -> Vec<f64> {
    let ratio = (max / min).ln();
    (1..=count)
        .map(|k| min * (ratio * k as f64 / count as f64).exp())
        .collect()
}

/// First sample `t` at which the slope of `f` decreases (relative slack 1e-9).
fn first_convexity_violation(f: &dyn Fn(f64) -> f64, samples: &[f64]) -> Option<f64> {
    samples.windows(3).find_map(|w| {
        let (a, b, c) = (w[0], w[1], w[2]);
        let (fa, fb, fc) = (f(a), f(b), f(c));
        let left = (fb - fa) / (b - a);
        let right = (fc - fb) / (c - b);
        let slack = 1e-9 * (left.abs() + right.abs()) + 1e-14;
        (right < left - slack).then_some(b)
    })
}

/// Outcome of one sampled hypothesis.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Check {
    pub passed: bool,
    pub first_violation: Option<f64>,
}

impl Check {
    fn from_violation(first_violation: Option<f64>) -> Self {
        Self { passed: first_violation.is_none(), first_violation }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub sample_min: f64,
    pub sample_max: f64,
    pub sample_count: usize,
    /// `β(0) = 0` and `β` non-decreasing.
    pub monotone: Check,
    /// `C₁(t^p − 1) ≤ A(t)`.
    pub lower_growth: Check,
    /// `β(t) ≤ C₂(t^{p−1} + 1)`.
    pub upper_growth: Check,
    pub convex: Check,
    /// Two-sided slope bound, only when an ellipticity constant is claimed.
    pub slope_bounds: Option<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.monotone.passed
            && self.lower_growth.passed
            && self.upper_growth.passed
            && self.convex.passed
            && self.slope_bounds.as_ref().map_or(true, |c| c.passed)
    }
}

/// Samples the structural hypotheses on `sample_count` log-spaced points of
/// `(1e-6, 1e3]`. A pass only certifies the sampled range.
pub fn validate_hypotheses(nl: &Nonlinearity, sample_count: usize) -> ValidationReport {
    validate_on(nl, nl.growth, nl.smooth_eps, sample_count, DEFAULT_SAMPLE_MIN, DEFAULT_SAMPLE_MAX)
}

pub fn validate_on(
    flux: &dyn Flux,
    growth: Growth,
    smooth_eps: Option<f64>,
    sample_count: usize,
    min: f64,
    max: f64,
) -> ValidationReport {
    let sample_count = sample_count.max(3);
    let samples = log_samples(min, max, sample_count);
    let rel = 1e-12;

    let mut monotone = (flux.beta(0.0) != 0.0).then_some(0.0);
    if monotone.is_none() {
        let mut prev: (f64, f64) = (0.0, 0.0);
        for &t in &samples {
            let b = flux.beta(t);
            if b < prev.1 - rel * prev.1.abs() {
                monotone = Some(t);
                break;
            }
            prev = (t, b);
        }
    }

    let Growth { p, c1, c2 } = growth;
    let lower = samples.iter().copied().find(|&t| {
        let lhs = c1 * (t.powf(p) - 1.0);
        let a = flux.energy_density(t);
        lhs > a + rel * a.abs()
    });
    let upper = samples.iter().copied().find(|&t| {
        let rhs = c2 * (t.powf(p - 1.0) + 1.0);
        flux.beta(t) > rhs * (1.0 + rel)
    });
    let convex = first_convexity_violation(&|t| flux.energy_density(t), &samples);

    let slope_bounds = smooth_eps.map(|eps| {
        let mut points = vec![0.0];
        points.extend_from_slice(&samples);
        let violation = points.windows(2).find_map(|w| {
            let slope = (flux.beta(w[1]) - flux.beta(w[0])) / (w[1] - w[0]);
            let ok = slope >= eps * (1.0 - 1e-9) && slope <= (1.0 / eps) * (1.0 + 1e-9);
            (!ok).then_some(w[1])
        });
        Check::from_violation(violation)
    });

    ValidationReport {
        sample_min: min,
        sample_max: max,
        sample_count,
        monotone: Check::from_violation(monotone),
        lower_growth: Check::from_violation(lower),
        upper_growth: Check::from_violation(upper),
        convex: Check::from_violation(convex),
        slope_bounds,
    }
}

/// Checks `lo ≤ (β(t₂) − β(t₁))/(t₂ − t₁) ≤ hi` on consecutive samples,
/// returning the first offending right endpoint.
pub fn slope_bound_violation(flux: &dyn Flux, lo: f64, hi: f64, samples: &[f64]) -> Option<f64> {
    let mut points = vec![0.0];
    points.extend_from_slice(samples);
    points.windows(2).find_map(|w| {
        let slope = (flux.beta(w[1]) - flux.beta(w[0])) / (w[1] - w[0]);
        let ok = slope >= lo * (1.0 - 1e-7) - 1e-12 && slope <= hi * (1.0 + 1e-7);
        (!ok).then_some(w[1])
    })
}

/// Monotonicity of the vector field `ξ ↦ a(|ξ|) ξ`.
pub fn vector_field_monotonicity(flux: &dyn Flux, xi: &[f64], eta: &[f64]) -> f64 {
    let nx = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ne = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (ax, ae) = (flux.a(nx), flux.a(ne));
    xi.iter()
        .zip(eta)
        .map(|(x, e)| (ax * x - ae * e) * (x - e))
        .sum()
}
