//! Right-hand sides `f(x, y)`: closed-form expressions, gridded samples or
//! closures, sampled slice-wise as `f_j(x) = f(x, jh)`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use evalexpr::{
    build_operator_tree, ContextWithMutableFunctions, ContextWithMutableVariables, EvalexprError, Function,
    HashMapContext, Node, Value,
};
use thiserror::Error;

use crate::grid::{CellGrid, SliceStack};

#[derive(Debug, Error)]
pub enum ForcingError {
    #[error("expression: {0}")]
    Expression(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("csv has no samples")]
    Empty,
    #[error("mollification half-width must be positive, got {0}")]
    BadMollifier(f64),
    #[error("f({x:?}, {y}) = {value} is not finite")]
    NonFinite { x: [f64; 2], y: f64, value: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

type PointFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Forcing {
    /// Expression in `x` (alias `x1`), `x2`, `y`, `r` (distance from the
    /// domain center) and `pi`.
    Expr { source: String, node: Arc<Node> },
    Samples(Arc<GriddedData>),
    Function(PointFn),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Expr { source, .. } => write!(f, "Expr({source:?})"),
            Forcing::Samples(d) => write!(f, "Samples({} points)", d.points.len()),
            Forcing::Function(_) => write!(f, "Function"),
        }
    }
}

/// Scattered samples `(x, y, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedData {
    pub points: Vec<([f64; 2], f64, f64)>,
}

/// Rewrites bare integer literals as floats so `1/2` means one half.
fn floatify(expr: &str) -> String {
    let chars: Vec<char> = expr.chars().collect();
    let mut out = String::with_capacity(expr.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev_ident = i > 0 && (chars[i - 1].is_alphanumeric() || chars[i - 1] == '_' || chars[i - 1] == '.');
        if c.is_ascii_digit() && !prev_ident {
            let start = i;
            let mut is_float = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                is_float = true;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.extend(&chars[start..i]);
            if !is_float {
                out.push_str(".0");
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

fn unary(f: fn(f64) -> f64) -> Function {
    Function::new(move |arg: &Value| Ok(Value::Float(f(arg.as_number()?))))
}

fn context() -> HashMapContext {
    let mut ctx = HashMapContext::new();
    let table: [(&str, fn(f64) -> f64); 11] = [
        ("sin", f64::sin),
        ("cos", f64::cos),
        ("tan", f64::tan),
        ("exp", f64::exp),
        ("ln", f64::ln),
        ("sqrt", f64::sqrt),
        ("abs", f64::abs),
        ("sinh", f64::sinh),
        ("cosh", f64::cosh),
        ("tanh", f64::tanh),
        ("floor", f64::floor),
    ];
    for (name, f) in table {
        ctx.set_function(name.into(), unary(f)).expect("function registration");
    }
    ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI)).expect("constant");
    ctx
}

impl Forcing {
    pub fn expression(source: &str) -> Result<Self, ForcingError> {
        let node = build_operator_tree(&floatify(source)).map_err(|e| ForcingError::Expression(e.to_string()))?;
        let forcing = Forcing::Expr { source: source.to_string(), node: Arc::new(node) };
        // Probe once so unknown identifiers surface at parse time.
        forcing.evaluator()([0.5, 0.5], 0.5, 0.5)?;
        Ok(forcing)
    }

    pub fn function(f: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static) -> Self {
        Forcing::Function(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Forcing::function(move |_, _| c)
    }

    /// Reads `x,y,f` (one dimension) or `x1,x2,y,f` rows after a header.
    pub fn from_csv_file(path: &Path) -> Result<Self, ForcingError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text)
    }

    pub fn from_csv(text: &str) -> Result<Self, ForcingError> {
        let mut points = Vec::new();
        let mut columns = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let Some(cols) = columns else {
                if !(fields.len() == 3 || fields.len() == 4) {
                    return Err(ForcingError::Csv { line, message: "header needs 3 or 4 columns".into() });
                }
                columns = Some(fields.len());
                continue;
            };
            if fields.len() != cols {
                return Err(ForcingError::Csv { line, message: format!("expected {cols} fields, got {}", fields.len()) });
            }
            let nums = fields
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ForcingError::Csv { line, message: e.to_string() })?;
            if nums.iter().any(|v| !v.is_finite()) {
                return Err(ForcingError::Csv { line, message: "non-finite value".into() });
            }
            let point = if cols == 3 {
                ([nums[0], 0.0], nums[1], nums[2])
            } else {
                ([nums[0], nums[1]], nums[2], nums[3])
            };
            points.push(point);
        }
        if points.is_empty() {
            return Err(ForcingError::Empty);
        }
        Ok(Forcing::Samples(Arc::new(GriddedData { points })))
    }

    pub fn describe(&self) -> String {
        match self {
            Forcing::Expr { source, .. } => source.clone(),
            Forcing::Samples(d) => format!("csv ({} samples)", d.points.len()),
            Forcing::Function(_) => "closure".into(),
        }
    }

    /// Point evaluator `(x, y, r) ↦ f`.
    fn evaluator(&self) -> Box<dyn FnMut([f64; 2], f64, f64) -> Result<f64, ForcingError> + '_> {
        match self {
            Forcing::Expr { node, .. } => {
                let mut ctx = context();
                Box::new(move |x, y, r| {
                    let set = |ctx: &mut HashMapContext, k: &str, v: f64| ctx.set_value(k.into(), Value::Float(v));
                    let result: Result<f64, EvalexprError> = (|| {
                        set(&mut ctx, "x", x[0])?;
                        set(&mut ctx, "x1", x[0])?;
                        set(&mut ctx, "x2", x[1])?;
                        set(&mut ctx, "y", y)?;
                        set(&mut ctx, "r", r)?;
                        node.eval_number_with_context(&ctx)
                    })();
                    result.map_err(|e| ForcingError::Expression(e.to_string()))
                })
            }
            Forcing::Function(f) => Box::new(move |x, y, _| Ok(f(x, y))),
            Forcing::Samples(d) => Box::new(move |x, y, _| Ok(d.nearest(x, y))),
        }
    }

    /// `f_j(x) = f(x_c, jh)` at cell centers; gridded samples are
    /// Gaussian-smoothed when `mollify` is given.
    pub fn sample(&self, grid: &Arc<CellGrid>, n_interior: usize, mollify: Option<f64>) -> Result<SliceStack, ForcingError> {
        if let Some(delta) = mollify {
            if !(delta > 0.0) || !delta.is_finite() {
                return Err(ForcingError::BadMollifier(delta));
            }
        }
        let mut eval = self.evaluator();
        let origin = grid.origin();
        let mut interior = Vec::with_capacity(n_interior);
        for j in 1..=n_interior {
            let y = j as f64 / (n_interior + 1) as f64;
            let mut slice = Vec::with_capacity(grid.len());
            for cell in grid.cells() {
                let x = cell.center;
                let value = match (self, mollify) {
                    (Forcing::Samples(d), Some(delta)) => d.smoothed(x, y, delta),
                    _ => {
                        let r = (x[0] - origin[0]).hypot(x[1] - origin[1]);
                        eval(x, y, r)?
                    }
                };
                if !value.is_finite() {
                    return Err(ForcingError::NonFinite { x, y, value });
                }
                slice.push(value);
            }
            interior.push(slice);
        }
        Ok(SliceStack::from_interior(grid.clone(), interior))
    }
}

impl GriddedData {
    fn distance2(p: &([f64; 2], f64, f64), x: [f64; 2], y: f64) -> f64 {
        (p.0[0] - x[0]).powi(2) + (p.0[1] - x[1]).powi(2) + (p.1 - y).powi(2)
    }

    /// Value of the closest sample; ties go to the earliest row.
    pub fn nearest(&self, x: [f64; 2], y: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for p in &self.points {
            let d = Self::distance2(p, x, y);
            if d < best.0 {
                best = (d, p.2);
            }
        }
        best.1
    }

    /// Normalized Gaussian-kernel average with half-width `delta`.
    pub fn smoothed(&self, x: [f64; 2], y: f64, delta: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for p in &self.points {
            let w = (-Self::distance2(p, x, y) / (2.0 * delta * delta)).exp();
            num += w * p.2;
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            self.nearest(x, y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_interval_grid;

    #[test]
    fn integer_division_is_real() {
        let f = Forcing::expression("1/2 + x*0").unwrap();
        let grid = Arc::new(make_interval_grid(1.0, 4).unwrap());
        let s = f.sample(&grid, 1, None).unwrap();
        assert_eq!(s.slice(1), &[0.5; 4]);
        assert_eq!(floatify("x1^2 + 3e2*y + 1.5 - 1e-3"), "x1^2.0 + 3e2*y + 1.5 - 1e-3");
    }

    #[test]
    fn expression_uses_coordinates() {
        let f = Forcing::expression("2*pi^2*sin(pi*x) + y").unwrap();
        let grid = Arc::new(make_interval_grid(1.0, 8).unwrap());
        let s = f.sample(&grid, 3, None).unwrap();
        for (c, cell) in grid.cells().iter().enumerate() {
            let x = cell.center[0];
            let want = 2.0 * std::f64::consts::PI.powi(2) * (std::f64::consts::PI * x).sin() + 0.5;
            assert!((s.slice(2)[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_variable_is_rejected() {
        assert!(matches!(Forcing::expression("z + 1"), Err(ForcingError::Expression(_))));
        assert!(matches!(Forcing::expression("(x"), Err(ForcingError::Expression(_))));
    }

    #[test]
    fn csv_nearest_and_smoothing() {
        let f = Forcing::from_csv("x,y,f\n0.25,0.5,1\n0.75,0.5,3\n").unwrap();
        let grid = Arc::new(make_interval_grid(1.0, 4).unwrap());
        let s = f.sample(&grid, 1, None).unwrap();
        assert_eq!(s.slice(1), &[1.0, 1.0, 3.0, 3.0]);
        let smooth = f.sample(&grid, 1, Some(10.0)).unwrap();
        assert!(smooth.slice(1).iter().all(|v| (v - 2.0).abs() < 0.01));
        assert!(matches!(Forcing::from_csv("x,y,f\n1,2\n"), Err(ForcingError::Csv { line: 2, .. })));
        assert!(matches!(Forcing::from_csv("x,y,f\n"), Err(ForcingError::Empty)));
        assert!(matches!(f.sample(&grid, 1, Some(0.0)), Err(ForcingError::BadMollifier(_))));
    }
}
