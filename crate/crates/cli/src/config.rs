//! `key = value` experiment files with `[problem] [solver] [verify] [output]`
//! sections. Parsing collects every error instead of stopping at the first.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use steiner_core::compare::{ProblemSpec, Regularize, Resolution};
use steiner_core::forcing::Forcing;
use steiner_core::grid::{Grading, Shape};
use steiner_core::nonlinearity::{make_p_laplacian, make_shifted_p, Nonlinearity};

pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based; `None` for errors about keys that are absent.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Eps,
    Tau,
    H,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "eps" => Some(Self::Eps),
            "tau" => Some(Self::Tau),
            "h" => Some(Self::H),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Eps => "eps",
            Self::Tau => "tau",
            Self::H => "h",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyBlock {
    pub slack_constant: f64,
    pub seed: u64,
    pub star_tol: f64,
    pub star_max_sweeps: usize,
    pub accretivity_trials: usize,
    pub accretivity_lambdas: Vec<f64>,
    pub lq: Vec<f64>,
    pub sweep: Option<(SweepParam, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub domain: Shape,
    pub nl: Nonlinearity,
    pub forcing: Forcing,
    pub mollify: Option<f64>,
    pub resolution: Resolution,
    pub grading: Option<Grading>,
    pub tol: f64,
    pub max_iter: usize,
    pub eps: f64,
    pub tau: f64,
    pub regularize: Regularize,
    pub verify: VerifyBlock,
    pub output_dir: PathBuf,
    pub formats: Formats,
}

impl ExperimentConfig {
    pub fn spec(&self) -> ProblemSpec {
        let mut s = ProblemSpec::new(self.domain, self.nl.clone(), self.forcing.clone(), self.resolution);
        s.mollify = self.mollify;
        s.grading = self.grading;
        s.tol = self.tol;
        s.max_iter = self.max_iter;
        s.eps = self.eps;
        s.tau = self.tau;
        s.regularize = self.regularize;
        s.star_tol = self.verify.star_tol;
        s.star_max_sweeps = self.verify.star_max_sweeps;
        s.slack_constant = self.verify.slack_constant;
        s
    }
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "problem",
        &[
            "nl",
            "omega1.kind",
            "omega1.size",
            "omega1.resolution",
            "slices.N",
            "sgrid.M",
            "sgrid.grading",
            "f.expr",
            "f.csv",
            "f.mollify",
        ],
    ),
    ("solver", &["tol", "max_iter", "regularization.eps", "regularization.tau", "regularization.mode"]),
    (
        "verify",
        &[
            "C",
            "seed",
            "star.tol",
            "star.max_sweeps",
            "accretivity.trials",
            "accretivity.lambdas",
            "lq",
            "sweep.param",
            "sweep.values",
        ],
    ),
    ("output", &["directory", "formats"]),
];

struct Entry {
    line: usize,
    value: String,
}

struct Reader<'a> {
    entries: HashMap<String, Entry>,
    errors: Vec<ConfigError>,
    base: &'a Path,
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2 && (v.starts_with('"') && v.ends_with('"') || v.starts_with('\'') && v.ends_with('\'')) {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

impl Reader<'_> {
    fn error(&mut self, line: Option<usize>, message: impl Into<String>) {
        self.errors.push(ConfigError { line, message: message.into() });
    }

    fn raw(&self, key: &str) -> Option<(usize, String)> {
        self.entries.get(key).map(|e| (e.line, unquote(&e.value).to_string()))
    }

    /// Parses a present key, recording type and range errors.
    fn get<T>(&mut self, key: &str, what: &str, parse: impl Fn(&str) -> Option<T>, ok: impl Fn(&T) -> bool) -> Option<T> {
        let (line, raw) = self.raw(key)?;
        match parse(&raw) {
            None => {
                self.error(Some(line), format!("`{key}` expects {what}, got `{raw}`"));
                None
            }
            Some(v) if !ok(&v) => {
                self.error(Some(line), format!("`{key}` = {raw} is out of range ({what})"));
                None
            }
            Some(v) => Some(v),
        }
    }

    fn float(&mut self, key: &str, what: &str, ok: impl Fn(f64) -> bool) -> Option<f64> {
        self.get(key, what, |s| s.parse::<f64>().ok().filter(|v| v.is_finite()), |v| ok(*v))
    }

    fn count(&mut self, key: &str, min: usize) -> Option<usize> {
        self.get(key, &format!("an integer ≥ {min}"), |s| s.parse::<usize>().ok(), |v| *v >= min)
    }

    fn floats(&mut self, key: &str, what: &str, ok: impl Fn(f64) -> bool) -> Option<Vec<f64>> {
        let parse = |s: &str| -> Option<Vec<f64>> {
            let list: Option<Vec<f64>> = s
                .trim_matches(|c| c == '[' || c == ']')
                .split(',')
                .map(|x| x.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            list.filter(|l| !l.is_empty())
        };
        self.get(key, what, parse, |l| l.iter().all(|&v| ok(v)))
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Option<T> {
        let names: Vec<&str> = options.iter().map(|o| o.0).collect();
        let what = format!("one of {}", names.join(", "));
        self.get(key, &what, |s| options.iter().find(|o| o.0 == s).map(|o| o.1), |_| true)
    }

    fn path(&mut self, key: &str) -> Option<(usize, PathBuf)> {
        let (line, raw) = self.raw(key)?;
        let path = self.base.join(raw);
        if path.is_file() {
            Some((line, path))
        } else {
            self.error(Some(line), format!("`{key}`: file {} does not exist", path.display()));
            None
        }
    }

    fn nonlinearity(&mut self) -> Option<Nonlinearity> {
        let Some((line, raw)) = self.raw("nl") else {
            self.error(None, "missing required key `nl` in [problem]");
            return None;
        };
        let bad = |r: &mut Self, msg: String| {
            r.error(Some(line), msg);
            None
        };
        let Some((name, rest)) = raw.split_once('(') else {
            return bad(self, format!("`nl` expects p_laplacian(p), shifted_p(p, tau) or table(file), got `{raw}`"));
        };
        let Some(args) = rest.trim_end().strip_suffix(')') else {
            return bad(self, format!("`nl`: unbalanced parentheses in `{raw}`"));
        };
        let nums = || -> Option<Vec<f64>> { args.split(',').map(|a| a.trim().parse::<f64>().ok()).collect() };
        match name.trim() {
            "p_laplacian" => match nums().as_deref() {
                Some(&[p]) => make_p_laplacian(p).map_err(|e| self.error(Some(line), format!("`nl`: {e}"))).ok(),
                _ => bad(self, format!("`nl`: p_laplacian takes one number, got `{args}`")),
            },
            "shifted_p" => match nums().as_deref() {
                Some(&[p, tau]) => make_shifted_p(p, tau).map_err(|e| self.error(Some(line), format!("`nl`: {e}"))).ok(),
                _ => bad(self, format!("`nl`: shifted_p takes two numbers, got `{args}`")),
            },
            "table" => {
                let path = self.base.join(unquote(args));
                if !path.is_file() {
                    return bad(self, format!("`nl`: table file {} does not exist", path.display()));
                }
                Nonlinearity::from_table_file(&path).map_err(|e| self.error(Some(line), format!("`nl`: {e}"))).ok()
            }
            other => bad(self, format!("`nl`: unknown law `{other}`")),
        }
    }

    fn forcing(&mut self) -> Option<Forcing> {
        match (self.raw("f.expr"), self.raw("f.csv")) {
            (Some((l1, _)), Some((l2, _))) => {
                self.error(Some(l2), format!("`f.expr` (line {l1}) and `f.csv` (line {l2}) are exclusive"));
                None
            }
            (Some((line, expr)), None) => {
                Forcing::expression(&expr).map_err(|e| self.error(Some(line), format!("`f.expr`: {e}"))).ok()
            }
            (None, Some(_)) => {
                let (line, path) = self.path("f.csv")?;
                Forcing::from_csv_file(&path).map_err(|e| self.error(Some(line), format!("`f.csv`: {e}"))).ok()
            }
            (None, None) => {
                self.error(None, "one of `f.expr` or `f.csv` is required in [problem]");
                None
            }
        }
    }
}

/// Parses `text`; relative file paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let mut reader = Reader { entries: HashMap::new(), errors: Vec::new(), base };
    // `Err(())` after an unknown section header: its keys are skipped.
    let mut section: Result<Option<&str>, ()> = Ok(None);
    for (k, raw_line) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|c| c.strip_suffix(']')) {
            match KEYS.iter().find(|(s, _)| *s == name.trim()) {
                Some((s, _)) => section = Ok(Some(s)),
                None => {
                    reader.error(Some(line), format!("unknown section [{}]", name.trim()));
                    section = Err(());
                }
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            reader.error(Some(line), format!("expected `key = value`, got `{content}`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let sec = match section {
            Ok(Some(sec)) => sec,
            Ok(None) => {
                reader.error(Some(line), format!("key `{key}` before any section"));
                continue;
            }
            Err(()) => continue,
        };
        let known = KEYS.iter().find(|(s, _)| *s == sec).is_some_and(|(_, keys)| keys.contains(&key));
        if !known {
            reader.error(Some(line), format!("unknown key `{key}` in [{sec}]"));
            continue;
        }
        if value.is_empty() {
            reader.error(Some(line), format!("`{key}` has no value"));
            continue;
        }
        if let Some(first) = reader.entries.get(key) {
            let first = first.line;
            reader.error(Some(line), format!("duplicate key `{key}` at lines {first} and {line}"));
            continue;
        }
        reader.entries.insert(key.to_string(), Entry { line, value: value.to_string() });
    }

    let nl = reader.nonlinearity();
    let kind = match reader.raw("omega1.kind") {
        None => {
            reader.error(None, "missing required key `omega1.kind` in [problem]");
            None
        }
        Some(_) => reader.choice("omega1.kind", &[("interval", 0u8), ("square", 1), ("disk", 2)]),
    };
    let size = reader.float("omega1.size", "a positive number", |v| v > 0.0);
    let domain = kind.map(|k| match k {
        0 => Shape::Interval { length: size.unwrap_or(1.0) },
        1 => Shape::Square { side: size.unwrap_or(1.0) },
        _ => Shape::Disk { radius: size.unwrap_or(0.5) },
    });
    let defaults = Resolution::default_for(domain.map_or(1, |d| d.dim()));
    let cells = reader.count("omega1.resolution", 4);
    let slices = if reader.raw("slices.N").is_none() {
        reader.error(None, "missing required key `slices.N` in [problem]");
        None
    } else {
        reader.count("slices.N", 1)
    };
    let s_intervals = reader.count("sgrid.M", 2);
    let grading = reader.choice("sgrid.grading", &[("uniform", Grading::Uniform), ("sqrt", Grading::Sqrt)]);
    let forcing = reader.forcing();
    let mollify = reader.float("f.mollify", "a positive number", |v| v > 0.0);

    let tol = reader.float("tol", "a positive number", |v| v > 0.0);
    let max_iter = reader.count("max_iter", 1);
    let eps = reader.float("regularization.eps", "a positive number", |v| v > 0.0);
    let tau = reader.float("regularization.tau", "a nonnegative number", |v| v >= 0.0);
    let regularize = reader.choice(
        "regularization.mode",
        &[("auto", Regularize::Auto), ("always", Regularize::Always), ("never", Regularize::Never)],
    );

    let slack_constant = reader.float("C", "a positive number", |v| v > 0.0);
    let seed = reader.get("seed", "a nonnegative integer", |s| s.parse::<u64>().ok(), |_| true);
    let star_tol = reader.float("star.tol", "a positive number", |v| v > 0.0);
    let star_max_sweeps = reader.count("star.max_sweeps", 1);
    let trials = reader.count("accretivity.trials", 1);
    let lambdas = reader.floats("accretivity.lambdas", "a list of positive numbers", |v| v > 0.0);
    let lq = reader.floats("lq", "a list of exponents ≥ 1", |v| v >= 1.0);
    let sweep_param = reader.choice("sweep.param", &[("eps", SweepParam::Eps), ("tau", SweepParam::Tau), ("h", SweepParam::H)]);
    let sweep_values = reader.floats("sweep.values", "a list of positive numbers", |v| v > 0.0);
    if let (Some((line, _)), None) | (None, Some((line, _))) = (reader.raw("sweep.param"), reader.raw("sweep.values")) {
        reader.error(Some(line), "`sweep.param` and `sweep.values` must be given together");
    }

    let output_dir = reader.raw("directory").map(|(_, d)| PathBuf::from(d)).unwrap_or_else(|| PathBuf::from("out"));
    let formats = reader.get(
        "formats",
        "a list drawn from csv, json",
        |s| {
            let mut f = Formats { csv: false, json: false };
            for item in s.trim_matches(|c| c == '[' || c == ']').split(',') {
                match unquote(item) {
                    "csv" => f.csv = true,
                    "json" => f.json = true,
                    _ => return None,
                }
            }
            Some(f)
        },
        |_| true,
    );

    if !reader.errors.is_empty() {
        reader.errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        return Err(reader.errors);
    }
    let (Some(nl), Some(domain), Some(slices), Some(forcing)) = (nl, domain, slices, forcing) else {
        unreachable!("missing required keys are reported as errors");
    };
    Ok(ExperimentConfig {
        domain,
        nl,
        forcing,
        mollify,
        resolution: Resolution {
            cells: cells.unwrap_or(defaults.cells),
            slices,
            s_intervals: s_intervals.unwrap_or(defaults.s_intervals),
        },
        grading,
        tol: tol.unwrap_or(1e-9),
        max_iter: max_iter.unwrap_or(200),
        eps: eps.unwrap_or(1e-6),
        tau: tau.unwrap_or(1e-6),
        regularize: regularize.unwrap_or(Regularize::Auto),
        verify: VerifyBlock {
            slack_constant: slack_constant.unwrap_or(10.0),
            seed: seed.unwrap_or(DEFAULT_SEED),
            star_tol: star_tol.unwrap_or(1e-11),
            star_max_sweeps: star_max_sweeps.unwrap_or(100_000),
            accretivity_trials: trials.unwrap_or(1000),
            accretivity_lambdas: lambdas.unwrap_or_else(|| vec![0.01, 1.0, 100.0]),
            lq: lq.unwrap_or_else(|| vec![1.0, 2.0]),
            sweep: sweep_param.zip(sweep_values),
        },
        output_dir,
        formats: formats.unwrap_or(Formats { csv: true, json: true }),
    })
}
