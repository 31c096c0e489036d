//! Pipelines behind each subcommand, artifact writing and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use steiner_core::compare::{
    h_refinement_study, single_parameter_sweep, solve_problem, verify_lq_consequence, verify_mass_comparison,
    ComparisonRun, PipelineError, ProblemSpec, SweepReport,
};
use steiner_core::grid::CellGrid;
use steiner_core::star::{t_accretivity_check, StarOperator};

use crate::config::{ExperimentConfig, SweepParam};

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Solve,
    StarCheck,
    Compare,
    Sweep { param: SweepParam, values: Vec<f64> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::StarCheck => "star-check",
            Command::Compare => "compare",
            Command::Sweep { .. } => "sweep",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("[{stage}] {message}")]
    Stage { stage: &'static str, message: String },
    #[error("[output] {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub steiner_cli: &'static str,
    pub steiner_core: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub versions: Versions,
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
    /// Relative to the output directory.
    pub artifacts: Vec<String>,
    pub pass: bool,
    pub error: Option<String>,
}

pub struct Invocation<'a> {
    pub config: &'a ExperimentConfig,
    pub config_text: &'a str,
    pub config_path: Option<&'a Path>,
    pub seed: u64,
    pub out: PathBuf,
}

/// Collects artifacts in memory; everything is written from one thread at the end.
struct Outputs {
    files: Vec<(String, String)>,
    csv: bool,
    json: bool,
}

impl Outputs {
    fn csv(&mut self, name: String, body: String) {
        if self.csv {
            self.files.push((name, body));
        }
    }

    fn json(&mut self, name: &str, value: &impl Serialize) {
        if self.json {
            let mut text = serde_json::to_string_pretty(value).expect("serializable");
            text.push('\n');
            self.files.push((name.to_string(), text));
        }
    }
}

struct Clock {
    stages: Vec<StageTiming>,
}

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push(StageTiming { stage: stage.to_string(), seconds: t.elapsed().as_secs_f64() });
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Plain `{:e}` keeps output locale independent and round-trips exactly.
fn num(v: f64) -> String {
    format!("{v:e}")
}

fn solution_csv(grid: &CellGrid, stack: &steiner_core::grid::SliceStack) -> String {
    let mut out = String::from(if grid.dim() == 1 { "x,j,u\n" } else { "x,y,j,u\n" });
    for j in 1..=stack.n_interior() {
        for (cell, u) in grid.cells().iter().zip(stack.slice(j)) {
            let [x, y] = cell.center;
            if grid.dim() == 1 {
                let _ = writeln!(out, "{},{j},{}", num(x), num(*u));
            } else {
                let _ = writeln!(out, "{},{},{j},{}", num(x), num(y), num(*u));
            }
        }
    }
    out
}

fn subsolution_csv(run: &ComparisonRun) -> String {
    let mut out = String::from("j,s,slack\n");
    let nodes = run.s_grid.nodes();
    for (k, row) in run.subsolution.iter().enumerate() {
        for (s, slack) in nodes.iter().zip(row).skip(1) {
            let _ = writeln!(out, "{},{},{}", k + 1, num(*s), num(*slack));
        }
    }
    out
}

fn sweep_csv(report: &SweepReport) -> String {
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut out = String::from("value,slices,eps,tau,pass,worst_gap,slack_budget,energy,h1_norm,l1_to_previous\n");
    for p in &report.points {
        let (pass, gap, budget) = match &p.report {
            Some(r) => (r.pass.to_string(), num(r.worst_gap), num(r.slack_budget)),
            None => ("false".into(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{pass},{gap},{budget},{},{},{}",
            num(p.value),
            p.slices,
            opt(p.eps),
            opt(p.tau),
            opt(p.energy),
            opt(p.h1_norm),
            opt(p.l1_to_previous)
        );
    }
    out
}

fn parallel(specs: &[ProblemSpec]) -> Vec<Result<ComparisonRun, PipelineError>> {
    specs.par_iter().map(verify_mass_comparison).collect()
}

fn slices_for(value: f64) -> Result<usize, RunError> {
    // Integers ≥ 1 are slice counts; values in (0, 1) are spacings h = 1/(N+1).
    let n = if value >= 1.0 { value } else { 1.0 / value - 1.0 };
    let rounded = n.round();
    if value > 0.0 && (n - rounded).abs() < 1e-9 && rounded >= 1.0 {
        Ok(rounded as usize)
    } else {
        Err(RunError::Stage { stage: "sweep", message: format!("{value} is neither a slice count nor 1/(N+1)") })
    }
}

fn execute(cmd: &Command, inv: &Invocation, out: &mut Outputs, clock: &mut Clock) -> Result<bool, RunError> {
    let spec = inv.config.spec();
    match cmd {
        Command::Solve => {
            let (prob, sol) = clock.time("solve", || solve_problem(&spec))?;
            out.csv("solution.csv".into(), solution_csv(prob.grid(), &sol.stack));
            let (_, reg) = spec.flux()?;
            out.json(
                "energy.json",
                &json!({
                    "J_h": sol.energy,
                    "residual": sol.residual_norm,
                    "iterations": sol.iterations,
                    "energy_history": sol.energy_history,
                    "h": spec.h(),
                    "nonlinearity": spec.nl.name(),
                    "regularization": reg.map(|(eps, tau)| json!({ "eps": eps, "tau": tau })),
                }),
            );
            Ok(true)
        }
        Command::StarCheck => {
            let grid = spec.grid()?;
            let s_grid = spec.s_grid(&grid)?;
            let (flux, _) = spec.flux()?;
            let op = StarOperator::new(s_grid, flux);
            let v = &inv.config.verify;
            let mut rng = ChaCha8Rng::seed_from_u64(inv.seed);
            let acc = clock.time("accretivity", || {
                t_accretivity_check(&op, v.accretivity_trials, &v.accretivity_lambdas, &mut rng)
            });
            let run = clock.time("pipeline", || verify_mass_comparison(&spec))?;
            out.csv("subsolution.csv".into(), subsolution_csv(&run));
            let r = &run.report;
            let sub_ok = r.worst_subsolution_slack >= -r.slack_budget;
            let pass = acc.violations == 0 && sub_ok;
            out.json(
                "accretivity.json",
                &json!({
                    "pass": pass,
                    "seed": inv.seed,
                    "trials": acc.trials,
                    "lambdas": acc.lambdas,
                    "evaluations": acc.evaluations,
                    "violations": acc.violations,
                    "worst_margin": acc.worst_margin,
                    "worst_subsolution_slack": r.worst_subsolution_slack,
                    "chain_defect": r.chain_defect,
                    "slack_budget": r.slack_budget,
                }),
            );
            Ok(pass)
        }
        Command::Compare => {
            let run = clock.time("compare", || verify_mass_comparison(&spec))?;
            let lq: Vec<_> = inv.config.verify.lq.iter().map(|&q| verify_lq_consequence(&run, q)).collect();
            let pass = run.report.pass && lq.iter().all(|c| c.pass);
            out.csv("comparison.csv".into(), run.report.rows_csv());
            out.json("report.json", &json!({ "pass": pass, "report": run.report, "lq": lq }));
            Ok(pass)
        }
        Command::Sweep { param, values } => {
            let report = match param {
                SweepParam::H => {
                    let n_list = values.iter().map(|&v| slices_for(v)).collect::<Result<Vec<_>, _>>()?;
                    clock.time("sweep", || h_refinement_study(&spec, &n_list, &parallel))
                }
                p => clock.time("sweep", || single_parameter_sweep(&spec, p.name(), values, &parallel)),
            };
            for (k, point) in report.points.iter().enumerate() {
                if let Some(r) = &point.report {
                    out.csv(format!("point_{k:02}/comparison.csv"), r.rows_csv());
                }
            }
            out.csv("sweep.csv".into(), sweep_csv(&report));
            out.json("sweep.json", &report);
            Ok(report.checks.all_pass)
        }
    }
}

/// Runs `cmd`, writes its artifacts and `manifest.json` into `inv.out`.
/// Pipeline failures still produce a manifest carrying the error.
pub fn run(cmd: &Command, inv: &Invocation) -> (RunManifest, Result<bool, RunError>) {
    let started = Instant::now();
    let mut out = Outputs { files: Vec::new(), csv: inv.config.formats.csv, json: inv.config.formats.json };
    let mut clock = Clock { stages: Vec::new() };
    let mut result = execute(cmd, inv, &mut out, &mut clock);

    let mut artifacts = Vec::new();
    let write = (|| -> std::io::Result<()> {
        fs::create_dir_all(&inv.out)?;
        for (name, body) in &out.files {
            let path = inv.out.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, body)?;
            artifacts.push(name.clone());
        }
        Ok(())
    })();
    if let Err(e) = write {
        result = Err(e.into());
    }
    artifacts.push("manifest.json".into());
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        config_path: inv.config_path.map(|p| p.display().to_string()),
        config_sha256: sha256_hex(inv.config_text.as_bytes()),
        seed: inv.seed,
        threads: rayon::current_num_threads(),
        versions: Versions { steiner_cli: env!("CARGO_PKG_VERSION"), steiner_core: steiner_core::VERSION },
        stages: clock.stages,
        total_seconds: started.elapsed().as_secs_f64(),
        artifacts,
        pass: matches!(result, Ok(true)),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    if let Err(e) = fs::create_dir_all(&inv.out).and_then(|_| fs::write(inv.out.join("manifest.json"), text)) {
        if result.is_ok() {
            result = Err(e.into());
        }
    }
    (manifest, result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn sweep_values_map_to_slice_counts() {
        assert_eq!(slices_for(7.0).unwrap(), 7);
        assert_eq!(slices_for(0.125).unwrap(), 7);
        assert!(slices_for(0.3).is_err());
        assert!(slices_for(2.5).is_err());
    }
}
