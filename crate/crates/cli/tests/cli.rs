use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use steiner_cli::config::parse_config;

const BIN: &str = env!("CARGO_BIN_EXE_steiner");

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn small(domain: &str, nl: &str, f: &str) -> String {
    let (kind, extra) = match domain {
        "disk" => ("disk", "omega1.size = 0.5\nomega1.resolution = 12\nsgrid.M = 16\n"),
        _ => ("interval", "omega1.resolution = 32\nsgrid.M = 32\n"),
    };
    format!(
        "[problem]\nnl = {nl}\nomega1.kind = {kind}\n{extra}slices.N = 3\nf.expr = {f}\n\n[verify]\naccretivity.trials = 50\n"
    )
}

fn steiner(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, sub: &str, config: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(format!("out-{sub}-{}", extra.join("")));
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (steiner(&args), out)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema(instance_path: &Path, schema: &str) {
    let schema: Value = json(&schema_dir().join(schema));
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let instance = json(instance_path);
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{}: {errors:?}", instance_path.display());
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn minimal_config_parses() {
    let text = "[problem]\nnl = p_laplacian(3)\nomega1.kind = interval\nslices.N = 7\nf.expr = 1\n";
    let c = parse_config(text, Path::new(".")).unwrap();
    assert_eq!(c.resolution.slices, 7);
}

#[test]
fn solve_writes_solution_and_energy() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", &small("interval", "p_laplacian(3)", "1 + x*y"));
    let (o, out) = run_in(dir.path(), "solve", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("solution.csv")), "x,j,u");
    assert_eq!(fs::read_to_string(out.join("solution.csv")).unwrap().lines().count(), 1 + 3 * 32);
    assert_schema(&out.join("energy.json"), "energy.schema.json");
    assert_schema(&out.join("manifest.json"), "manifest.schema.json");
    let e = json(&out.join("energy.json"));
    assert!(e["J_h"].as_f64().unwrap() < 0.0);
}

#[test]
fn solve_on_disk_has_two_coordinates() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "d.cfg", &small("disk", "p_laplacian(2)", "1"));
    let (o, out) = run_in(dir.path(), "solve", &cfg, &[]);
    assert!(o.status.success());
    assert_eq!(header(&out.join("solution.csv")), "x,y,j,u");
}

#[test]
fn star_check_reports_accretivity_and_subsolution() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", &small("interval", "p_laplacian(3)", "exp(-30*(x-0.7)^2)*(1+y)"));
    let (o, out) = run_in(dir.path(), "star-check", &cfg, &["--seed", "11"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("subsolution.csv")), "j,s,slack");
    assert_schema(&out.join("accretivity.json"), "accretivity.schema.json");
    let a = json(&out.join("accretivity.json"));
    assert_eq!(a["violations"], 0);
    assert_eq!(a["seed"], 11);
    assert_eq!(a["evaluations"], 150);
}

#[test]
fn compare_on_symmetric_data_passes_with_zero_gap() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", &small("interval", "p_laplacian(2)", "(1 - abs(2*x - 1)) * (1 + y)"));
    let (o, out) = run_in(dir.path(), "compare", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_schema(&out.join("report.json"), "report.schema.json");
    let r = json(&out.join("report.json"));
    assert!(r["report"]["worst_gap"].as_f64().unwrap().abs() < 1e-10);
    assert_eq!(header(&out.join("comparison.csv")), "j,s,U,V,gap,V_ode");
}

#[test]
fn identical_config_and_seed_give_identical_csv_bytes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", &small("interval", "p_laplacian(1.5)", "exp(-30*(x-0.3)^2)"));
    let (o1, a) = run_in(dir.path(), "star-check", &cfg, &["--seed", "5"]);
    let (o2, b) = run_in(dir.path(), "star-check", &cfg, &["--seed=5"]);
    assert!(o1.status.success() && o2.status.success());
    assert_eq!(fs::read(a.join("subsolution.csv")).unwrap(), fs::read(b.join("subsolution.csv")).unwrap());
    let strip = |p: PathBuf| {
        let mut v = json(&p.join("accretivity.json"));
        v.as_object_mut().unwrap().remove("seed");
        v
    };
    assert_eq!(strip(a), strip(b));
}

#[test]
fn sweep_over_slices_writes_one_comparison_per_point() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "a.cfg", &small("interval", "p_laplacian(3)", "exp(-30*((x-0.7)^2+(y-0.4)^2))"));
    let (o, out) = run_in(dir.path(), "sweep", &cfg, &["--param", "h", "--values", "3,7,15", "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..3 {
        assert_eq!(header(&out.join(format!("point_{k:02}/comparison.csv"))), "j,s,U,V,gap,V_ode");
    }
    assert_schema(&out.join("sweep.json"), "sweep.schema.json");
    let s = json(&out.join("sweep.json"));
    let slices: Vec<u64> = s["points"].as_array().unwrap().iter().map(|p| p["slices"].as_u64().unwrap()).collect();
    assert_eq!(slices, vec![3, 7, 15]);
    assert_eq!(s["checks"]["all_pass"], true);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["threads"], 2);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 6);
}

#[test]
fn sweep_reads_parameters_from_config() {
    let dir = TempDir::new().unwrap();
    let body = small("interval", "p_laplacian(3)", "1").replace("[verify]\n", "[verify]\nsweep.param = eps\nsweep.values = 1e-2, 1e-3\n");
    let cfg = write_config(dir.path(), "a.cfg", &body);
    let (o, out) = run_in(dir.path(), "sweep", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("sweep.json"));
    assert_eq!(s["param"], "eps");
    assert_schema(&out.join("sweep.json"), "sweep.schema.json");
}

#[test]
fn invalid_config_exits_2_listing_every_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.cfg",
        "[problem]\nnl = p_laplacian(3)\nomega1.kind = interval\nslices.N = 0\nslices.N = 4\nf.expr = 1\ncolour = red\n",
    );
    let (o, out) = run_in(dir.path(), "compare", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4:") && err.contains("lines 4 and 5") && err.contains("line 7:"), "{err}");
    assert!(!out.exists());
}

#[test]
fn stage_failure_is_tagged_and_nonzero() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "neg.cfg", &small("interval", "p_laplacian(2)", "-1"));
    let (o, out) = run_in(dir.path(), "compare", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[forcing]"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["pass"], false);
    assert!(m["error"].as_str().unwrap().starts_with("[forcing]"));
}

#[test]
fn csv_forcing_and_table_law_resolve_relative_to_config() {
    let dir = TempDir::new().unwrap();
    let mut samples = String::from("x,y,f\n");
    for i in 0..=10 {
        for j in 0..=10 {
            let (x, y) = (i as f64 / 10.0, j as f64 / 10.0);
            samples.push_str(&format!("{x},{y},{}\n", 1.0 + x));
        }
    }
    fs::write(dir.path().join("f.csv"), samples).unwrap();
    fs::write(dir.path().join("beta.txt"), "0 0\n1 1\n2 3\n4 9\n").unwrap();
    let body = small("interval", "table(beta.txt)", "1").replace("f.expr = 1", "f.csv = f.csv");
    let cfg = write_config(dir.path(), "t.cfg", &body);
    let (o, out) = run_in(dir.path(), "compare", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.json").exists());
}

#[test]
fn formats_restrict_artifacts() {
    let dir = TempDir::new().unwrap();
    let body = format!("{}[output]\nformats = json\n", small("interval", "p_laplacian(2)", "1"));
    let cfg = write_config(dir.path(), "a.cfg", &body);
    let (o, out) = run_in(dir.path(), "compare", &cfg, &[]);
    assert!(o.status.success());
    assert!(out.join("report.json").exists());
    assert!(!out.join("comparison.csv").exists());
}

#[test]
fn manifest_hashes_the_config_text() {
    let dir = TempDir::new().unwrap();
    let body = small("interval", "p_laplacian(2)", "1");
    let cfg = write_config(dir.path(), "a.cfg", &body);
    let (o, out) = run_in(dir.path(), "solve", &cfg, &[]);
    assert!(o.status.success());
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config_sha256"], steiner_cli::run::sha256_hex(body.as_bytes()).as_str());
    assert_eq!(m["command"], "solve");
}
