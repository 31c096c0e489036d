use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use steiner_cli::config::{parse_config, SweepParam};
use steiner_cli::run::{run, Command, Invocation};

/// Mass comparison experiments for Steiner-symmetrized elliptic problems.
#[derive(Parser)]
#[command(name = "steiner", version)]
struct Cli {
    /// Overrides `verify.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Eps,
    Tau,
    H,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the semidiscrete problem; writes solution.csv and energy.json.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Accretivity trials and subsolution residual; writes accretivity.json and subsolution.csv.
    StarCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mass comparison; writes comparison.csv and report.json.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Comparison over a parameter family; writes sweep.json and one comparison.csv per point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: Option<Param>,
        /// Comma separated; for `h`, slice counts N or spacings 1/(N+1).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let config_path = match &cli.command {
        Sub::Solve { config } | Sub::StarCheck { config } | Sub::Compare { config } | Sub::Sweep { config, .. } => {
            config.clone()
        }
    };
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let base = config_path.parent().map(PathBuf::from).unwrap_or_default();
    let config = match parse_config(&text, &base) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("error: invalid config {} ({} errors)", config_path.display(), errors.len());
            for e in errors {
                eprintln!("  {e}");
            }
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let command = match cli.command {
        Sub::Solve { .. } => Command::Solve,
        Sub::StarCheck { .. } => Command::StarCheck,
        Sub::Compare { .. } => Command::Compare,
        Sub::Sweep { param, values, .. } => {
            let param = param.map(|p| match p {
                Param::Eps => SweepParam::Eps,
                Param::Tau => SweepParam::Tau,
                Param::H => SweepParam::H,
            });
            let from_config = config.verify.sweep.clone();
            match (param, values.is_empty(), from_config) {
                (Some(param), false, _) => Command::Sweep { param, values },
                (None, true, Some((param, values))) => Command::Sweep { param, values },
                (Some(param), true, Some((p, values))) if p == param => Command::Sweep { param, values },
                _ => {
                    eprintln!("error: sweep needs --param and --values, or sweep.param and sweep.values in [verify]");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
        }
    };
    let inv = Invocation {
        config: &config,
        config_text: &text,
        config_path: Some(&config_path),
        seed: cli.seed.unwrap_or(config.verify.seed),
        out: cli.out.unwrap_or_else(|| base.join(&config.output_dir)),
    };
    let (manifest, result) = run(&command, &inv);
    match result {
        Ok(pass) => {
            println!("{}: {} ({:.2} s) -> {}", command.name(), if pass { "pass" } else { "FAIL" }, manifest.total_seconds, inv.out.display());
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}
