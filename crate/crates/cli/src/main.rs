use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ibplab::harness::config::{ExperimentConfig, ModelClass};
use ibplab::harness::experiment::{run_experiment, run_oracle, RunOutput};
use ibplab::harness::plot::{ingredients_svg, report_svg};
use ibplab::harness::reduce::worker_count;
use ibplab::harness::report::McReport;
use ibplab::Error;

#[derive(Parser, Debug)]
#[command(name = "ibplab", version, about = "Monte Carlo verification of integration-by-parts weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(clap::Args, Debug, Clone)]
struct Opts {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Time steps on [0, T].
    #[arg(long = "dt-steps", global = true)]
    dt_steps: Option<usize>,
    /// Output directory; the report goes to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    IbpSemilinear,
    IbpHamiltonian,
    IbpDelay,
    Invariance,
    Fomin,
    Contraction,
    /// Lyapunov and Fokker-Planck deciders for the closed-form references.
    Oracle,
    /// SVG of the weight ingredients (--config) or of a report (--report).
    Plot {
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Parse and resolve a configuration without running it.
    CheckConfig,
}

/// Exit status and a stderr line per failure.
enum Failure {
    Config(String),
    Run(String),
    Checks(Vec<String>),
}

fn log(level: &str, kind: &str, msg: &str) {
    eprintln!(
        "ibplab level={level} kind={kind} msg={}",
        serde_json::to_string(msg).unwrap_or_default()
    );
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Diverged { .. } | Error::Io(_) => Failure::Run(e.to_string()),
        other => Failure::Config(other.to_string()),
    }
}

fn load(opts: &Opts, expected: Option<ModelClass>) -> Result<ExperimentConfig, Failure> {
    let path = opts
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path).map_err(classify)?;
    if let Some(m) = expected {
        if cfg.model != m {
            return Err(Failure::Config(format!(
                "configuration is for model `{}`, this subcommand runs `{}`",
                cfg.model.as_str(),
                m.as_str()
            )));
        }
    }
    if let Some(p) = opts.paths {
        cfg.paths = p;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(k) = opts.dt_steps {
        cfg.steps = k;
    }
    cfg.build().map_err(classify)?;
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn emit(opts: &Opts, out: RunOutput) -> Result<(), Failure> {
    let report = &out.report;
    let rendered: Vec<(String, Vec<u8>)> = match opts.format {
        Format::Json => vec![("report.json".into(), (report.to_json() + "\n").into_bytes())],
        Format::Csv => {
            let mut f = Vec::new();
            let mut c = Vec::new();
            report.write_csv(&mut f).map_err(classify)?;
            report.write_checks_csv(&mut c).map_err(classify)?;
            vec![("report.csv".into(), f), ("checks.csv".into(), c)]
        }
    };
    match &opts.out {
        Some(dir) => {
            for (name, bytes) in &rendered {
                write_file(dir, name, bytes)?;
            }
            for t in &out.tables {
                write_file(dir, &t.name, &t.bytes)?;
            }
        }
        None => {
            for (_, bytes) in &rendered {
                print!("{}", String::from_utf8_lossy(bytes));
            }
        }
    }
    for note in &report.notes {
        log("info", "note", note);
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Checks(report.failures()))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let workers = worker_count();
    let opts = &cli.opts;
    let expected = match cli.command {
        Command::IbpSemilinear => Some(ModelClass::Semilinear),
        Command::IbpHamiltonian => Some(ModelClass::Hamiltonian),
        Command::IbpDelay => Some(ModelClass::Delay),
        Command::Invariance => Some(ModelClass::Invariance),
        Command::Fomin => Some(ModelClass::Fomin),
        Command::Contraction => Some(ModelClass::Contraction),
        Command::Oracle | Command::Plot { .. } | Command::CheckConfig => None,
    };
    match &cli.command {
        Command::CheckConfig => {
            let cfg = load(opts, None)?;
            println!("ok model={} hash={}", cfg.model.as_str(), cfg.hash());
            Ok(())
        }
        Command::Oracle => {
            let cfg = load(opts, None)?;
            emit(opts, run_oracle(&cfg).map_err(classify)?.into())
        }
        Command::Plot { report } => {
            let (name, svg) = match (report, &opts.config) {
                (Some(path), _) => {
                    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    let r = McReport::from_json(&text).map_err(classify)?;
                    ("report.svg", report_svg(&r).map_err(classify)?)
                }
                (None, Some(_)) => {
                    let cfg = load(opts, None)?;
                    ("ingredients.svg", ingredients_svg(&cfg).map_err(classify)?)
                }
                (None, None) => return Err(Failure::Config("plot needs --config or --report".into())),
            };
            match &opts.out {
                Some(dir) => write_file(dir, name, svg.as_bytes()),
                None => {
                    print!("{svg}");
                    Ok(())
                }
            }
        }
        _ => {
            let cfg = load(opts, expected)?;
            emit(opts, run_experiment(&cfg, workers).map_err(classify)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks(lines)) => {
            for l in &lines {
                log("error", "check", l);
            }
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            log("error", "run", &msg);
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            log("error", "config", &msg);
            ExitCode::from(2)
        }
    }
}
