//! `seqmobo`: run, benchmark, enumerate, report and oracle-check.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 oracle failure, 4 zero budget (nothing to do), 5 space too large to
//! enumerate.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use seqmobo::benchmark::benchmark;
use seqmobo::config::RunConfig;
use seqmobo::engine::{hv_trace, run_reference, run_with_replay};
use seqmobo::oracle::{brute_force_front, build_oracles, canned_batch, check_external, Direction, OracleSpec};
use seqmobo::report::{read_runlog, regenerate, write_benchmark, write_ground_truth, write_run_dir, RUNLOG};
use seqmobo::seqspace::{Sequence, DEFAULT_ENUMERATION_CAP};
use seqmobo::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ORACLE: u8 = 3;
const EXIT_BUDGET_ZERO: u8 = 4;
const EXIT_SPACE_TOO_LARGE: u8 = 5;

#[derive(Parser)]
#[command(name = "seqmobo", version, about = "Multi-objective Bayesian optimization of sequences")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimization and write its run directory.
    Run {
        config: PathBuf,
        /// Dotted `key=value` overrides applied before validation.
        overrides: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Reuse the scores in an existing runlog.csv of the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run every method × seed of the `[benchmark]` section.
    Benchmark {
        config: PathBuf,
        overrides: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score the whole mutation space and write the exact Pareto front.
    Enumerate {
        config: PathBuf,
        overrides: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Largest space size to enumerate.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
        cap: u128,
    },
    /// Regenerate front, hypervolume and entropy CSVs from runlog.csv.
    Report { run_dir: PathBuf },
    /// Check an external oracle against the stdio protocol.
    OracleCheck {
        /// Configuration whose external oracles are checked.
        config: Option<PathBuf>,
        /// Only check the oracle with this name.
        #[arg(long)]
        oracle: Option<String>,
        /// Direction the command is expected to announce.
        #[arg(long, default_value = "maximize")]
        direction: String,
        /// Length of the canned sequences.
        #[arg(long, default_value_t = 10)]
        length: usize,
        /// Slowest acceptable request, in seconds.
        #[arg(long, default_value_t = 5.0)]
        max_latency: f64,
        /// Oracle command line, given after `--` instead of a configuration.
        #[arg(last = true)]
        command: Vec<String>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(&e), message: e.to_string() }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_oracle_failure() => EXIT_ORACLE,
        Error::ExternalOracleRefused(_) => EXIT_ORACLE,
        Error::SpaceTooLarge { .. } => EXIT_SPACE_TOO_LARGE,
        Error::Config(_)
        | Error::InvalidResidue { .. }
        | Error::LengthMismatch { .. }
        | Error::InvalidSpace(_)
        | Error::InvalidMotif { .. }
        | Error::SpaceTooSmall { .. }
        | Error::MissingWeight { .. }
        | Error::MissingEmbedding(_)
        | Error::SequenceTooShort { .. }
        | Error::WrongObjectiveCount { .. }
        | Error::UnsupportedDimension(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

fn load(config: &Path, overrides: &[String]) -> Result<RunConfig, Failure> {
    Ok(RunConfig::load(config, overrides)?)
}

fn output_dir(cfg: &RunConfig, flag: Option<PathBuf>, fallback: String) -> PathBuf {
    flag.or_else(|| cfg.output_dir.as_ref().map(|d| cfg.resolve_path(d))).unwrap_or_else(|| PathBuf::from(fallback))
}

fn budget_zero() -> Failure {
    Failure { code: EXIT_BUDGET_ZERO, message: "budget is 0: nothing to run".into() }
}

fn cmd_run(config: &Path, overrides: &[String], output: Option<PathBuf>, resume: bool) -> Result<(), Failure> {
    let cfg = load(config, overrides)?;
    if cfg.budget == 0 {
        return Err(budget_zero());
    }
    let dir = output_dir(&cfg, output, format!("run-{}-seed{}", cfg.method, cfg.seed));
    let mut replay: HashMap<Sequence, Vec<f64>> = HashMap::new();
    if resume {
        let path = dir.join(RUNLOG);
        if path.exists() {
            let directions: Vec<Direction> = cfg.oracles.iter().map(|o| o.direction).collect();
            for e in read_runlog(&path)? {
                if e.scores.len() != directions.len() {
                    return Err(Error::config("runlog.csv objective count differs from the configuration").into());
                }
                let raw = e
                    .scores
                    .iter()
                    .zip(&directions)
                    .map(|(v, d)| if *d == Direction::Minimize { -v } else { *v })
                    .collect();
                replay.insert(e.sequence, raw);
            }
            log::info!("resuming with {} recorded evaluations", replay.len());
        }
    }
    let out = run_with_replay(&cfg, replay);
    write_run_dir(&dir, &out.log, cfg.entropy_window)?;
    if let Some(e) = out.error {
        return Err(Failure {
            code: exit_code(&e),
            message: format!("{e} (partial run of {} evaluations written to {})", out.log.len(), dir.display()),
        });
    }
    let hv = match &out.log.reference {
        Some(r) => hv_trace(&out.log.evaluations, r)?.last().map_or(0.0, |p| p.hypervolume),
        None => 0.0,
    };
    println!("{}: {} evaluations, final hypervolume {hv}", dir.display(), out.log.len());
    Ok(())
}

fn cmd_benchmark(config: &Path, overrides: &[String], output: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load(config, overrides)?;
    if cfg.budget == 0 {
        return Err(budget_zero());
    }
    let dir = output_dir(&cfg, output, "benchmark".to_string());
    let report = benchmark(&cfg)?;
    write_benchmark(&dir, &report)?;
    print!("{}", report.summary_text());
    if let Some(e) = report.first_error() {
        return Err(Failure { code: exit_code(e), message: format!("at least one run failed: {e}") });
    }
    Ok(())
}

fn cmd_enumerate(config: &Path, overrides: &[String], output: Option<PathBuf>, cap: u128) -> Result<(), Failure> {
    let cfg = load(config, overrides)?;
    let space = cfg.build_space()?;
    let size = space.size();
    if size > cap {
        return Err(Error::SpaceTooLarge { size, cap }.into());
    }
    let mut oracles = build_oracles(&cfg.oracles, &space, &cfg.base_dir)?;
    if let Some(o) = oracles.iter().find(|o| o.is_external()) {
        return Err(Error::ExternalOracleRefused(o.name().to_string()).into());
    }
    let reference = run_reference(&cfg, &space, &mut oracles)?;
    let gt = brute_force_front(&space, &mut oracles, &reference, cap)?;
    let dir = output_dir(&cfg, output, "ground-truth".to_string());
    write_ground_truth(&dir, &gt)?;
    println!(
        "{}: {} sequences, {} front members, hypervolume {}",
        dir.display(),
        gt.count,
        gt.front.len(),
        gt.hypervolume()
    );
    Ok(())
}

fn cmd_report(run_dir: &Path) -> Result<(), Failure> {
    regenerate(run_dir)?;
    println!("regenerated reports in {}", run_dir.display());
    Ok(())
}

struct CheckArgs {
    config: Option<PathBuf>,
    oracle: Option<String>,
    direction: String,
    length: usize,
    max_latency: f64,
    command: Vec<String>,
}

fn cmd_oracle_check(args: CheckArgs) -> Result<(), Failure> {
    let (specs, base_dir, length) = match (&args.config, args.command.is_empty()) {
        (Some(path), true) => {
            let cfg = load(path, &[])?;
            let specs: Vec<OracleSpec> = cfg
                .oracles
                .iter()
                .filter(|o| o.kind == "external")
                .filter(|o| args.oracle.as_ref().is_none_or(|n| &o.name == n))
                .cloned()
                .collect();
            let length = cfg.build_space().map(|s| s.len()).unwrap_or(args.length);
            (specs, cfg.base_dir.clone(), length)
        }
        (None, false) => {
            let direction: Direction = match args.direction.as_str() {
                "maximize" => Direction::Maximize,
                "minimize" => Direction::Minimize,
                other => return Err(Error::config(format!("unknown direction {other:?}")).into()),
            };
            let mut spec = OracleSpec::new(args.oracle.clone().unwrap_or("external".into()), "external", direction);
            spec.command = Some(args.command.clone());
            (vec![spec], PathBuf::from("."), args.length)
        }
        _ => return Err(Error::config("give either a configuration or a command after `--`").into()),
    };
    if specs.is_empty() {
        return Err(Error::config("no external oracle to check").into());
    }
    let batch = canned_batch(length.max(1));
    let mut failed = 0;
    for spec in &specs {
        let outcomes = check_external(spec, &base_dir, &batch, Duration::from_secs_f64(args.max_latency));
        for o in outcomes {
            println!("{} {} {}: {}", if o.passed { "PASS" } else { "FAIL" }, spec.name, o.check, o.detail);
            if !o.passed {
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure { code: EXIT_ORACLE, message: format!("{failed} check(s) failed") });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        "error"
    } else {
        match cli.verbose {
            0 => "warn",
            1 => "info",
            _ => "debug",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Run { config, overrides, output, resume } => cmd_run(&config, &overrides, output, resume),
        Command::Benchmark { config, overrides, output } => cmd_benchmark(&config, &overrides, output),
        Command::Enumerate { config, overrides, output, cap } => cmd_enumerate(&config, &overrides, output, cap),
        Command::Report { run_dir } => cmd_report(&run_dir),
        Command::OracleCheck { config, oracle, direction, length, max_latency, command } => {
            cmd_oracle_check(CheckArgs { config, oracle, direction, length, max_latency, command })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
