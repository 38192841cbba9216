use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use glevy_cli::commands::{run, Command, Options, Outcome, VerifyTarget};
use glevy_cli::config::RunConfig;
use glevy_cli::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "glevy",
    version,
    about = "Sublinear expectations of finite-activity G-Levy processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Check the model: reference measure, density ratios, ellipticity.
    Validate(Common),
    /// Solve the PIDE for a single-time payoff.
    Solve(Common),
    /// Sublinear expectation of a cylinder functional.
    Expect(Common),
    /// MC means under every constant control.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write this many paths per control as CSV.
        #[arg(long, default_value_t = 0)]
        dump_paths: usize,
    },
    /// Compare the PDE value with MC means under constant and greedy controls.
    Duality(Common),
    /// Extract (H, K^c, K^d) and check the pathwise residual.
    Decompose(Common),
    /// Run a verification.
    Verify {
        #[arg(value_enum)]
        target: Target,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Target {
    Apriori,
    Stability,
    Embedding,
    Compensator,
    All,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; optional for `verify all`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path; CSV artifacts are written beside it. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

/// Seed of `verify all` when neither a config nor `--seed` gives one.
const DEFAULT_SUITE_SEED: u64 = 20240229;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(passed) => ExitCode::from(if passed { 0 } else { 1 }),
        Err(e) => {
            eprintln!("glevy: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let (command, common, dump_paths) = match cli.command {
        Cmd::Validate(c) => (Command::Validate, c, 0),
        Cmd::Solve(c) => (Command::Solve, c, 0),
        Cmd::Expect(c) => (Command::Expect, c, 0),
        Cmd::Simulate { common, dump_paths } => (Command::Simulate, common, dump_paths),
        Cmd::Duality(c) => (Command::Duality, c, 0),
        Cmd::Decompose(c) => (Command::Decompose, c, 0),
        Cmd::Verify { target, common } => {
            let t = match target {
                Target::Apriori => VerifyTarget::Apriori,
                Target::Stability => VerifyTarget::Stability,
                Target::Embedding => VerifyTarget::Embedding,
                Target::Compensator => VerifyTarget::Compensator,
                Target::All => VerifyTarget::All,
            };
            (Command::Verify(t), common, 0)
        }
    };
    let config = match &common.config {
        Some(path) => Some(RunConfig::parse(&read(path)?)?),
        None if command == Command::Verify(VerifyTarget::All) => None,
        None => return Err(CliError::Config("--config is required".into())),
    };
    let opts = Options {
        seed: common.seed,
        dump_paths,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let mut outcome = pool.install(|| match &config {
        Some(cfg) => run(command, cfg, &opts),
        None => run_suite_only(&opts),
    })?;
    outcome.report.wall_clock_s = start.elapsed().as_secs_f64();
    write_outputs(&outcome, common.out.as_deref())?;
    Ok(outcome.report.passed)
}

fn run_suite_only(opts: &Options) -> Result<Outcome, CliError> {
    let seed = opts.seed.unwrap_or(DEFAULT_SUITE_SEED);
    let digest = glevy_cli::report::digest("verify all", &serde_json::json!({ "seed": seed }));
    let run = glevy_cli::suite::run_suite(seed)?;
    for line in run.lines() {
        eprintln!("{line}");
    }
    Ok(Outcome {
        report: run.into_report(digest),
        artifacts: Vec::new(),
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_outputs(outcome: &Outcome, out: Option<&Path>) -> Result<(), CliError> {
    let json = outcome.report.to_json();
    match out {
        Some(path) => {
            write(path, &json)?;
            let stem = path.with_extension("");
            for a in &outcome.artifacts {
                write(
                    &stem.with_extension(format!("{}.csv", a.suffix)),
                    &a.contents,
                )?;
            }
        }
        None => {
            println!("{json}");
            for a in &outcome.artifacts {
                write(Path::new(&format!("glevy-{}.csv", a.suffix)), &a.contents)?;
            }
        }
    }
    Ok(())
}
