use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use peakon_lab::experiment::{
    parse_config, run_check_weights, run_identities, run_ladder, run_simulate, run_train,
    RunOptions, Summary,
};

#[derive(Parser)]
#[command(version, about = "Peakon simulation and stability diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (default: the config's `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress and the assertion table.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one initial state and check the run invariants.
    Simulate { config: PathBuf },
    /// Fuzz the pointwise and split identities.
    VerifyIdentities { config: PathBuf },
    /// The δ-ladder of perturbed peakon runs with its scaling fit.
    StabilitySweep { config: PathBuf },
    /// Train run with modulation and localized-energy diagnostics.
    TrainExperiment { config: PathBuf },
    /// Certify the cutoff family at scale K.
    CheckWeights { k: f64 },
}

fn report(s: &Summary, quiet: bool) {
    if quiet {
        return;
    }
    for a in &s.assertions {
        let tag = match (a.passed, a.soft) {
            (true, _) => "PASS",
            (false, true) => "WARN",
            (false, false) => "FAIL",
        };
        println!("{tag} {:<28} {:>12.5e} (tol {:.1e})", a.name, a.value, a.tolerance);
    }
    for (k, v) in &s.fitted {
        println!("fit  {k:<28} {v:>12.5e}");
    }
    if let Some(f) = &s.failure {
        println!("run failed: {}", f.message);
    }
    println!(
        "{}: {} in {:.2} s",
        s.command,
        if s.all_passed { "all assertions passed" } else { "FAILED" },
        s.runtime_seconds
    );
}

fn run(cli: Cli) -> peakon_lab::Result<Summary> {
    let (path, runner): (_, fn(_, _) -> _) = match cli.command {
        Command::CheckWeights { k } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("out"));
            return run_check_weights(k, &out);
        }
        Command::Simulate { config } => (config, run_simulate),
        Command::VerifyIdentities { config } => (config, run_identities),
        Command::StabilitySweep { config } => (config, run_ladder),
        Command::TrainExperiment { config } => (config, run_train),
    };
    let mut cfg = parse_config(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let opts = RunOptions {
        out,
        quiet: cli.quiet,
    };
    Ok(runner(&cfg, &opts)?.summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    match run(cli) {
        Ok(s) => {
            report(&s, quiet);
            if s.all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
