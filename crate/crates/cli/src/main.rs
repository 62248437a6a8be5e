use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lorma_cli::commands::{self, GRADCHECK_TOL};
use lorma_cli::{exit, CliError};
use lorma_core::adapters::{AdapterVariant, MultiplySide};

#[derive(Parser)]
#[command(name = "lorma", version, about = "Low-rank additive and multiplicative adapter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every variant and seed of one or more experiment configs.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Configs to run concurrently. LORMA_JOBS takes precedence.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory, replacing the config's `output_dir`. With several
        /// configs each gets a subdirectory named after its file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare closed-form gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 16)]
        d: usize,
        /// Defaults to `d`.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 2)]
        r: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// One variant, or all of them when omitted.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<AdapterVariant>,
        #[arg(long, default_value = "pre", value_parser = parse_side)]
        side: MultiplySide,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Weight-comparison metrics for two stored matrices plus a random baseline.
    Analyze {
        reference: PathBuf,
        test: PathBuf,
        #[arg(long, default_value_t = 4)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the left/right multiplier existence claims.
    Theory {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild the convergence table of a finished run directory.
    Report { run_dir: PathBuf },
}

fn parse_variant(s: &str) -> Result<AdapterVariant, String> {
    s.parse().map_err(|e: lorma_core::LormaError| e.to_string())
}

fn parse_side(s: &str) -> Result<MultiplySide, String> {
    match s {
        "pre" => Ok(MultiplySide::Pre),
        "post" => Ok(MultiplySide::Post),
        other => Err(format!("unknown side `{other}` (expected pre or post)")),
    }
}

fn jobs_from_env(flag: usize) -> Result<usize, CliError> {
    match std::env::var("LORMA_JOBS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("LORMA_JOBS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(flag.max(1)),
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { configs, jobs, out } => {
            let jobs = jobs_from_env(jobs)?;
            let mut first_err = None;
            for (path, res) in configs.iter().zip(commands::run_many(&configs, out.as_deref(), jobs)) {
                match res {
                    Ok((dir, summary, secs)) => {
                        println!("{}: run {} -> {} ({secs:.2}s)", path.display(), &summary.run_hash[..12], dir.display());
                        for v in &summary.variants {
                            println!(
                                "  {:<12} mean final loss {:.6e}  mean auc {:.6e}",
                                v.variant.name(),
                                v.mean_final_loss,
                                v.mean_auc
                            );
                        }
                    }
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        }
        Command::Gradcheck { d, k, r, batch, variant, side, seed } => {
            let variants = variant.map_or(AdapterVariant::ALL.to_vec(), |v| vec![v]);
            let mut failed = Vec::new();
            for v in variants {
                let rep = commands::gradcheck(v, side, d, k.unwrap_or(d), r, batch, seed)?;
                println!("{}", commands::format_gradcheck(v, &rep));
                if !rep.passes(GRADCHECK_TOL) {
                    failed.push(format!("{} at {}[{},{}]", v.name(), rep.param, rep.row, rep.col));
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Check(format!("relative error >= {GRADCHECK_TOL:e}: {}", failed.join(", "))))
            }
        }
        Command::Analyze { reference, test, r, seed, out } => {
            let csv = commands::analyze(&reference, &test, r, seed)?.to_csv();
            print!("{csv}");
            if let Some(path) = out {
                std::fs::write(&path, &csv).map_err(|e| CliError::io(path, e))?;
            }
            Ok(())
        }
        Command::Theory { seed } => {
            let claims = commands::theory(seed)?;
            print!("{}", commands::format_claims(&claims));
            let failed: Vec<&str> = claims.iter().filter(|c| !c.passed).map(|c| c.claim.as_str()).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Check(failed.join(", ")))
            }
        }
        Command::Report { run_dir } => {
            print!("{}", commands::report(&run_dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors by itself.
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
