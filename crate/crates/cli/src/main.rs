use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use pulab::verify::{gradient_suite, GRAD_TOLERANCE};
use pulab_cli::{load_config, Experiment, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "pulab", version, about = "Positive-unlabeled learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured method and write metrics and summaries.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config and the environment.
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the experiment and tabulate last-50 and last-100 accuracy.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the Observer-GAN for `epoch` epochs and dump generator samples.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epoch: usize,
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every layer kind under the three losses.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn experiment(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<Experiment> {
    Ok(Experiment::new(load_config(&config)?, out, seed))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let exp = experiment(config, out, seed)?;
            for s in exp.run()? {
                let cell = |w: Option<&pulab::metrics::RollingSummary>| w.map_or("n/a".into(), |r| r.to_percent_string());
                println!(
                    "{:<14} last 50: {:<14} last 100: {}",
                    s.method,
                    cell(s.last_50.as_ref()),
                    cell(s.last_100.as_ref())
                );
            }
            println!("outputs in {}", exp.out_dir.display());
        }
        Command::Compare { config, out, seed } => {
            let exp = experiment(config, out, seed)?;
            let (table, _) = exp.compare()?;
            print!("{table}");
        }
        Command::Dump {
            config,
            epoch,
            out,
            seed,
        } => {
            let path = experiment(config, out, seed)?.dump(epoch)?;
            println!("{}", path.display());
        }
        Command::Gradcheck { seed } => {
            let cases = gradient_suite(seed)?;
            let mut ok = true;
            for c in &cases {
                let verdict = if c.passed() { "PASS" } else { "FAIL" };
                ok &= c.passed();
                println!("{verdict} {:.3e} {}", c.max_rel_error, c.name);
            }
            println!("tolerance {GRAD_TOLERANCE:e}");
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
