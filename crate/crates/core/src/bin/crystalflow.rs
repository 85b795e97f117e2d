use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crystalflow::cli::{self, Run, CHECKPOINT_FILE, SAMPLES_FILE};

#[derive(Parser)]
#[command(
    version,
    about = "Constrained crystal sampler trained with trajectory balance"
)]
struct Args {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write a checkpoint, log and resolved config.
    Train,
    /// Sample crystals from a checkpoint into a CSV.
    Sample {
        /// Defaults to the checkpoint in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `sample.n` from the config.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Energy and diversity statistics of a samples CSV.
    Eval {
        /// Defaults to the samples file in the output directory.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Compare a briefly trained sampler with the enumerated target distribution.
    OracleCheck,
    /// Summarize the crystallographic tables.
    Tables,
}

fn run(args: Args) -> crystalflow::Result<()> {
    let run = Run::new(args.config.as_deref(), args.seed, args.out.as_deref())?;
    run.config.validate()?;
    match args.command {
        Command::Train => {
            let rows = cli::train(&run)?;
            if let Some(last) = rows.last() {
                println!(
                    "{} iterations, final loss {:.6}, log Z {:.6}",
                    rows.len(),
                    last.loss,
                    last.log_z
                );
            }
        }
        Command::Sample { checkpoint, n } => {
            let ckpt = checkpoint.unwrap_or_else(|| run.out().join(CHECKPOINT_FILE));
            let path = cli::sample(&run, &ckpt, n.unwrap_or(run.config.sample.n))?;
            println!("{}", path.display());
        }
        Command::Eval { samples } => {
            let path = samples.unwrap_or_else(|| run.out().join(SAMPLES_FILE));
            let r = cli::eval(&run, &path)?;
            println!("{}", serde_json::to_string_pretty(&r.energy)?);
        }
        Command::OracleCheck => {
            let r = cli::oracle_check(&run)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Tables => {
            let r = cli::tables_command(&run)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
