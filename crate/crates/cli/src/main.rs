use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ncsr::verify::{Fault, Level};
use ncsr_cli::{cmd_eval, cmd_sample, cmd_synth_data, cmd_train, cmd_verify, CliError, EvalArgs, SampleArgs};

#[derive(Parser)]
#[command(name = "ncsr", version = ncsr_cli::BUILD_ID, about = "Noise-conditional flow super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config.
    Train {
        #[arg(short = 'c')]
        config: PathBuf,
    },
    /// Draw super-resolved samples for one LR image.
    Sample {
        #[arg(short = 'k')]
        checkpoint: PathBuf,
        #[arg(short = 'i')]
        input: PathBuf,
        #[arg(short = 'n', default_value_t = 1)]
        n: usize,
        #[arg(short = 't', default_value_t = 0.9)]
        temperature: f64,
        #[arg(short = 's', default_value_t = 0)]
        seed: u64,
        #[arg(short = 'o')]
        out: PathBuf,
    },
    /// Score a checkpoint on the HR images of a manifest.
    Eval {
        #[arg(short = 'k')]
        checkpoint: PathBuf,
        #[arg(short = 'm')]
        manifest: PathBuf,
        #[arg(short = 'n', default_value_t = 10)]
        n: usize,
        #[arg(short = 't', default_value_t = 0.9)]
        temperature: f64,
        #[arg(short = 's', default_value_t = 0)]
        seed: u64,
    },
    /// Run the numerical self-checks.
    Verify {
        #[arg(long, default_value = "quick")]
        level: String,
        #[arg(short = 's', default_value_t = 0)]
        seed: u64,
        /// Corrupt every 1x1 weight to a singular matrix first.
        #[arg(long, hide = true)]
        inject_singular_1x1: bool,
    },
    /// Write the synthetic corpus described by a run config.
    SynthData {
        #[arg(short = 'c')]
        config: PathBuf,
        #[arg(short = 'o')]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => {
            let s = cmd_train(&config)?;
            println!("run directory: {}", s.run_dir.display());
            println!("final checkpoint: {} (sha256 {})", s.final_checkpoint.display(), s.checkpoint_hash);
            if let Some(b) = s.final_bits_per_dim {
                println!("final bits/dim: {b:.4}");
            }
        }
        Command::Sample { checkpoint, input, n, temperature, seed, out } => {
            let paths = cmd_sample(&SampleArgs {
                checkpoint: &checkpoint,
                lr_image: &input,
                n,
                temperature,
                seed,
                out_dir: &out,
            })?;
            println!("wrote {} samples to {}", paths.len(), out.display());
        }
        Command::Eval { checkpoint, manifest, n, temperature, seed } => {
            let s = cmd_eval(&EvalArgs {
                checkpoint: &checkpoint,
                manifest: &manifest,
                n,
                temperature,
                seed,
            })?;
            println!("{}", s.report.summary_line());
            println!("reports: {}", s.out_dir.display());
        }
        Command::Verify { level, seed, inject_singular_1x1 } => {
            let level: Level = level.parse()?;
            let fault = if inject_singular_1x1 { Fault::Singular1x1 } else { Fault::None };
            let results = cmd_verify(level, seed, fault);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Err(CliError::failure(format!("{failed} verification checks failed")));
            }
        }
        Command::SynthData { config, out } => {
            let manifest = cmd_synth_data(&config, &out)?;
            println!("manifest: {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
