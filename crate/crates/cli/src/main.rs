use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpad_cli::{run, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "lpad",
    about = "Train and evaluate VAE anomaly detectors with Gaussian, Bernoulli or RBM priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Independently seeded models to train (seeds `seed`, `seed + 1`, ...).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Output directory; overrides the `out` key.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit on train and validation combined, evaluate on test.
    #[arg(long)]
    combine_train_val: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic benchmark dataset as CSV.
    Synth(Common),
    /// Train models and write checkpoints and loss curves.
    Train(Common),
    /// Train (or load `checkpoint`) and write evaluation reports.
    Eval(Common),
    /// Evaluate a checkpoint on new data, optionally after post-training.
    Transfer(Common),
    /// F1 table over the latent-size by beta grid.
    Sweep(Common),
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (command, args) = match cli.command {
        Cmd::Synth(a) => (Command::Synth, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Transfer(a) => (Command::Transfer, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if args.combine_train_val {
        cfg.combine_train_val = true;
        cfg.validate()?;
    }
    let outcome = run(&cfg, command, args.repeats)?;
    if let Some(s) = &outcome.summary {
        println!(
            "{} x{}: precision {:.3} ± {:.3}, recall {:.3} ± {:.3}, f1 {:.3} ± {:.3}",
            s.command,
            s.repeats,
            s.precision.mean,
            s.precision.sd,
            s.recall.mean,
            s.recall.sd,
            s.f1.mean,
            s.f1.sd
        );
    }
    if let Some(t) = &outcome.sweep {
        for (l, row) in t.latents.iter().zip(&t.f1) {
            let cells: Vec<String> = row.iter().map(|c| format!("{:.3}", c.mean)).collect();
            println!("latent {l}: {}", cells.join(" "));
        }
    }
    println!(
        "wrote {} files under {}",
        outcome.files.len(),
        cfg.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
