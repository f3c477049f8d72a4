use clap::{Parser, Subcommand};
use freqseg_cli::commands;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "freqseg",
    about = "Frequency-decomposition segmentation toolkit",
    long_about = "Batch tools around a multi-frequency encoder-decoder segmentation \
                  network: power-spectrum image decomposition, ground-truth target \
                  generation, training, evaluation, gradient checking, and ablation runs.\n\
                  Exit codes: 0 ok, 1 check failure, 2 configuration error, 3 numerical divergence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an image into low/high-frequency components by power-spectrum cutoff
    Decompose {
        /// Input image (8-bit RGB or grayscale PNG)
        #[arg(long)]
        input: PathBuf,
        /// Power-spectrum ratio in [0, 1]
        #[arg(long, default_value_t = 0.5)]
        r: f64,
        /// Output directory
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Derive edge and distance ground truth from a binary mask image
    GenTargets {
        /// Mask image (binarized at > 127)
        #[arg(long)]
        mask: PathBuf,
        /// Output directory
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Train a model from a config file; writes checkpoint and history CSV
    Train {
        /// Run configuration (key = value sections)
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// History CSV output path
        #[arg(long, default_value = "history.csv")]
        history: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset
    Eval {
        /// Checkpoint path
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset: a paired-directory path or `synthetic:<seed>:<n>`
        #[arg(long)]
        data: String,
        /// Foreground threshold on the sigmoid output
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Verify analytic gradients against central finite differences
    Gradcheck {
        /// Maximum allowed relative error
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Train and score every ablation toggle row under a shared budget
    Ablate {
        /// Run configuration (key = value sections)
        #[arg(long)]
        config: PathBuf,
        /// `default` (the five published rows) or a rows file
        #[arg(long, default_value = "default")]
        rows: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Decompose { input, r, out_dir } => commands::cmd_decompose(input, *r, out_dir),
        Command::GenTargets { mask, out_dir } => commands::cmd_gen_targets(mask, out_dir),
        Command::Train { config, out, history } => commands::cmd_train(config, out, history),
        Command::Eval { checkpoint, data, threshold } => {
            commands::cmd_eval(checkpoint, data, *threshold)
        }
        Command::Gradcheck { tol } => commands::cmd_gradcheck(*tol),
        Command::Ablate { config, rows } => commands::cmd_ablate(config, rows),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
