use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seizure_core::cli::{
    cmd_evaluate, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, RunConfig, StageError, MODEL_FILE,
};

/// EEG seizure detector: wavelet denoising, 1D CNN and multi-head attention.
#[derive(Parser)]
#[command(name = "seizure", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a CSV (or the synthetic surrogate) and write model + reports.
    Train {
        /// key = value run configuration
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use synthetic data when no CSV is available.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Suppress per-epoch progress on stderr.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Score a labelled CSV with a saved model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print `prob,label` for every row of a CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare analytic and numeric gradients for every layer.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write a synthetic dataset in the input CSV format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 250)]
        per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn fail(e: StageError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Train { config, data, out, seed, synthetic, max_epochs, quiet } => {
            let mut cfg = match config.map(RunConfig::from_file).unwrap_or_else(|| Ok(RunConfig::default())) {
                Ok(c) => c,
                Err(e) => return fail(StageError { stage: "config", source: e }),
            };
            if data.is_some() {
                cfg.data = data;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(s) = seed {
                cfg.hyper.seed = s;
            }
            if let Some(m) = max_epochs {
                cfg.hyper.max_epochs = m;
            }
            cfg.synthetic |= synthetic;
            let mut progress = |r: &seizure_core::optim::EpochRecord| {
                if !quiet {
                    eprintln!(
                        "epoch {:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.2e}",
                        r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
                    );
                }
            };
            match cmd_train(&cfg, &mut progress) {
                Ok(o) => {
                    print!("{}", o.report.to_key_value());
                    println!("{}", o.report.confusion);
                    println!("model written to {}", o.out_dir.join(MODEL_FILE).display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Evaluate { model, data, out } => match cmd_evaluate(&model, &data, out.as_deref()) {
            Ok(r) => {
                print!("{}", r.to_key_value());
                println!("{}", r.confusion);
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Predict { model, data } => match cmd_predict(&model, &data, std::io::stdout().lock()) {
            Ok(s) if s.rejected.is_empty() => ExitCode::SUCCESS,
            Ok(s) => {
                for (row, msg) in &s.rejected {
                    eprintln!("row {row}: {msg}");
                }
                eprintln!("{} rows scored, {} rejected", s.scored, s.rejected.len());
                ExitCode::from(2)
            }
            Err(e) => fail(e),
        },
        Command::Gradcheck { seed } => {
            let report = cmd_gradcheck(seed);
            print!("{report}");
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("gradient check failed: {}", report.failures().join(", "));
                ExitCode::from(3)
            }
        }
        Command::Synth { out, per_class, seed } => match cmd_synth(&out, per_class, seed) {
            Ok(d) => {
                println!("wrote {} rows ({} seizure) to {}", d.len(), d.n_positive(), out.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            ExitCode::from(code)
        }
    }
}
