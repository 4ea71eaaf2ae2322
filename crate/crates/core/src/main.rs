use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tinv::harness::{self, EvalMode, InferOptions, InferOutput, Manifest, Task};
use tinv::thmm::{Decoding, DenoiseMode};

/// Transformation-invariant image and video models.
///
/// Set TINV_THREADS to fix the worker thread count.
#[derive(Parser)]
#[command(name = "tinv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Manifest overrides shared by `train` and `gen`.
#[derive(clap::Args)]
struct Overrides {
    /// Flat `key = value` manifest; defaults apply when omitted.
    manifest: Option<PathBuf>,
    /// Override a manifest key, e.g. `--set clusters=6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

impl Overrides {
    fn manifest(&self) -> tinv::Result<Manifest> {
        let mut m = match &self.manifest {
            Some(p) => Manifest::load(p)?,
            None => Manifest::default(),
        };
        for pair in &self.set {
            m.set_pair(pair)?;
        }
        if let Some(s) = self.seed {
            m.set("seed", &s.to_string())?;
        }
        if let Some(o) = &self.output {
            m.set("output", &o.to_string_lossy())?;
        }
        if let Some(i) = self.iterations {
            m.set("iterations", &i.to_string())?;
        }
        if let Some(r) = self.restarts {
            m.set("restarts", &r.to_string())?;
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Denoise,
    Stabilize,
    Track,
    Score,
    Classify,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Classification,
    Clustering,
    Tracking,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiseArg {
    Soft,
    Hard,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodingArg {
    Smoothed,
    Viterbi,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model with restarts and write the model file, step CSV and montages.
    Train(Overrides),
    /// Run a trained model over a directory of PGM frames.
    Infer {
        /// Model file; give one per class to classify by the Bayes rule.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Output directory for frames, file for CSV and scores.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "soft")]
        denoise: DenoiseArg,
        #[arg(long, value_enum, default_value = "smoothed")]
        decoding: DecodingArg,
    },
    /// Compare a label or track CSV with a ground-truth CSV.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Also write the report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a generator's frames and ground truth.
    Gen(Overrides),
}

fn run(cli: Cli) -> tinv::Result<()> {
    match cli.command {
        Command::Train(o) => {
            let outcome = harness::cmd_train(&o.manifest()?)?;
            for (k, scores) in outcome.restart_logliks.iter().enumerate() {
                let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                println!("model {k} best loglik {best:.6} over {} restarts", scores.len());
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Infer {
            model,
            frames,
            task,
            output,
            denoise,
            decoding,
        } => {
            let task = match task {
                TaskArg::Denoise => Task::Denoise,
                TaskArg::Stabilize => Task::Stabilize,
                TaskArg::Track => Task::Track,
                TaskArg::Score => Task::Score,
                TaskArg::Classify => Task::Classify,
            };
            let opts = InferOptions {
                denoise: match denoise {
                    DenoiseArg::Soft => DenoiseMode::Soft,
                    DenoiseArg::Hard => DenoiseMode::Hard,
                },
                decoding: match decoding {
                    DecodingArg::Smoothed => Decoding::Smoothed,
                    DecodingArg::Viterbi => Decoding::Viterbi,
                },
            };
            match harness::cmd_infer(&model, &frames, task, opts, &output)? {
                InferOutput::Score(s) => println!("{s:.6}"),
                _ => println!("wrote {}", output.display()),
            }
        }
        Command::Eval {
            predictions,
            truth,
            mode,
            output,
        } => {
            let mode = match mode {
                ModeArg::Classification => EvalMode::Classification,
                ModeArg::Clustering => EvalMode::Clustering,
                ModeArg::Tracking => EvalMode::Tracking,
            };
            let report = harness::cmd_eval(&predictions, &truth, mode)?.to_string();
            println!("{report}");
            if let Some(p) = output {
                std::fs::write(p, format!("{report}\n"))?;
            }
        }
        Command::Gen(o) => {
            let m = o.manifest()?;
            let data = harness::cmd_gen(&m)?;
            println!("wrote {} frames of {}", data.frames.len(), data.shape);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("TINV_THREADS").ok().and_then(|v| v.parse().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("tinv: TINV_THREADS ignored: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tinv: {e}");
            ExitCode::FAILURE
        }
    }
}
