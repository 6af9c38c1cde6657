use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use samcnet::colocation::{parse_measure, Measure};
use samcnet::interpret::{SignatureGraph, VectorNorm};
use samcnet_cli::{BaselineArgs, BaselineClassifier, BenchArgs, InterpretArgs, SplitChoice};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "samcnet", version, about = "Classify multi-category point patterns by their spatial configuration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a JSON spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec seed (and SAMCNET_SEED).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitChoice,
        /// Output directory (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a co-location statistics baseline.
    Baseline {
        #[arg(long, value_parser = measure)]
        measure: Measure,
        #[arg(long, value_enum)]
        classifier: BaselineClassifier,
        #[arg(long)]
        data: PathBuf,
        /// Neighbor distance thresholds, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "50")]
        h: Vec<f64>,
        /// Hidden width of the MLP classifier.
        #[arg(long, default_value_t = 2048)]
        hidden: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the seven component combinations.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write pair importances and ranked N-way relationships.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitChoice,
        /// Graph the signatures are read from: last-layer or coordinates.
        #[arg(long, value_parser = signature_graph, default_value = "last-layer")]
        graph: SignatureGraph,
        #[arg(long, value_parser = norm, default_value = "l2")]
        norm: VectorNorm,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Time per-sample inference.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        num_points: Option<usize>,
        /// Only time the first N samples.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn measure(s: &str) -> Result<Measure> {
    Ok(parse_measure(s)?)
}

fn signature_graph(s: &str) -> Result<SignatureGraph> {
    match s {
        "last-layer" => Ok(SignatureGraph::LastLayer),
        "coordinates" => Ok(SignatureGraph::Coordinates),
        _ => bail!("expected last-layer or coordinates"),
    }
}

fn norm(s: &str) -> Result<VectorNorm> {
    match s {
        "l1" => Ok(VectorNorm::L1),
        "l2" => Ok(VectorNorm::L2),
        _ => bail!("expected l1 or l2"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut log = |line: &str| eprintln!("{line}");
    match cli.command {
        Command::Generate { spec, out, seed } => {
            let data = samcnet_cli::generate(&spec, &out, seed)?;
            println!("wrote {} patterns to {}", data.len(), out.display());
        }
        Command::Train { config } => {
            let outcome = samcnet_cli::train(&config, &mut log)?;
            println!("wrote {}", outcome.checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => {
            let m = samcnet_cli::eval(&checkpoint, &data, split, out.as_deref())?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Baseline {
            measure,
            classifier,
            data,
            h,
            hidden,
            seed,
            out,
        } => {
            let args = BaselineArgs {
                thresholds: h,
                hidden,
                seed,
                out,
                ..BaselineArgs::new(measure, classifier, data)
            };
            let m = samcnet_cli::baseline(&args)?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Ablate { config } => {
            for row in samcnet_cli::ablate(&config, &mut log)? {
                println!("{}: accuracy {:.4} f1 {:.4}", row.name, row.metrics.accuracy, row.metrics.f1);
            }
        }
        Command::Interpret {
            checkpoint,
            data,
            out,
            split,
            graph,
            norm,
            seed,
            top,
        } => {
            let args = InterpretArgs {
                out,
                split,
                graph,
                norm,
                seed,
                top,
                ..InterpretArgs::new(checkpoint, data)
            };
            let o = samcnet_cli::interpret(&args)?;
            println!(
                "probe accuracy {:.4}; {} relationships ranked",
                o.ranking.probe_accuracy,
                o.ranking.entries.len()
            );
        }
        Command::Bench {
            checkpoint,
            data,
            num_points,
            limit,
            out,
        } => {
            let r = samcnet_cli::bench(&BenchArgs {
                checkpoint,
                data,
                num_points,
                limit,
                out,
            })?;
            println!(
                "{} samples at {} points: mean {:.6} s, median {:.6} s",
                r.samples, r.num_points, r.mean_seconds, r.median_seconds
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Clap spreads its diagnostic over a paragraph; keep it on one line.
            let text = e.render().to_string();
            let first: Vec<&str> = text.lines().map(str::trim).take_while(|l| !l.is_empty()).collect();
            eprintln!("{}", first.join(" "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
