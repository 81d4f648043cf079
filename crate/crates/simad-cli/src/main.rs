//! Command-line front end: train, score, eval, bench-metrics, gen-synth.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input-parse error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use simad::datagen::{demo_labels, sine_spike, DatagenError, SineSpikeConfig};
use simad::io::{
    load_checkpoint, parse_bias_spec, parse_threshold_spec, read_dataset, read_run_config,
    read_scores, save_checkpoint, write_dataset, write_report, write_scores, write_train_log,
    Dataset, IoError, RunConfig,
};
use simad::metrics::{evaluate, EvalOptions};
use simad::synthbench::{run_bench, BenchConfig, BenchTable, DemoSpec, SimulatedModel};
use simad::trainer::{train, TrainStop};

#[derive(Parser)]
#[command(name = "simad", version, about = "Patch-based time-series anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset CSV and write a checkpoint
    Train(TrainArgs),
    /// Score a dataset with a trained checkpoint
    Score(ScoreArgs),
    /// Evaluate a scores file against labeled data
    Eval(EvalArgs),
    /// Benchmark the metrics against simulated detectors of known quality
    BenchMetrics(BenchArgs),
    /// Generate synthetic datasets and label tracks
    GenSynth(GenArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Run configuration TOML; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training data CSV; a label column, if present, is ignored
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV output path
    #[arg(long)]
    log: Option<PathBuf>,
    /// Override the configured epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct ScoreArgs {
    /// Checkpoint to score with
    #[arg(long)]
    model: PathBuf,
    /// Data CSV to score
    #[arg(long)]
    data: PathBuf,
    /// Scores CSV output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Scores CSV (as written by `score`)
    #[arg(long)]
    scores: PathBuf,
    /// Dataset CSV with a label column
    #[arg(long)]
    labels: PathBuf,
    /// Report TOML output path
    #[arg(long)]
    out: PathBuf,
    /// Threshold mode: best-f1, quantile:Q, or value:V
    #[arg(long, default_value = "best-f1")]
    threshold: String,
    /// Affiliation baseline: empirical[:R], ideal, or constant:B
    #[arg(long, default_value = "empirical:20")]
    bias: String,
    /// Reference baseline of the normalized affiliation score
    #[arg(long, default_value_t = 0.5)]
    naff_beta: f64,
    /// Seed for the empirical-bias random scorer
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Which demo layout to report: 1, 2, 3, or all
    #[arg(long, default_value = "all")]
    demo: String,
    /// Repetitions per (demo, model) cell
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Benchmark table CSV output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct GenArgs {
    /// Dataset kind: sine-spike, or demo:N for a bare label track
    #[arg(long)]
    kind: String,
    /// Dataset CSV output path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Series length (sine-spike)
    #[arg(long, default_value_t = 3000)]
    len: usize,
    /// Channel count (sine-spike)
    #[arg(long, default_value_t = 2)]
    channels: usize,
    /// Anomalous fraction of timestamps (sine-spike)
    #[arg(long, default_value_t = 0.05)]
    ratio: f64,
}

/// A failure with its exit-code class: bad input or configuration (2) vs a
/// failure at runtime (1).
enum Failure {
    Usage(String),
    Runtime(String),
}

fn io_fail(e: IoError) -> Failure {
    match &e {
        IoError::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            Failure::Usage(e.to_string())
        }
        IoError::File { .. } => Failure::Runtime(e.to_string()),
        IoError::Parse { .. } | IoError::Format { .. } | IoError::Model(_) => {
            Failure::Usage(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args),
        Command::BenchMetrics(args) => cmd_bench(args),
        Command::GenSynth(args) => cmd_gen(args),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Failure> {
    let mut cfg = match &args.config {
        Some(path) => read_run_config(path).map_err(io_fail)?,
        None => RunConfig::default(),
    };
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate().map_err(Failure::Usage)?;

    let dataset = read_dataset(&args.data).map_err(io_fail)?;
    let series = dataset.series(&args.data).map_err(io_fail)?;
    let outcome = train(&series, cfg.model.clone(), &cfg.train)
        .map_err(|e| Failure::Usage(e.to_string()))?;

    save_checkpoint(&args.out, &outcome.model).map_err(io_fail)?;
    if let Some(log_path) = &args.log {
        write_train_log(log_path, &outcome.log).map_err(io_fail)?;
    }

    match outcome.stop {
        TrainStop::Completed => {
            println!(
                "trained {} iterations over {} epochs; wrote {}",
                outcome.log.len(),
                cfg.train.epochs,
                args.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        TrainStop::Diverged { component, value, iteration } => {
            eprintln!(
                "error: training diverged at iteration {iteration} ({component} reached {value}); \
                 kept the checkpoint from the last stable iteration"
            );
            Ok(ExitCode::FAILURE)
        }
    }
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode, Failure> {
    let model = load_checkpoint(&args.model).map_err(io_fail)?;
    let dataset = read_dataset(&args.data).map_err(io_fail)?;
    let series = dataset.series(&args.data).map_err(io_fail)?;

    let want = model.config().channels;
    let got = series.shape()[1];
    if got != want {
        return Err(Failure::Usage(format!(
            "checkpoint expects {want} channels, {} has {got}",
            args.data.display()
        )));
    }

    let scores = model.score_series(&series).map_err(|e| Failure::Usage(e.to_string()))?;
    write_scores(&args.out, &scores).map_err(io_fail)?;
    println!("scored {} timestamps into {}", scores.total.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, Failure> {
    let scores = read_scores(&args.scores).map_err(io_fail)?;
    let label_file = read_dataset(&args.labels).map_err(io_fail)?;
    let labels = label_file.labels.ok_or_else(|| {
        Failure::Usage(format!("{} has no label column", args.labels.display()))
    })?;

    let opts = EvalOptions {
        threshold: parse_threshold_spec(&args.threshold).map_err(Failure::Usage)?,
        bias: parse_bias_spec(&args.bias).map_err(Failure::Usage)?,
        naff_beta: args.naff_beta,
        seed: args.seed,
    };
    let report =
        evaluate(&scores.total, &labels, &opts).map_err(|e| Failure::Usage(e.to_string()))?;
    write_report(&args.out, &report).map_err(io_fail)?;

    println!("f1 {:.4}  f1_pa {:.4}", report.f1, report.f1_pa);
    match report.auc {
        Some(auc) => println!("auc {auc:.4}"),
        None => println!("auc n/a (single-class labels)"),
    }
    println!("aff_f1 {:.4}  uaff_f1 {:.4}  naff_f1 {:.4}", report.aff_f1, report.uaff_f1, report.naff_f1);
    println!(
        "threshold {} ({})  bias {} ({})",
        report.threshold, report.threshold_mode, report.bias, report.bias_mode
    );
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, Failure> {
    if args.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    let keep: Option<&str> = match args.demo.as_str() {
        "all" => None,
        "1" => Some("demo1"),
        "2" => Some("demo2"),
        "3" => Some("demo3"),
        other => {
            return Err(Failure::Usage(format!("unknown demo {other:?}; use 1, 2, 3, or all")))
        }
    };

    // always run the full grid so each demo's numbers are independent of the
    // filter, then report the requested slice
    let demos: Vec<DemoSpec> = (1..=3)
        .map(DemoSpec::demo)
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let cfg = BenchConfig { reps: args.reps, seed: args.seed, ..Default::default() };
    let table = run_bench(&demos, &SimulatedModel::lineup(), &cfg)
        .map_err(|e| Failure::Runtime(e.to_string()))?;

    let table = match keep {
        None => table,
        Some(name) => BenchTable {
            rows: table.rows.into_iter().filter(|r| r.demo == name).collect(),
        },
    };

    let file = std::fs::File::create(&args.out).map_err(|source| {
        io_fail(IoError::File { path: args.out.display().to_string(), source })
    })?;
    table
        .to_csv(file)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", args.out.display())))?;
    print!("{}", table.format_table());
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode, Failure> {
    let gen_fail = |e: DatagenError| Failure::Usage(e.to_string());
    match args.kind.as_str() {
        "sine-spike" => {
            let cfg = SineSpikeConfig {
                len: args.len,
                channels: args.channels,
                anomaly_ratio: args.ratio,
                seed: args.seed,
                ..Default::default()
            };
            let generated = sine_spike(&cfg).map_err(gen_fail)?;
            let dataset = Dataset::from_series(&generated.values, Some(&generated.labels));
            write_dataset(&args.out, &dataset).map_err(io_fail)?;
            let anomalies = generated.labels.iter().filter(|&&l| l).count();
            println!(
                "wrote {} ({} points, {} channels, {} anomalous)",
                args.out.display(),
                args.len,
                args.channels,
                anomalies
            );
        }
        demo if demo.starts_with("demo:") => {
            let index: usize = demo["demo:".len()..]
                .parse()
                .map_err(|_| Failure::Usage(format!("bad demo index in {demo:?}")))?;
            let labels = demo_labels(index, args.seed).map_err(gen_fail)?;
            let events = labels_to_event_count(&labels);
            let dataset =
                Dataset { channel_names: vec![], channels: vec![], labels: Some(labels) };
            write_dataset(&args.out, &dataset).map_err(io_fail)?;
            let plural = if events == 1 { "" } else { "s" };
            println!("wrote {} ({} event{})", args.out.display(), events, plural);
        }
        other => {
            return Err(Failure::Usage(format!(
                "unknown kind {other:?}; use sine-spike or demo:N"
            )))
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn labels_to_event_count(labels: &[bool]) -> usize {
    simad::metrics::events_from_labels(labels).len()
}
