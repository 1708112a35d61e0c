use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mmfuse::cflm::{msl_normalize, msl_score_raw};
use mmfuse::checkpoint::{self, CheckpointError};
use mmfuse::eval::{evaluate, load_test_manifest, EvalError};
use mmfuse::model::{ModelConfig, ModelError};
use mmfuse::store::{synth_dataset, Lexicon, Schema, StoreError, SynthConfig};
use mmfuse::train::{init_model, load_training_set, train, TrainConfig, TrainError};
use mmfuse::tta::{Aggregation, TtaConfig};

#[derive(Parser)]
#[command(name = "mmfuse", version, about = "Multimodal fusion classifier on precomputed features")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Samples per class (split 80:20 into train and test).
        #[arg(long)]
        n: usize,
        /// Distance between the class means; 0 makes the classes indistinguishable.
        #[arg(long, allow_negative_numbers = true)]
        sep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on `<data>/train.json` and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cosine threshold for similarity-graph edges.
        #[arg(long, default_value_t = 0.85, allow_negative_numbers = true)]
        thr: f64,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Loss log path (default: `<out>.loss.json`).
        #[arg(long)]
        loss_log: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.3)]
        dropout: f64,
        /// Lexicon file (default: `<data>/lexicon.txt`).
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on `<data>/test.json`.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Enable test-time augmentation.
        #[arg(long)]
        tta: bool,
        #[arg(long, value_enum, default_value_t = AggregationArg::MeanProb)]
        tta_aggregation: AggregationArg,
        /// Accepted cosine band as `lo:hi`.
        #[arg(long, default_value = "0.6:0.7", allow_hyphen_values = true)]
        tta_band: String,
        /// Augmented copies per sample.
        #[arg(long, default_value_t = 4)]
        tta_n: usize,
        /// Starting noise half-range (default: 0.1 × RMS of each tensor).
        #[arg(long)]
        tta_p0: Option<f64>,
        /// Seed for TTA draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Metrics JSON output path.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Lexicon scores of each line of a text file, as TSV.
    Msl {
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Normalization minimum (default: smallest count in the file).
        #[arg(long)]
        msl_min: Option<f64>,
        /// Normalization maximum (default: largest count in the file).
        #[arg(long)]
        msl_max: Option<f64>,
    },
    /// Similarity graph statistics of the training split.
    GraphStats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.85, allow_negative_numbers = true)]
        thr: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    MeanProb,
    Majority,
}

/// Exit status classes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Checkpoint(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Checkpoint(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Checkpoint(m) => m,
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Failure::Usage(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::Checkpoint(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Store(s) => s.into(),
            EvalError::Model(m @ (ModelError::Param(_) | ModelError::Length { .. })) => Failure::Checkpoint(m.to_string()),
            EvalError::Tta(t) => Failure::Usage(t.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn load_lexicon(path: &Path) -> Result<Lexicon, Failure> {
    Lexicon::load(path).map_err(|e| match e {
        StoreError::Io { .. } => Failure::Usage(e.to_string()),
        other => Failure::Data(other.to_string()),
    })
}

fn parse_band(s: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::Usage(format!("--tta-band `{s}`: expected lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn cmd_synth(out: &Path, n: usize, sep: f64, seed: u64) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    if !(sep >= 0.0 && sep.is_finite()) {
        return Err(Failure::Usage(format!("--sep {sep} must be finite and non-negative")));
    }
    let s = synth_dataset(out, &SynthConfig::new(n, sep, seed)).map_err(|e| match e {
        StoreError::Io { .. } => Failure::Usage(e.to_string()),
        other => Failure::Data(other.to_string()),
    })?;
    println!("train\t{}\t(class 0: {}, class 1: {})", s.train, s.train_per_class[0], s.train_per_class[1]);
    println!("test\t{}\t(class 0: {}, class 1: {})", s.test, s.test_per_class[0], s.test_per_class[1]);
    println!("msl range\t[{}, {}]", s.msl_min, s.msl_max);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(data: &Path, epochs: usize, seed: u64, thr: f64, out: &Path, loss_log: Option<PathBuf>, lr: f64, batch_size: usize, dropout: f64, lexicon: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = TrainConfig {
        batch_size,
        lr,
        epochs,
        dropout_p: dropout,
        seed,
        thr,
    };
    cfg.validate()?;
    let model_cfg = ModelConfig::default();
    let lexicon = load_lexicon(&lexicon.unwrap_or_else(|| data.join("lexicon.txt")))?;
    let set = load_training_set(data, &model_cfg.schema, thr, &lexicon)?;
    log::info!("loaded {} training samples", set.inputs.len());
    let (model, params, losses) = if epochs == 0 {
        let (m, p) = init_model::<f32>(model_cfg, seed)?;
        (m, p, Vec::new())
    } else {
        let o = train::<f32>(&set.inputs, model_cfg, &cfg)?;
        (o.model, o.params, o.loss_log)
    };
    checkpoint::save(out, &model, &params, &cfg)?;
    let log_path = loss_log.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".loss.json");
        PathBuf::from(p)
    });
    write_json(&log_path, &json!({ "config": cfg, "loss": losses }))?;
    for (i, l) in losses.iter().enumerate() {
        println!("epoch {}\t{:.6}", i + 1, l);
    }
    println!("checkpoint\t{}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(data: &Path, ckpt: &Path, tta: Option<TtaConfig>, seed: u64, lexicon: Option<PathBuf>, json_out: Option<PathBuf>, verbose: bool) -> Result<(), Failure> {
    if let Some(t) = &tta {
        t.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let ck = checkpoint::load(ckpt)?;
    let schema: Schema = ck.index.model.schema;
    let lexicon = load_lexicon(&lexicon.unwrap_or_else(|| data.join("lexicon.txt")))?;
    let set = load_training_set(data, &schema, ck.index.train.thr, &lexicon)?;
    let manifest = load_test_manifest(data)?;
    let report = evaluate(&ck.model, &ck.params, data, &manifest, &schema, &lexicon, &set.graphs, tta.as_ref(), seed)?;
    print!("{}", report.metrics.table());
    if tta.is_some() {
        println!("{:<10}{:>11}", "tta skips", report.tta_skipped);
    }
    if let Some(path) = json_out {
        let mut v = json!({
            "train": ck.index.train,
            "seed": seed,
            "tta": report.tta,
            "tta_skipped": report.tta_skipped,
            "metrics": report.metrics,
        });
        if verbose {
            v["predictions"] = serde_json::to_value(&report.predictions).expect("predictions serialize");
        }
        write_json(&path, &v)?;
    }
    Ok(())
}

fn cmd_msl(text: &Path, lexicon: &Path, min: Option<f64>, max: Option<f64>) -> Result<(), Failure> {
    let lexicon = load_lexicon(lexicon)?;
    let body = std::fs::read_to_string(text).map_err(|e| io_failure(text, e))?;
    let counts: Vec<usize> = body.lines().map(|l| msl_score_raw(l, &lexicon)).collect();
    let lo = min.unwrap_or_else(|| counts.iter().copied().min().unwrap_or(0) as f64);
    let hi = max.unwrap_or_else(|| counts.iter().copied().max().unwrap_or(0) as f64);
    for (i, c) in counts.iter().enumerate() {
        println!("{}\t{}\t{}", i + 1, c, msl_normalize(*c as f64, lo, hi));
    }
    Ok(())
}

fn cmd_graph_stats(data: &Path, thr: f64) -> Result<(), Failure> {
    if !(-1.0..=1.0).contains(&thr) {
        return Err(Failure::Usage(format!("--thr {thr} outside [-1, 1]")));
    }
    let set = load_training_set(data, &Schema::default(), thr, &Lexicon::default())?;
    println!("{:<8}{:>8}{:>8}{:>10}  degree histogram", "graph", "nodes", "edges", "isolated");
    for (name, g) in [("image", &set.graphs.image), ("text", &set.graphs.text)] {
        let s = g.stats();
        let hist: Vec<String> = s.degree_histogram.iter().map(|(d, n)| format!("{d}:{n}")).collect();
        println!("{:<8}{:>8}{:>8}{:>10}  {}", name, s.nodes, s.edges, s.isolated, hist.join(" "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { out, n, sep, seed } => cmd_synth(&out, n, sep, seed),
        Command::Train {
            data,
            epochs,
            seed,
            thr,
            out,
            loss_log,
            lr,
            batch_size,
            dropout,
            lexicon,
        } => cmd_train(&data, epochs, seed, thr, &out, loss_log, lr, batch_size, dropout, lexicon),
        Command::Eval {
            data,
            checkpoint,
            tta,
            tta_aggregation,
            tta_band,
            tta_n,
            tta_p0,
            seed,
            lexicon,
            json_out,
        } => {
            let cfg = if tta {
                let (band_lo, band_hi) = parse_band(&tta_band)?;
                Some(TtaConfig {
                    n_aug: tta_n,
                    band_lo,
                    band_hi,
                    p0: tta_p0,
                    aggregation: match tta_aggregation {
                        AggregationArg::MeanProb => Aggregation::MeanProb,
                        AggregationArg::Majority => Aggregation::Majority,
                    },
                    ..TtaConfig::default()
                })
            } else {
                None
            };
            cmd_eval(&data, &checkpoint, cfg, seed, lexicon, json_out, cli.verbose > 0)
        }
        Command::Msl { text, lexicon, msl_min, msl_max } => cmd_msl(&text, &lexicon, msl_min, msl_max),
        Command::GraphStats { data, thr } => cmd_graph_stats(&data, thr),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
