use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pitchgraph::datamodel::{Clip, CLASS_NAMES};
use pitchgraph::eval::{ap_csv, confusion_csv, evaluate, pr_csv, summary_text};
use pitchgraph::io::{load_clips, load_event_source, save_clips, save_events, write_atomic};
use pitchgraph::model::{load_checkpoint, save_checkpoint, Model};
use pitchgraph::simulator::generate_dataset;
use pitchgraph::train::{detect, detect_oracle, epoch_csv, train, TrainData};

mod config;

use config::{check_unit_interval, parse_thresholds, FileConfig, RunConfig};

const THREADS_ENV: &str = "PITCHGRAPH_THREADS";

#[derive(Parser)]
#[command(name = "pitchgraph", version, about = "Game-state graph action detection on synthetic soccer clips")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic component; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clip corpus split into train.clips and val.clips.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Turn clips into scored events with a trained model.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_clips: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.clips and val.clips.
    #[arg(long, required_unless_present = "train")]
    data: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    train: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    val: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV; defaults to the checkpoint path plus `.metrics.csv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Train the visual-only baseline.
    #[arg(long)]
    no_gnn: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    clips: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use one-hot ground-truth probabilities instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    oracle: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Clip file or detections file holding the reference events.
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated IoU thresholds.
    #[arg(long)]
    iou: Option<String>,
    #[arg(long)]
    score_thr: Option<f64>,
    /// Directory for ap/pr/confusion CSVs, one set per IoU threshold.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let rc = file.resolve(cli.seed)?;
    match cli.command {
        Command::Simulate(a) => simulate(&rc, &a),
        Command::Train(a) => train_cmd(&rc, &a),
        Command::Detect(a) => detect_cmd(&rc, &a),
        Command::Eval(a) => eval_cmd(&rc, &a),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn simulate(rc: &RunConfig, a: &SimulateArgs) -> Result<()> {
    let n = a.n_clips.unwrap_or(rc.n_clips);
    let d = generate_dataset(&rc.sim, n, rc.seed)?;
    save_clips(&d.train, &a.out.join("train.clips"))?;
    save_clips(&d.val, &a.out.join("val.clips"))?;
    let mut frames = vec![0usize; CLASS_NAMES.len()];
    for c in d.train.iter().chain(&d.val) {
        for p in c.frames.iter().flat_map(|f| &f.players) {
            frames[p.action_label] += 1;
        }
    }
    let mut out = format!("{} train / {} val clips\n{:<12} {:>8} {:>10}\n", d.train.len(), d.val.len(), "class", "events", "frames");
    for (k, name) in CLASS_NAMES.iter().enumerate() {
        writeln!(out, "{name:<12} {:>8} {:>10}", d.class_counts[k], frames[k]).unwrap();
    }
    print!("{out}");
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn train_cmd(rc: &RunConfig, a: &TrainArgs) -> Result<()> {
    let (train_path, val_path) = match (&a.data, &a.train) {
        (Some(d), _) => (d.join("train.clips"), Some(d.join("val.clips"))),
        (None, Some(t)) => (t.clone(), a.val.clone()),
        (None, None) => bail!("give --data or --train"),
    };
    let train_clips = load_clips(&train_path)?;
    let val_clips = match &val_path {
        Some(p) => load_clips(p)?,
        None => Vec::new(),
    };
    let mut model_cfg = rc.model.clone();
    if a.no_gnn {
        model_cfg.use_gnn = false;
    }
    let mut tc = rc.train.clone();
    if let Some(e) = a.epochs {
        tc.epochs = e;
        tc.lr_drop_epoch = tc.lr_drop_epoch.min(e);
    }
    let mut model = Model::new(&model_cfg, rc.seed)?;
    let data = TrainData {
        train: &train_clips,
        val: &val_clips,
        provider: rc.provider,
        smoothing: rc.smoothing,
    };
    eprintln!(
        "training {} on {} clips ({} parameters)",
        if model_cfg.use_gnn { "game-state model" } else { "visual-only baseline" },
        train_clips.len(),
        model.param_count()
    );
    let log = train(&mut model, &data, &tc, &mut |e| match e.val_map {
        Some([a, b]) => eprintln!("epoch {} lr {} loss {:.6} val mAP@0.2 {a:.4} mAP@0.5 {b:.4}", e.epoch, e.learning_rate, e.train_loss),
        None => eprintln!("epoch {} lr {} loss {:.6}", e.epoch, e.learning_rate, e.train_loss),
    })?;
    save_checkpoint(&model, &rc.provider, &a.out)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| with_suffix(&a.out, ".metrics.csv"));
    write_atomic(&metrics, epoch_csv(&log).as_bytes())?;
    println!("checkpoint {}\nmetrics {}", a.out.display(), metrics.display());
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn detect_cmd(rc: &RunConfig, a: &DetectArgs) -> Result<()> {
    let clips: Vec<Clip> = load_clips(&a.clips)?;
    let events = match &a.checkpoint {
        Some(ckpt) if !a.oracle => {
            let (model, provider) = load_checkpoint(ckpt)?;
            detect(&model, &clips, &provider, &rc.smoothing)?
        }
        _ => detect_oracle(&clips, &rc.smoothing)?,
    };
    save_events(&events, &a.out)?;
    println!("{} events in {} clips → {}", events.len(), clips.len(), a.out.display());
    Ok(())
}

fn eval_cmd(rc: &RunConfig, a: &EvalArgs) -> Result<()> {
    let ious = match &a.iou {
        Some(s) => parse_thresholds(s)?,
        None => rc.iou.clone(),
    };
    check_unit_interval(&ious)?;
    let score_thr = a.score_thr.unwrap_or(rc.score_thr);
    check_unit_interval(&[score_thr]).context("--score-thr")?;
    let preds = load_event_source(&a.detections)?;
    let gts = load_event_source(&a.gt)?;
    for &iou in &ious {
        let r = evaluate(&preds, &gts, iou, score_thr)?;
        print!("{}", summary_text(&r));
        if let Some(dir) = &a.out_dir {
            write_atomic(&dir.join(format!("ap_iou{iou}.csv")), ap_csv(&r).as_bytes())?;
            write_atomic(&dir.join(format!("pr_iou{iou}.csv")), pr_csv(&r).as_bytes())?;
            write_atomic(&dir.join(format!("confusion_iou{iou}.csv")), confusion_csv(&r).as_bytes())?;
        }
    }
    Ok(())
}
