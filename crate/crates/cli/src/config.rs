//! Run configuration: built-in defaults, overridden by an optional TOML
//! file, overridden in turn by command-line flags.
//!
//! ```toml
//! seed = 3
//!
//! [sim]
//! n_clips = 1000
//! frames = 50
//!
//! [provider]
//! kind = "synthetic"   # or "null"
//! dim = 32
//! snr = 1.0
//!
//! [model]
//! preset = "desk"      # "full" (default) or "desk"
//! use_gnn = true
//!
//! [train]
//! preset = "desk"
//! epochs = 16
//!
//! [smoothing]
//! lambda = 2.0
//! min_event_len = 2
//!
//! [eval]
//! iou = [0.2, 0.5]
//! score_thr = 0.5
//! ```
//!
//! Every key is optional. The provider seed defaults to the global seed,
//! as do the simulator, initialisation and shuffling seeds.

use std::path::Path;

use anyhow::{bail, Context, Result};
use pitchgraph::features::{FeatureProviderSpec, ProviderKind};
use pitchgraph::model::ModelConfig;
use pitchgraph::simulator::SimConfig;
use pitchgraph::train::TrainConfig;
use pitchgraph::tubes::SmoothingConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub provider: ProviderSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub smoothing: SmoothingSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_clips: Option<usize>,
    pub n_players_per_team: Option<usize>,
    pub frames: Option<usize>,
    pub frame_rate: Option<f64>,
    pub event_rate: Option<f64>,
    pub position_noise: Option<f64>,
    pub velocity_noise: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: Option<String>,
    pub dim: Option<usize>,
    pub snr: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub proj_dim: Option<usize>,
    pub gnn_layers: Option<usize>,
    pub edge_hidden: Option<Vec<usize>>,
    pub gnn_out_dim: Option<usize>,
    pub graph_k: Option<usize>,
    pub tcn_width: Option<usize>,
    pub tcn_channels: Option<usize>,
    pub tcn_layers: Option<usize>,
    pub head_hidden: Option<Vec<usize>>,
    pub use_gnn: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub preset: Option<String>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: Option<f64>,
    pub weight_decay: Option<f64>,
    pub grad_accum: Option<usize>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSection {
    pub lambda: Option<f64>,
    pub min_event_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub iou: Option<Vec<f64>>,
    pub score_thr: Option<f64>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub n_clips: usize,
    pub sim: SimConfig,
    pub provider: FeatureProviderSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub smoothing: SmoothingConfig,
    pub iou: Vec<f64>,
    pub score_thr: f64,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        Self::parse(&text).with_context(|| format!("{}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Applies the file on top of the defaults. `seed` overrides the file's
    /// seed when given.
    pub fn resolve(&self, seed: Option<u64>) -> Result<RunConfig> {
        let seed = seed.or(self.seed).unwrap_or(0);

        let s = &self.sim;
        let mut sim = SimConfig::default();
        set!(sim.n_players_per_team, s.n_players_per_team);
        set!(sim.frames, s.frames);
        set!(sim.frame_rate, s.frame_rate);
        set!(sim.event_rate, s.event_rate);
        set!(sim.position_noise, s.position_noise);
        set!(sim.velocity_noise, s.velocity_noise);

        let p = &self.provider;
        let mut provider = FeatureProviderSpec { seed, ..Default::default() };
        if let Some(k) = &p.kind {
            provider.kind = k.parse::<ProviderKind>()?;
        }
        set!(provider.dim, p.dim);
        set!(provider.snr, p.snr);
        set!(provider.seed, p.seed);
        provider.validate()?;

        let m = &self.model;
        let mut model = match m.preset.as_deref() {
            None | Some("full") => ModelConfig::default(),
            Some("desk") => ModelConfig::desk(),
            Some(other) => bail!("unknown model preset `{other}` (expected full or desk)"),
        };
        model.visual_dim = provider.dim;
        set!(model.proj_dim, m.proj_dim);
        set!(model.gnn_layers, m.gnn_layers);
        set!(model.edge_hidden, m.edge_hidden);
        set!(model.gnn_out_dim, m.gnn_out_dim);
        set!(model.graph_k, m.graph_k);
        set!(model.tcn_width, m.tcn_width);
        set!(model.tcn_channels, m.tcn_channels);
        set!(model.tcn_layers, m.tcn_layers);
        set!(model.head_hidden, m.head_hidden);
        set!(model.use_gnn, m.use_gnn);

        let t = &self.train;
        let mut train = match t.preset.as_deref() {
            None | Some("full") => TrainConfig::default(),
            Some("desk") => TrainConfig::desk(),
            Some(other) => bail!("unknown train preset `{other}` (expected full or desk)"),
        };
        train.seed = seed;
        set!(train.epochs, t.epochs);
        set!(train.learning_rate, t.learning_rate);
        set!(train.lr_drop_epoch, t.lr_drop_epoch);
        set!(train.lr_drop_factor, t.lr_drop_factor);
        set!(train.weight_decay, t.weight_decay);
        set!(train.grad_accum, t.grad_accum);
        set!(train.batch_size, t.batch_size);

        let mut smoothing = SmoothingConfig::default();
        set!(smoothing.lambda, self.smoothing.lambda);
        set!(smoothing.min_event_len, self.smoothing.min_event_len);
        smoothing.validate()?;

        let iou = self.eval.iou.clone().unwrap_or_else(|| vec![0.2, 0.5]);
        let score_thr = self.eval.score_thr.unwrap_or(0.5);

        Ok(RunConfig {
            seed,
            n_clips: s.n_clips.unwrap_or(1000),
            sim,
            provider,
            model,
            train,
            smoothing,
            iou,
            score_thr,
        })
    }
}

/// Parses `0.2,0.5` style threshold lists.
pub fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad threshold `{t}`")))
        .collect::<Result<_>>()?;
    check_unit_interval(&out)?;
    Ok(out)
}

pub fn check_unit_interval(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        bail!("at least one threshold is required");
    }
    if let Some(x) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        bail!("threshold {x} outside [0, 1]");
    }
    Ok(())
}
