//! Hybrid visual + game-state detector.
//!
//! Node features are the normalised player state concatenated with a learned
//! projection of the visual features. K edge convolutions over the game
//! graph produce `h`, which is concatenated with the raw visual features and
//! passed through a temporal convolution stack and a per-frame MLP head.
//! With `use_gnn` off the graph branch (and the projection) disappears.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use numkit::{softmax, Linear, Mlp, NumError, ParamStore, Tape, TemporalConv, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{normalize_state, Clip, DenseLayout};
use crate::error::{Error, Result};
use crate::features::{provide, FeatureProviderSpec, ProviderKind};
use crate::graph::{build_graph, GameGraph};
use crate::io::{fmt_f64, read_text, write_atomic};

pub const STATE_DIM: usize = 5;
pub const CKPT_MAGIC: &str = "pitchgraph-ckpt/1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub proj_dim: usize,
    /// Number of stacked edge convolutions (K).
    pub gnn_layers: usize,
    /// Hidden widths inside every edge MLP.
    pub edge_hidden: Vec<usize>,
    pub gnn_out_dim: usize,
    /// Spatial neighbours per node.
    pub graph_k: usize,
    pub tcn_width: usize,
    pub tcn_channels: usize,
    pub tcn_layers: usize,
    /// Hidden widths of the per-frame head.
    pub head_hidden: Vec<usize>,
    pub num_classes: usize,
    pub use_gnn: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_dim: 192,
            proj_dim: 64,
            gnn_layers: 3,
            edge_hidden: vec![128],
            gnn_out_dim: 64,
            graph_k: 6,
            tcn_width: 9,
            tcn_channels: 256,
            tcn_layers: 2,
            head_hidden: vec![256],
            num_classes: 9,
            use_gnn: true,
        }
    }
}

impl ModelConfig {
    /// Narrow widths that train in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            proj_dim: 8,
            edge_hidden: vec![32],
            gnn_out_dim: 16,
            tcn_channels: 32,
            head_hidden: vec![32],
            ..Self::default()
        }
    }

    pub fn node_dim(&self) -> usize {
        STATE_DIM + self.proj_dim
    }

    pub fn tcn_in_dim(&self) -> usize {
        self.visual_dim + if self.use_gnn { self.gnn_out_dim } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.gnn_layers) {
            return Err(Error::Config(format!("K must lie in 1..=6, got {}", self.gnn_layers)));
        }
        let dims = [
            ("visual_dim", self.visual_dim),
            ("proj_dim", self.proj_dim),
            ("gnn_out_dim", self.gnn_out_dim),
            ("graph_k", self.graph_k),
            ("tcn_channels", self.tcn_channels),
            ("tcn_layers", self.tcn_layers),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        if self.edge_hidden.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be ≥ 1".into()));
        }
        if self.tcn_width % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal kernel width must be odd, got {}",
                self.tcn_width
            )));
        }
        Ok(())
    }
}

/// Edge list used by the convolutions: graph edges plus a self-message for
/// every node without in-edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    pub num_nodes: usize,
}

impl EdgeIndex {
    pub fn from_graph(g: &GameGraph) -> Self {
        Self::from_pairs(g.num_nodes(), g.edges.iter().map(|e| (e.src, e.dst)))
    }

    pub fn from_pairs(num_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (mut src, mut dst): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let mut has_in = vec![false; num_nodes];
        dst.iter().for_each(|&d| has_in[d] = true);
        for (u, _) in has_in.iter().enumerate().filter(|(_, h)| !**h) {
            src.push(u);
            dst.push(u);
        }
        Self {
            src: Arc::new(src),
            dst: Arc::new(dst),
            num_nodes,
        }
    }
}

fn chain_err(layer: usize, expected: usize, actual: usize) -> Error {
    Error::Num(NumError::LayerChain {
        layer,
        expected,
        actual,
    })
}

/// `φ = Φ · W + b` per (player, frame).
pub fn project_visual(tape: &mut Tape, store: &ParamStore, proj: &Linear, phi: Var) -> Result<Var> {
    Ok(proj.forward(tape, store, phi)?)
}

/// Normalised states in dense node order `n * T + t`, shape `[N·T, 5]`.
pub fn node_states(clip: &Clip) -> Result<(DenseLayout, Tensor)> {
    let layout = clip.dense_layout()?;
    let mut data = Vec::with_capacity(layout.len() * STATE_DIM);
    for node in 0..layout.len() {
        data.extend(normalize_state(layout.state(clip, node)));
    }
    let t = Tensor::new(vec![layout.len(), STATE_DIM], data)?;
    Ok((layout, t))
}

/// `X = [normalised state ∥ φ]`, shape `[N, T, 5 + D′]`.
pub fn assemble_node_features(clip: &Clip, phi: &Tensor) -> Result<Tensor> {
    let (layout, states) = node_states(clip)?;
    let (n, t) = (layout.tracklets.len(), layout.frames);
    let &[pn, pt, d] = phi.shape() else {
        return Err(Error::Alignment(format!("φ must be N×T×D′, got {:?}", phi.shape())));
    };
    if (pn, pt) != (n, t) {
        return Err(Error::Alignment(format!(
            "φ covers {pn} tracklets × {pt} frames, clip has {n} × {t}"
        )));
    }
    let mut out = Vec::with_capacity(n * t * (STATE_DIM + d));
    for node in 0..n * t {
        out.extend_from_slice(states.row(node));
        out.extend_from_slice(&phi.data()[node * d..(node + 1) * d]);
    }
    Ok(Tensor::new(vec![n, t, STATE_DIM + d], out)?)
}

/// One edge convolution: every node takes the channel-wise max over its
/// in-edges of `MLP(h_u ∥ h_v − h_u)`.
///
/// The first affine layer is split as `W = [W_top; W_bot]`, so that
/// `[h_u, h_v − h_u] · W = h_u · (W_top − W_bot) + h_v · W_bot` is computed
/// per node rather than per edge.
pub fn edge_conv(tape: &mut Tape, store: &ParamStore, h: Var, edges: &EdgeIndex, mlp: &Mlp) -> Result<Var> {
    let shape = tape.value(h).shape().to_vec();
    let d = *shape.last().unwrap_or(&0);
    if shape.len() != 2 || shape[0] != edges.num_nodes {
        return Err(Error::Contract(format!(
            "node features {shape:?} do not match a graph of {} nodes",
            edges.num_nodes
        )));
    }
    if mlp.d_in() != 2 * d {
        return Err(chain_err(0, mlp.d_in(), 2 * d));
    }
    let first = mlp.layers[0];
    let w = tape.param(store, first.weight);
    let b = tape.param(store, first.bias);
    let w_top = tape.slice_rows(w, 0, d)?;
    let w_bot = tape.slice_rows(w, d, 2 * d)?;
    let w_self = tape.sub(w_top, w_bot)?;
    let at_dst = tape.matmul(h, w_self)?;
    let at_src = tape.matmul(h, w_bot)?;
    let a = tape.gather_rows(at_dst, edges.dst.clone())?;
    let c = tape.gather_rows(at_src, edges.src.clone())?;
    let sum = tape.add(a, c)?;
    let mut z = tape.add_bias(sum, b)?;
    for layer in &mlp.layers[1..] {
        z = tape.relu(z);
        z = layer.forward(tape, store, z)?;
    }
    Ok(tape.segment_max(z, &edges.dst, edges.num_nodes)?)
}

/// K edge convolutions on the same graph; `x: [nodes, 5 + D′]`.
pub fn encode_game_state(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    edges: &EdgeIndex,
    layers: &[Mlp],
) -> Result<Var> {
    let mut h = x;
    for (i, mlp) in layers.iter().enumerate() {
        let d = tape.value(h).last_dim();
        if mlp.d_in() != 2 * d {
            return Err(chain_err(i, mlp.d_in(), 2 * d));
        }
        h = edge_conv(tape, store, h, edges, mlp)?;
    }
    Ok(h)
}

/// `[Φ ∥ h] → (temporal conv → relu)* → head`, giving `[N, T, C]` logits.
pub fn classify(
    tape: &mut Tape,
    store: &ParamStore,
    phi: Var,
    h: Option<Var>,
    tcn: &[TemporalConv],
    head: &Mlp,
) -> Result<Var> {
    let Some((first, rest)) = tcn.split_first() else {
        return Err(Error::Contract("temporal stack is empty".into()));
    };
    let d_phi = tape.value(phi).last_dim();
    let d_h = h.map_or(0, |h| tape.value(h).last_dim());
    if first.d_in != d_phi + d_h {
        return Err(chain_err(0, first.d_in, d_phi + d_h));
    }
    let y = match h {
        Some(h) => {
            let (ps, hs) = (tape.value(phi).shape(), tape.value(h).shape());
            if ps[..ps.len() - 1] != hs[..hs.len() - 1] {
                return Err(Error::Num(NumError::Shape {
                    op: "classify",
                    lhs: ps.to_vec(),
                    rhs: hs.to_vec(),
                }));
            }
            // conv over [Φ ∥ h] as two convs with the kernel split by input
            // channel, so no gradient is formed for the constant Φ
            let k = tape.param(store, first.kernel);
            let (w, d_out) = (first.width, first.d_out);
            let flat = tape.reshape(k, [w * (d_phi + d_h), d_out])?;
            let rows = |lo: usize, hi: usize| -> Arc<Vec<usize>> {
                Arc::new((0..w).flat_map(|j| (lo..hi).map(move |c| j * (d_phi + d_h) + c)).collect())
            };
            let k_phi = tape.gather_rows(flat, rows(0, d_phi))?;
            let k_phi = tape.reshape(k_phi, [w, d_phi, d_out])?;
            let k_h = tape.gather_rows(flat, rows(d_phi, d_phi + d_h))?;
            let k_h = tape.reshape(k_h, [w, d_h, d_out])?;
            let a = tape.temporal_conv(phi, k_phi)?;
            let c = tape.temporal_conv(h, k_h)?;
            let sum = tape.add(a, c)?;
            let b = tape.param(store, first.bias);
            tape.add_bias(sum, b)?
        }
        None => first.forward(tape, store, phi)?,
    };
    let mut z = tape.relu(y);
    for (i, conv) in rest.iter().enumerate() {
        let d = tape.value(z).last_dim();
        if conv.d_in != d {
            return Err(chain_err(i + 1, conv.d_in, d));
        }
        let y = conv.forward(tape, store, z)?;
        z = tape.relu(y);
    }
    Ok(head.forward(tape, store, z)?)
}

/// Everything the network consumes for one clip.
#[derive(Debug, Clone)]
pub struct ClipInput {
    pub clip_id: String,
    pub tracklets: Vec<u32>,
    pub frames: usize,
    /// `[N, T, D]`.
    pub phi: Tensor,
    /// `[N·T, 5]`; empty when the graph branch is off.
    pub states: Tensor,
    pub edges: Option<EdgeIndex>,
    /// Dense per-node labels.
    pub labels: Arc<Vec<usize>>,
}

impl ClipInput {
    pub fn num_nodes(&self) -> usize {
        self.tracklets.len() * self.frames
    }
}

pub fn prepare(clip: &Clip, provider: &FeatureProviderSpec, cfg: &ModelConfig) -> Result<ClipInput> {
    if provider.dim != cfg.visual_dim {
        return Err(Error::Config(format!(
            "provider dimension {} differs from model visual_dim {}",
            provider.dim, cfg.visual_dim
        )));
    }
    if clip.num_classes() != cfg.num_classes {
        return Err(Error::Schema(format!(
            "clip {} has {} classes, model expects {}",
            clip.clip_id,
            clip.num_classes(),
            cfg.num_classes
        )));
    }
    let (layout, states) = node_states(clip)?;
    let labels = Arc::new(clip.dense_labels(&layout));
    let edges = if cfg.use_gnn {
        let g = build_graph(clip, cfg.graph_k);
        debug_assert_eq!(g.num_nodes(), layout.len());
        Some(EdgeIndex::from_graph(&g))
    } else {
        None
    };
    Ok(ClipInput {
        clip_id: clip.clip_id.clone(),
        tracklets: layout.tracklets.clone(),
        frames: layout.frames,
        phi: provide(provider, clip)?,
        states,
        edges,
        labels,
    })
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub proj: Option<Linear>,
    pub edge: Vec<Mlp>,
    pub tcn: Vec<TemporalConv>,
    pub head: Mlp,
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (proj, edge) = if cfg.use_gnn {
            let proj = Linear::new(&mut store, "proj", cfg.visual_dim, cfg.proj_dim, &mut rng)?;
            let mut edge = Vec::with_capacity(cfg.gnn_layers);
            let mut d = cfg.node_dim();
            for k in 0..cfg.gnn_layers {
                let mut dims = vec![2 * d];
                dims.extend(&cfg.edge_hidden);
                dims.push(cfg.gnn_out_dim);
                edge.push(Mlp::new(&mut store, &format!("edge{k}"), &dims, &mut rng)?);
                d = cfg.gnn_out_dim;
            }
            (Some(proj), edge)
        } else {
            (None, Vec::new())
        };
        let mut tcn = Vec::with_capacity(cfg.tcn_layers);
        let mut d = cfg.tcn_in_dim();
        for k in 0..cfg.tcn_layers {
            tcn.push(TemporalConv::new(
                &mut store,
                &format!("tcn{k}"),
                cfg.tcn_width,
                d,
                cfg.tcn_channels,
                &mut rng,
            )?);
            d = cfg.tcn_channels;
        }
        let mut dims = vec![d];
        dims.extend(&cfg.head_hidden);
        dims.push(cfg.num_classes);
        let head = Mlp::new(&mut store, "head", &dims, &mut rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            proj,
            edge,
            tcn,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Records the forward pass; returns `[N, T, C]` logits.
    pub fn forward_with(&self, tape: &mut Tape, store: &ParamStore, input: &ClipInput) -> Result<Var> {
        let phi = tape.constant(input.phi.clone());
        let h = match (&self.proj, &input.edges) {
            (Some(proj), Some(edges)) => {
                let (n, t) = (input.tracklets.len(), input.frames);
                let projected = project_visual(tape, store, proj, phi)?;
                let flat = tape.reshape(projected, [n * t, self.cfg.proj_dim])?;
                let s = tape.constant(input.states.clone());
                let x = tape.concat(&[s, flat])?;
                let h = encode_game_state(tape, store, x, edges, &self.edge)?;
                Some(tape.reshape(h, [n, t, self.cfg.gnn_out_dim])?)
            }
            (Some(_), None) => {
                return Err(Error::Contract(format!(
                    "clip {} was prepared without a graph",
                    input.clip_id
                )))
            }
            _ => None,
        };
        classify(tape, store, phi, h, &self.tcn, &self.head)
    }

    pub fn forward(&self, tape: &mut Tape, input: &ClipInput) -> Result<Var> {
        self.forward_with(tape, &self.store, input)
    }

    /// Mean cross-entropy over every (player, frame) node.
    pub fn loss_with(&self, tape: &mut Tape, store: &ParamStore, input: &ClipInput) -> Result<Var> {
        let logits = self.forward_with(tape, store, input)?;
        let flat = tape.reshape(logits, [input.num_nodes(), self.cfg.num_classes])?;
        Ok(tape.softmax_cross_entropy(flat, input.labels.clone())?)
    }

    pub fn loss(&self, tape: &mut Tape, input: &ClipInput) -> Result<Var> {
        self.loss_with(tape, &self.store, input)
    }

    /// Class probabilities `[N, T, C]`.
    pub fn predict_input(&self, input: &ClipInput) -> Result<Tensor> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, input)?;
        Ok(softmax(tape.value(logits)))
    }
}

pub fn predict(model: &Model, clip: &Clip, provider: &FeatureProviderSpec) -> Result<Tensor> {
    model.predict_input(&prepare(clip, provider, &model.cfg)?)
}

fn join(v: &[usize]) -> String {
    if v.is_empty() {
        "-".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn split(s: &str) -> Result<Vec<usize>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse().map_err(|_| Error::Schema(format!("bad width list `{s}`"))))
        .collect()
}

pub fn checkpoint_to_string(model: &Model, provider: &FeatureProviderSpec) -> String {
    let c = &model.cfg;
    let mut s = String::new();
    writeln!(s, "{CKPT_MAGIC}").unwrap();
    let rows: [(&str, String); 12] = [
        ("visual_dim", c.visual_dim.to_string()),
        ("proj_dim", c.proj_dim.to_string()),
        ("gnn_layers", c.gnn_layers.to_string()),
        ("edge_hidden", join(&c.edge_hidden)),
        ("gnn_out_dim", c.gnn_out_dim.to_string()),
        ("graph_k", c.graph_k.to_string()),
        ("tcn_width", c.tcn_width.to_string()),
        ("tcn_channels", c.tcn_channels.to_string()),
        ("tcn_layers", c.tcn_layers.to_string()),
        ("head_hidden", join(&c.head_hidden)),
        ("num_classes", c.num_classes.to_string()),
        ("use_gnn", c.use_gnn.to_string()),
    ];
    for (k, v) in rows {
        writeln!(s, "config {k} {v}").unwrap();
    }
    writeln!(s, "provider kind {}", provider.kind).unwrap();
    writeln!(s, "provider dim {}", provider.dim).unwrap();
    writeln!(s, "provider snr {}", fmt_f64(provider.snr)).unwrap();
    writeln!(s, "provider seed {}", provider.seed).unwrap();
    for p in model.store.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        write!(s, "param {} {} {}", p.name, u8::from(p.decay), shape.join("x")).unwrap();
        for v in p.value.data() {
            write!(s, " {}", fmt_f64(*v)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn save_checkpoint(model: &Model, provider: &FeatureProviderSpec, path: &Path) -> Result<()> {
    write_atomic(path, checkpoint_to_string(model, provider).as_bytes())
}

pub fn parse_checkpoint(text: &str) -> Result<(Model, FeatureProviderSpec)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == CKPT_MAGIC => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected `{CKPT_MAGIC}` header"),
            })
        }
    }
    let mut cfg = ModelConfig::default();
    let mut provider = FeatureProviderSpec::default();
    let mut params: Vec<(usize, String, bool, Vec<usize>, Vec<f64>)> = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: String| Error::Parse { line: ln, message: m };
        let num = |s: &str| -> Result<usize> { s.parse().map_err(|_| bad(format!("invalid integer `{s}`"))) };
        match toks.as_slice() {
            [] => {}
            ["config", key, value] => match *key {
                "visual_dim" => cfg.visual_dim = num(value)?,
                "proj_dim" => cfg.proj_dim = num(value)?,
                "gnn_layers" => cfg.gnn_layers = num(value)?,
                "edge_hidden" => cfg.edge_hidden = split(value)?,
                "gnn_out_dim" => cfg.gnn_out_dim = num(value)?,
                "graph_k" => cfg.graph_k = num(value)?,
                "tcn_width" => cfg.tcn_width = num(value)?,
                "tcn_channels" => cfg.tcn_channels = num(value)?,
                "tcn_layers" => cfg.tcn_layers = num(value)?,
                "head_hidden" => cfg.head_hidden = split(value)?,
                "num_classes" => cfg.num_classes = num(value)?,
                "use_gnn" => {
                    cfg.use_gnn = value.parse().map_err(|_| bad(format!("invalid flag `{value}`")))?
                }
                other => return Err(Error::Schema(format!("line {ln}: unknown config key `{other}`"))),
            },
            ["provider", key, value] => match *key {
                "kind" => provider.kind = value.parse::<ProviderKind>()?,
                "dim" => provider.dim = num(value)?,
                "snr" => provider.snr = value.parse().map_err(|_| bad(format!("invalid snr `{value}`")))?,
                "seed" => provider.seed = value.parse().map_err(|_| bad(format!("invalid seed `{value}`")))?,
                other => return Err(Error::Schema(format!("line {ln}: unknown provider key `{other}`"))),
            },
            ["param", name, decay, shape, values @ ..] => {
                let shape: Vec<usize> = shape.split('x').map(num).collect::<Result<_>>()?;
                let values: Vec<f64> = values
                    .iter()
                    .map(|v| v.parse().map_err(|_| bad(format!("invalid value `{v}`"))))
                    .collect::<Result<_>>()?;
                params.push((ln, name.to_string(), *decay == "1", shape, values));
            }
            _ => return Err(bad(format!("unrecognised record `{}`", toks[0]))),
        }
    }
    let mut model = Model::new(&cfg, 0)?;
    if params.len() != model.store.len() {
        return Err(Error::Schema(format!(
            "checkpoint holds {} parameters, configuration needs {}",
            params.len(),
            model.store.len()
        )));
    }
    for (ln, name, decay, shape, values) in params {
        let id = model
            .store
            .id_of(&name)
            .ok_or_else(|| Error::Schema(format!("line {ln}: unexpected parameter `{name}`")))?;
        let p = model.store.get_mut(id);
        if p.value.shape() != shape.as_slice() || p.decay != decay {
            return Err(Error::Schema(format!(
                "line {ln}: parameter `{name}` has shape {shape:?}, expected {:?}",
                p.value.shape()
            )));
        }
        p.value = Tensor::new(shape, values).map_err(|e| Error::Schema(format!("line {ln}: {e}")))?;
    }
    Ok((model, provider))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, FeatureProviderSpec)> {
    parse_checkpoint(&read_text(path)?)
}
