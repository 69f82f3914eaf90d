//! Dense probabilities to action tubes: exact label smoothing with a
//! constant switching penalty, then run extraction.

use numkit::Tensor;

use crate::datamodel::{Clip, Event, BACKGROUND};
use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-6;
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    /// Cost of each label switch.
    pub lambda: f64,
    pub min_event_len: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            min_event_len: 2,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if self.min_event_len == 0 {
            return Err(Error::Config("min_event_len must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn check_rows(probs: &Tensor) -> Result<(usize, usize)> {
    let &[t, c] = probs.shape() else {
        return Err(Error::Contract(format!(
            "probabilities must be T×C, got {:?}",
            probs.shape()
        )));
    };
    for r in 0..t {
        let row = probs.row(r);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Contract(format!(
                "row {r} is not a probability distribution (sum {sum})"
            )));
        }
    }
    Ok((t, c))
}

fn unary(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Energy `Σ −ln p[t, l_t] + λ · #switches` of a label sequence.
pub fn energy(probs: &Tensor, labels: &[usize], lambda: f64) -> f64 {
    let c = probs.last_dim();
    let data = probs.data();
    let mut e = 0.0;
    for (t, &l) in labels.iter().enumerate() {
        e += unary(data[t * c + l]);
        if t > 0 && labels[t - 1] != l {
            e += lambda;
        }
    }
    e
}

/// Minimum-energy label sequence; among optima the lexicographically
/// smallest.
pub fn smooth_labels(probs: &Tensor, cfg: &SmoothingConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let (t_len, c) = check_rows(probs)?;
    if t_len == 0 {
        return Ok(Vec::new());
    }
    let data = probs.data();
    // go[t*c + k]: least energy of frames t.. given l_t = k
    let mut go = vec![0.0; t_len * c];
    for k in 0..c {
        go[(t_len - 1) * c + k] = unary(data[(t_len - 1) * c + k]);
    }
    for t in (0..t_len - 1).rev() {
        let next = &go[(t + 1) * c..(t + 2) * c];
        let best_next = next.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut row = vec![0.0; c];
        for (k, r) in row.iter_mut().enumerate() {
            *r = unary(data[t * c + k]) + next[k].min(best_next + cfg.lambda);
        }
        go[t * c..(t + 1) * c].copy_from_slice(&row);
    }

    let mut labels = Vec::with_capacity(t_len);
    let first = argmin_first((0..c).map(|k| go[k]));
    labels.push(first);
    for t in 1..t_len {
        let prev = labels[t - 1];
        let step = |k: usize| go[t * c + k] + if k == prev { 0.0 } else { cfg.lambda };
        labels.push(argmin_first((0..c).map(step)));
    }
    Ok(labels)
}

fn argmin_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Maximal non-background runs of at least `min_event_len` frames, scored
/// by the mean in-class probability.
pub fn extract_events(
    labels: &[usize],
    probs: &Tensor,
    tracklet_id: u32,
    cfg: &SmoothingConfig,
) -> Vec<Event> {
    let c = probs.last_dim();
    let data = probs.data();
    let mut out = Vec::new();
    let mut start = 0;
    while start < labels.len() {
        let class = labels[start];
        let mut end = start;
        while end + 1 < labels.len() && labels[end + 1] == class {
            end += 1;
        }
        let len = end + 1 - start;
        if class != BACKGROUND && len >= cfg.min_event_len {
            let score = (start..=end).map(|t| data[t * c + class]).sum::<f64>() / len as f64;
            out.push(Event {
                tracklet_id,
                start_frame: start,
                end_frame: end,
                class,
                score,
            });
        }
        start = end + 1;
    }
    out
}

/// Smooths and extracts every player of an `N × T × C` probability tensor;
/// row `n` belongs to `tracklets[n]`.
pub fn clip_events(probs: &Tensor, tracklets: &[u32], cfg: &SmoothingConfig) -> Result<Vec<Event>> {
    let &[n, t, c] = probs.shape() else {
        return Err(Error::Contract(format!(
            "probabilities must be N×T×C, got {:?}",
            probs.shape()
        )));
    };
    if n != tracklets.len() {
        return Err(Error::Alignment(format!(
            "{n} probability rows for {} tracklets",
            tracklets.len()
        )));
    }
    let mut out = Vec::new();
    for (i, &tid) in tracklets.iter().enumerate() {
        let rows = Tensor::new(vec![t, c], probs.data()[i * t * c..(i + 1) * t * c].to_vec())?;
        let labels = smooth_labels(&rows, cfg)?;
        out.extend(extract_events(&labels, &rows, tid, cfg));
    }
    Ok(out)
}

/// One-hot `N × T × C` probabilities of the clip's own frame labels, rows in
/// ascending tracklet order. Unobserved frames count as background.
pub fn oracle_probs(clip: &Clip) -> Tensor {
    let ids = clip.tracklets();
    let (t, c) = (clip.num_frames(), clip.num_classes());
    let mut data = vec![0.0; ids.len() * t * c];
    for (r, &id) in ids.iter().enumerate() {
        for f in 0..t {
            let label = clip.player(f, id).map_or(BACKGROUND, |p| p.action_label);
            data[(r * t + f) * c + label] = 1.0;
        }
    }
    Tensor::new(vec![ids.len(), t, c], data).expect("shape matches data")
}
