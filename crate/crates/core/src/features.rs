//! Visual feature providers: per (player, frame) vectors `Φ ∈ R^{N×T×D}`
//! standing in for a video backbone.

use numkit::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::Clip;
use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Null,
    Synthetic,
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(ProviderKind::Null),
            "synthetic" => Ok(ProviderKind::Synthetic),
            _ => Err(Error::Config(format!("unknown provider kind `{s}`"))),
        }
    }
}

impl std::fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProviderKind::Null => "null",
            ProviderKind::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureProviderSpec {
    pub kind: ProviderKind,
    pub dim: usize,
    pub snr: f64,
    pub seed: u64,
}

impl Default for FeatureProviderSpec {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Synthetic,
            dim: DEFAULT_DIM,
            snr: 1.0,
            seed: 0,
        }
    }
}

impl FeatureProviderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("feature dimension must be ≥ 1".into()));
        }
        if !(self.snr >= 0.0) || !self.snr.is_finite() {
            return Err(Error::Config(format!("snr must be finite and ≥ 0, got {}", self.snr)));
        }
        Ok(())
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Unit-norm Gaussian prototype per class, drawn from `seed` alone.
pub fn prototypes(seed: u64, n_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x243f_6a88_85a3_08d3);
    (0..n_classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect()
}

/// `N × T × D` features for the clip's tracklets in ascending id order.
/// Frames where a tracklet is not observed get zero vectors.
///
/// Synthetic: `snr/(1+snr) · proto[label] + 1/(1+snr) · ε`, with
/// `ε ~ N(0, I)` seeded by the provider seed and the clip id.
pub fn provide(spec: &FeatureProviderSpec, clip: &Clip) -> Result<Tensor> {
    spec.validate()?;
    let tracklets = clip.tracklets();
    let (n, t, d) = (tracklets.len(), clip.num_frames(), spec.dim);
    let mut data = vec![0.0; n * t * d];
    if spec.kind == ProviderKind::Synthetic {
        let protos = prototypes(spec.seed, clip.num_classes(), d);
        let signal = spec.snr / (1.0 + spec.snr);
        let noise = 1.0 / (1.0 + spec.snr);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(&clip.clip_id));
        for (r, &tid) in tracklets.iter().enumerate() {
            for f in 0..t {
                let Some(p) = clip.player(f, tid) else { continue };
                let proto = protos.get(p.action_label).ok_or_else(|| {
                    Error::Schema(format!("label {} outside vocabulary", p.action_label))
                })?;
                let row = &mut data[(r * t + f) * d..(r * t + f + 1) * d];
                for (x, &c) in row.iter_mut().zip(proto) {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *x = signal * c + noise * e;
                }
            }
        }
    }
    Ok(Tensor::new(vec![n, t, d], data)?)
}
