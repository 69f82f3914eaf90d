//! End-to-end optimisation of a [`Model`] on a clip corpus, plus the
//! predict → smooth → evaluate loop used for validation and detection.

use numkit::{retain_freed_memory, Adam, Gradients, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datamodel::{Clip, ClipEvents, EventSet};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::features::FeatureProviderSpec;
use crate::model::{prepare, ClipInput, Model};
use crate::tubes::{clip_events, oracle_probs, SmoothingConfig};

/// IoU thresholds reported after every epoch.
pub const VAL_IOUS: [f64; 2] = [0.2, 0.5];
pub const VAL_SCORE_THR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// First (0-based) epoch trained at the reduced rate.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    /// Decoupled decay on weights; biases are exempt.
    pub weight_decay: f64,
    /// Micro-batches per optimiser step.
    pub grad_accum: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 13,
            learning_rate: 5e-4,
            lr_drop_epoch: 10,
            lr_drop_factor: 10.0,
            weight_decay: 1e-5,
            grad_accum: 20,
            batch_size: 6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule with frequent steps for single-core runs.
    pub fn desk() -> Self {
        Self {
            epochs: 6,
            learning_rate: 3e-3,
            lr_drop_epoch: 5,
            grad_accum: 1,
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.grad_accum == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, grad_accum and batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_drop_factor > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate and drop factor must be positive".into()));
        }
        if self.lr_drop_epoch > self.epochs {
            return Err(Error::Config(format!(
                "lr_drop_epoch {} exceeds epochs {}",
                self.lr_drop_epoch, self.epochs
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_drop_epoch {
            self.learning_rate
        } else {
            self.learning_rate / self.lr_drop_factor
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean clip loss seen during the epoch.
    pub train_loss: f64,
    /// Validation mAP at each of [`VAL_IOUS`]; `None` without a validation set.
    pub val_map: Option<[f64; 2]>,
}

pub fn epoch_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_map_iou0.2,val_map_iou0.5\n");
    for e in log {
        let (a, b) = match e.val_map {
            Some([a, b]) => (a.to_string(), b.to_string()),
            None => (String::new(), String::new()),
        };
        s += &format!("{},{},{},{a},{b}\n", e.epoch, e.learning_rate, e.train_loss);
    }
    s
}

pub struct TrainData<'a> {
    pub train: &'a [Clip],
    pub val: &'a [Clip],
    pub provider: FeatureProviderSpec,
    pub smoothing: SmoothingConfig,
}

fn clip_gradient(model: &Model, input: &ClipInput) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, input)?;
    let value = tape.value(loss).data()[0];
    Ok((value, tape.backward(loss)?))
}

/// Mean per-clip loss of `model` on `clips`.
pub fn mean_loss(model: &Model, clips: &[Clip], provider: &FeatureProviderSpec) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::Config("no clips to score".into()));
    }
    let losses: Vec<f64> = clips
        .par_iter()
        .map(|c| {
            let input = prepare(c, provider, &model.cfg)?;
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &input)?;
            Ok(tape.value(loss).data()[0])
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn apply_step(model: &mut Model, opt: &mut Adam, clips: usize) -> Result<()> {
    model.store.scale_grads(1.0 / clips as f64);
    for p in model.store.iter_mut() {
        if p.grad.is_none() {
            p.grad = Some(Tensor::zeros(p.value.shape().to_vec()));
        }
    }
    opt.step(&mut model.store)?;
    model.store.zero_grad();
    Ok(())
}

/// Trains in place. `on_epoch` sees each log entry as soon as it exists.
///
/// Clips within a batch run concurrently, but their gradients are summed
/// in batch order so results do not depend on the worker count.
pub fn train(
    model: &mut Model,
    data: &TrainData<'_>,
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    tc.validate()?;
    retain_freed_memory();
    if data.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut opt = Adam::new(tc.learning_rate, tc.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(tc.epochs);
    model.store.zero_grad();
    for epoch in 0..tc.epochs {
        opt.set_learning_rate(tc.learning_rate_at(epoch));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut micro, mut pending) = (0.0, 0usize, 0usize);
        for batch in order.chunks(tc.batch_size) {
            let frozen: &Model = model;
            let grads: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| clip_gradient(frozen, &prepare(&data.train[i], &data.provider, &frozen.cfg)?))
                .collect::<Result<_>>()?;
            for (loss, g) in grads {
                g.accumulate_into(&mut model.store)?;
                loss_sum += loss;
            }
            pending += batch.len();
            micro += 1;
            if micro == tc.grad_accum {
                apply_step(model, &mut opt, pending)?;
                (micro, pending) = (0, 0);
            }
        }
        if pending > 0 {
            apply_step(model, &mut opt, pending)?;
        }
        let val_map = if data.val.is_empty() {
            None
        } else {
            let preds = detect(model, data.val, &data.provider, &data.smoothing)?;
            let gts = EventSet::ground_truth(data.val)?;
            let mut m = [0.0; 2];
            for (slot, &iou) in m.iter_mut().zip(&VAL_IOUS) {
                *slot = evaluate(&preds, &gts, iou, VAL_SCORE_THR)?.map_value;
            }
            Some(m)
        };
        let entry = EpochLog {
            epoch,
            learning_rate: opt.learning_rate,
            train_loss: loss_sum / data.train.len() as f64,
            val_map,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Smoothed event tubes for every clip, in clip order.
pub fn detect(
    model: &Model,
    clips: &[Clip],
    provider: &FeatureProviderSpec,
    smoothing: &SmoothingConfig,
) -> Result<EventSet> {
    smoothing.validate()?;
    retain_freed_memory();
    let names = clips.first().map(|c| c.class_names.clone()).unwrap_or_else(crate::datamodel::default_class_names);
    let per_clip: Vec<ClipEvents> = clips
        .par_iter()
        .map(|c| {
            let input = prepare(c, provider, &model.cfg)?;
            let probs = model.predict_input(&input)?;
            Ok(ClipEvents {
                clip_id: c.clip_id.clone(),
                events: clip_events(&probs, &input.tracklets, smoothing)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EventSet {
        class_names: names,
        clips: per_clip,
    })
}

/// Events recovered from ground-truth one-hot probabilities: the best any
/// model could hand to the smoother.
pub fn detect_oracle(clips: &[Clip], smoothing: &SmoothingConfig) -> Result<EventSet> {
    smoothing.validate()?;
    let names = clips.first().map(|c| c.class_names.clone()).unwrap_or_else(crate::datamodel::default_class_names);
    let per_clip = clips
        .iter()
        .map(|c| {
            Ok(ClipEvents {
                clip_id: c.clip_id.clone(),
                events: clip_events(&oracle_probs(c), &c.tracklets(), smoothing)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EventSet {
        class_names: names,
        clips: per_clip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_at_the_configured_epoch() {
        let tc = TrainConfig::default();
        for e in 0..10 {
            assert_eq!(tc.learning_rate_at(e), 0.0005);
        }
        for e in 10..13 {
            assert!((tc.learning_rate_at(e) - 0.00005).abs() < 1e-18);
        }
    }

    #[test]
    fn invalid_configs() {
        let late = TrainConfig { lr_drop_epoch: 14, ..Default::default() };
        assert!(late.validate().is_err());
        let zero = TrainConfig { grad_accum: 0, ..Default::default() };
        assert!(zero.validate().is_err());
        assert!(TrainConfig::desk().validate().is_ok());
    }

    #[test]
    fn csv_has_one_row_per_epoch() {
        let log = vec![
            EpochLog { epoch: 0, learning_rate: 1e-3, train_loss: 2.0, val_map: Some([0.5, 0.25]) },
            EpochLog { epoch: 1, learning_rate: 1e-4, train_loss: 1.0, val_map: None },
        ];
        let csv = epoch_csv(&log);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().ends_with(",0.5,0.25"));
    }
}
