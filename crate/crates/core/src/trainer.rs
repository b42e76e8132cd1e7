//! Mini-batch Adam training with early stopping, evaluation and the
//! train-label-mean baseline.

use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AdamConfig, AdamState, Graph};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::{Mode, Model, PreparedClip};
use crate::traits::{TraitVector, NUM_TRAITS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Random volume scaling of training audio.
    pub amplitude_jitter: bool,
    /// Optional cap on optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 100,
            early_stop_patience: 5,
            lr: AdamConfig::default().lr,
            seed: 0,
            shuffle: true,
            amplitude_jitter: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidParameter(
                "batch size, epoch budget and patience must be positive".into(),
            ));
        }
        if self.early_stop_patience > self.max_epochs {
            return Err(Error::InvalidParameter(format!(
                "patience {} exceeds the epoch budget {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {} must be positive", self.lr)));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    MaxSteps,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::MaxSteps => "max_steps",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's clips.
    pub train_mse: f64,
    pub val_mse: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_mse\tval_mse\tbest\n");
        for e in &self.epochs {
            writeln!(s, "{}\t{:.10}\t{:.10}\t{}", e.epoch, e.train_mse, e.val_mse, u8::from(e.best)).expect("string write");
        }
        writeln!(s, "# stop\t{}\tsteps\t{}", self.stop_reason, self.steps).expect("string write");
        s
    }
}

/// Loss of one clip on a fresh graph, with gradients when `mode.training`.
fn clip_step(model: &Model, clip: &PreparedClip, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(f64, Option<crate::autograd::Gradients>)> {
    let mut g = if mode.training {
        Graph::new(&model.store)
    } else {
        Graph::inference(&model.store)
    };
    let out = model.forward(&mut g, clip, mode, rng)?;
    let loss = g.mse_over_traits(out.traits, &clip.labels)?;
    let value = g.value(loss).item();
    if !mode.training || !value.is_finite() {
        return Ok((value, None));
    }
    Ok((value, Some(g.backward(loss)?)))
}

/// Evaluation-mode objective of one clip.
pub fn clip_loss(model: &Model, clip: &PreparedClip) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(clip_step(model, clip, Mode::EVAL, &mut rng)?.0)
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the lowest validation MSE.
pub fn train(model: &mut Model, train: &[PreparedClip], val: &[PreparedClip], config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset("validation set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adam_config = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_config, &model.store);
    model.store.zero_grad();
    let mode = Mode::train(config.amplitude_jitter);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Vec<crate::autograd::Tensor>)> = None;
    let mut since_best = 0;
    let mut steps = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        let mut seen = 0;
        let mut capped = false;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (loss, grads) = clip_step(model, &train[i], mode, &mut rng)?;
                if !loss.is_finite() {
                    model.store.zero_grad();
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        clip_ids: batch.iter().map(|&k| train[k].clip_id.clone()).collect(),
                    });
                }
                model.store.accumulate(&grads.expect("training step has gradients"), scale);
                total += loss;
                seen += 1;
            }
            adam.step(&mut model.store)?;
            steps += 1;
            if config.max_steps.is_some_and(|m| steps >= m) {
                capped = true;
                break;
            }
        }

        let val_mse = evaluate(model, val)?.mse;
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_mse < *b);
        if improved {
            best = Some((val_mse, epoch, model.store.snapshot()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            train_mse: total / seen as f64,
            val_mse,
            best: false,
        });
        log::info!(
            "{} epoch {epoch}: train {:.6} val {val_mse:.6}{}",
            model.name(),
            total / seen as f64,
            if improved { " *" } else { "" }
        );
        if capped {
            stop_reason = StopReason::MaxSteps;
            break;
        }
        if since_best >= config.early_stop_patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    let (_, best_epoch, snapshot) = best.expect("at least one epoch ran");
    model.store.load_values(&snapshot);
    epochs[best_epoch - 1].best = true;
    Ok(TrainHistory {
        epochs,
        best_epoch,
        steps,
        stop_reason,
    })
}

pub fn predict_all(model: &Model, clips: &[PreparedClip]) -> Result<Vec<TraitVector>> {
    clips.iter().map(|c| model.predict(c)).collect()
}

/// Evaluation-mode metrics; the model is not modified.
pub fn evaluate(model: &Model, clips: &[PreparedClip]) -> Result<Metrics> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset("no clips to evaluate".into()));
    }
    let preds = predict_all(model, clips)?;
    let labels: Vec<TraitVector> = clips.iter().map(|c| c.labels).collect();
    Metrics::from_predictions(&preds, &labels)
}

/// Per-trait mean of the training labels.
pub fn baseline_train_mean(train_labels: &[TraitVector]) -> Result<TraitVector> {
    if train_labels.is_empty() {
        return Err(Error::EmptyDataset("baseline needs training labels".into()));
    }
    let mut mean = [0.0; NUM_TRAITS];
    for y in train_labels {
        for i in 0..NUM_TRAITS {
            mean[i] += y[i];
        }
    }
    Ok(mean.map(|v| v / train_labels.len() as f64))
}

/// Metrics of the constant train-mean predictor on `test_labels`.
pub fn baseline_metrics(train_labels: &[TraitVector], test_labels: &[TraitVector]) -> Result<Metrics> {
    let mean = baseline_train_mean(train_labels)?;
    let preds = vec![mean; test_labels.len()];
    Metrics::from_predictions(&preds, test_labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::video::{FeatureSource, VideoChannelConfig};

    fn video_model() -> Model {
        let cfg = VideoChannelConfig {
            source: FeatureSource::Precomputed,
            feature_dim: 4,
            head_hidden_dim: 8,
            ..VideoChannelConfig::default()
        };
        Model::init(ModelConfig::Video(cfg), 5).unwrap()
    }

    fn clip(id: usize, f: [f64; 4], labels: TraitVector) -> PreparedClip {
        PreparedClip {
            clip_id: format!("c{id}"),
            labels,
            audio: None,
            sentences: None,
            frames: Some(vec![f.to_vec()]),
        }
    }

    fn toy_set() -> Vec<PreparedClip> {
        (0..6)
            .map(|i| {
                let x = i as f64 / 5.0;
                clip(i, [x, 1.0 - x, 0.5, x * x], [0.1 + 0.8 * x, 0.5, 0.9 - 0.8 * x, 0.3, 0.6])
            })
            .collect()
    }

    #[test]
    fn patience_one_stops_after_second_epoch() {
        let train_set = toy_set();
        // Validation targets mirror the training targets, so every epoch of
        // training moves further away from them.
        let val: Vec<PreparedClip> = train_set
            .iter()
            .map(|c| PreparedClip {
                labels: c.labels.map(|v| 1.0 - v),
                ..c.clone()
            })
            .collect();
        let cfg = TrainConfig {
            early_stop_patience: 1,
            max_epochs: 50,
            lr: 0.01,
            batch_size: 6,
            ..TrainConfig::default()
        };
        let mut m = video_model();
        let h = train(&mut m, &train_set, &val, &cfg).unwrap();
        assert!(h.epochs[1].val_mse > h.epochs[0].val_mse);
        assert_eq!(h.epochs.len(), 2);
        assert_eq!(h.best_epoch, 1);
        assert_eq!(h.stop_reason, StopReason::Patience);

        let mut one = video_model();
        train(&mut one, &train_set, &val, &TrainConfig { max_epochs: 1, ..cfg }).unwrap();
        assert_eq!(m.store.snapshot(), one.store.snapshot());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = toy_set();
        let cfg = TrainConfig {
            max_epochs: 40,
            early_stop_patience: 40,
            lr: 0.01,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut a = video_model();
        let mut b = video_model();
        let start = evaluate(&a, &data).unwrap().mse;
        let ha = train(&mut a, &data, &data, &cfg).unwrap();
        let hb = train(&mut b, &data, &data, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.store.snapshot(), b.store.snapshot());
        assert!(ha.best().val_mse < start);
        assert!(ha.to_tsv().starts_with("epoch\ttrain_mse\tval_mse\tbest\n1\t"));
    }

    #[test]
    fn evaluation_matches_objective_and_has_no_side_effects() {
        let m = video_model();
        let data = toy_set();
        let e1 = evaluate(&m, &data).unwrap();
        let e2 = evaluate(&m, &data).unwrap();
        assert_eq!(e1, e2);
        let mean_loss = data.iter().map(|c| clip_loss(&m, c).unwrap()).sum::<f64>() / data.len() as f64;
        assert!((mean_loss - e1.mse).abs() < 1e-12);
    }

    #[test]
    fn nan_input_aborts_with_clip_ids() {
        let mut m = video_model();
        let mut data = toy_set();
        data[3].frames = Some(vec![vec![f64::NAN; 4]]);
        let cfg = TrainConfig {
            batch_size: 6,
            shuffle: false,
            ..TrainConfig::default()
        };
        match train(&mut m, &data, &data, &cfg) {
            Err(Error::NonFiniteLoss { epoch, clip_ids }) => {
                assert_eq!(epoch, 1);
                assert!(clip_ids.contains(&"c3".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn baseline_rules() {
        assert_eq!(baseline_train_mean(&[[0.4; 5], [0.6; 5]]).unwrap(), [0.5; 5]);
        let m = baseline_metrics(&[[0.3; 5]; 3], &[[0.5; 5], [0.2; 5]]).unwrap();
        for v in m.mae {
            assert!((v - 0.15).abs() < 1e-15);
        }
        assert!(baseline_train_mean(&[]).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { early_stop_patience: 200, ..TrainConfig::default() },
            TrainConfig { lr: -1.0, ..TrainConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
