use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::AutoencoderModel;
use crate::error::{Error, Result};
use crate::neuralcore::{AdamConfig, AdamState, Rng, Tensor};
use crate::trajdata::{ResampledDataset, FEATURES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub val_fraction: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 200,
            lr: 1e-4,
            val_fraction: 0.1,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

/// Mean per-sequence squared reconstruction error after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss (training
    /// loss when there is no validation split).
    pub model: AutoencoderModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn seq_loss(pred: &Tensor, target: &Tensor) -> f64 {
    pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum()
}

fn eval_loss(model: &AutoencoderModel, ds: &ResampledDataset, rows: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in rows {
        let x = ds.sequence(i);
        let (out, _) = model.forward_seq(&x, Some(ds.lengths[i]), None)?;
        total += seq_loss(&out, &x);
    }
    Ok(total / rows.len().max(1) as f64)
}

/// Mini-batch Adam on the L2 reconstruction loss with early stopping.
///
/// The loss covers every position, padded frames included, so that the
/// decoder also learns the stationary tail that generated sequences carry.
pub fn train(model: AutoencoderModel, ds: &ResampledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config.features != FEATURES || ds.max_len() != model.config.max_len {
        return Err(Error::shape(format!(
            "model expects {}×{} sequences, dataset holds {}×{}",
            model.config.features,
            model.config.max_len,
            FEATURES,
            ds.max_len()
        )));
    }
    if ds.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if ds.len() >= 2 {
        ((ds.len() as f64 * cfg.val_fraction).round() as usize).min(ds.len() - 1)
    } else {
        0
    };
    let val_rows = order[..n_val].to_vec();
    let mut train_rows = order[n_val..].to_vec();

    let mut model = model;
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    adam.init(&model.params_mut());
    let use_dropout = model.config.dropout > 0.0;

    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        train_rows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in train_rows.chunks(cfg.batch_size).enumerate() {
            model.zero_grad();
            let scale = 2.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = ds.sequence(i);
                let r = if use_dropout { Some(&mut rng) } else { None };
                let (out, cache) = model.forward_seq(&x, Some(ds.lengths[i]), r)?;
                let l = seq_loss(&out, &x);
                if !l.is_finite() {
                    return Err(Error::numerical(format!(
                        "non-finite reconstruction loss at epoch {epoch}, batch {}",
                        bi + 1
                    )));
                }
                batch_loss += l;
                let mut g = out;
                for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
                    *gv = scale * (*gv - xv);
                }
                model.backward_seq(&cache, &g);
            }
            epoch_loss += batch_loss;
            adam.step(&mut model.params_mut())?;
        }
        let train_loss = epoch_loss / train_rows.len() as f64;
        let val_loss = if val_rows.is_empty() {
            None
        } else {
            Some(eval_loss(&model, ds, &val_rows)?)
        };
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(Error::numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if score < best_loss {
            best_loss = score;
            best_epoch = epoch;
            best = model.clone();
        } else if epoch - best_epoch >= cfg.patience.max(1) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        stopped_early,
    })
}

/// Root-mean-square reconstruction error over valid frames, in normalised units.
pub fn reconstruction_rmse(model: &AutoencoderModel, ds: &ResampledDataset) -> Result<f64> {
    let steps = ds.max_len();
    let rec = model.reconstruct(&ds.data, Some(&ds.lengths))?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &len) in ds.lengths.iter().enumerate() {
        let base = i * FEATURES * steps;
        for f in 0..FEATURES {
            for j in 0..len {
                let k = base + f * steps + j;
                sum += (rec.data()[k] - ds.data.data()[k]).powi(2);
                count += 1;
            }
        }
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::ModelConfig;
    use crate::trajdata::NormStats;

    fn dataset(n: usize, s: usize) -> ResampledDataset {
        let mut data = Vec::new();
        let mut lengths = Vec::new();
        for i in 0..n {
            let len = s - i % 3;
            let phase = i as f64 * 0.4;
            for f in 0..FEATURES {
                for j in 0..s {
                    let jj = j.min(len - 1) as f64;
                    data.push(0.5 + 0.3 * ((jj * 0.5 + phase) + f as f64).sin());
                }
            }
            lengths.push(len);
        }
        ResampledDataset::new(
            Tensor::from_vec(&[n, FEATURES, s], data).unwrap(),
            lengths,
            NormStats::min_max([0.0; 3], [1.0; 3]).unwrap(),
            6.0,
        )
        .unwrap()
    }

    fn small(dropout: f64) -> ModelConfig {
        ModelConfig {
            layers: 1,
            hidden: 16,
            heads: 2,
            ff: 32,
            dropout,
            features: 3,
            max_len: 8,
        }
    }

    #[test]
    fn loss_decreases_on_tiny_dataset() {
        let ds = dataset(12, 8);
        let model = AutoencoderModel::new(small(0.0), ds.norm.clone(), 3).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 40,
            lr: 3e-3,
            val_fraction: 0.0,
            patience: 100,
            seed: 1,
        };
        let before = reconstruction_rmse(&model, &ds).unwrap();
        let out = train(model, &ds, &cfg).unwrap();
        let after = reconstruction_rmse(&out.model, &ds).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
        assert_eq!(out.history.len(), 40);
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let ds = dataset(10, 8);
        let cfg = TrainConfig {
            batch_size: 3,
            epochs: 3,
            lr: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let m = AutoencoderModel::new(small(0.2), ds.norm.clone(), 9).unwrap();
            train(m, &ds, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model.fingerprint(), b.model.fingerprint());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn best_checkpoint_is_kept() {
        let ds = dataset(10, 8);
        let cfg = TrainConfig {
            batch_size: 2,
            epochs: 6,
            lr: 0.3,
            val_fraction: 0.3,
            patience: 2,
            seed: 2,
        };
        let m = AutoencoderModel::new(small(0.0), ds.norm.clone(), 1).unwrap();
        let out = train(m, &ds, &cfg).unwrap();
        let best = out.history[out.best_epoch - 1].val_loss.unwrap();
        assert!(out.history.iter().all(|r| r.val_loss.unwrap() >= best));
    }

    #[test]
    fn diverging_run_reports_numerical_failure() {
        let ds = dataset(6, 8);
        let mut m = AutoencoderModel::new(small(0.0), ds.norm.clone(), 1).unwrap();
        m.dec_out.bias.value.data_mut()[0] = f64::NAN;
        let err = train(m, &ds, &TrainConfig::default()).unwrap_err();
        assert!(err.is_numerical());
        assert!(err.to_string().contains("epoch 1"), "{err}");
    }

    #[test]
    fn mismatched_length_is_rejected() {
        let ds = dataset(4, 6);
        let m = AutoencoderModel::new(small(0.0), ds.norm.clone(), 1).unwrap();
        assert!(train(m, &ds, &TrainConfig::default()).is_err());
    }
}
