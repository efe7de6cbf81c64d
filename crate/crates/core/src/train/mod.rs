//! Mini-batch Adam training with a unit-level validation split, early
//! stopping, and model persistence.

mod adam;
mod model_file;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use model_file::{
    load_model, model_from_json, model_to_json, save_model, ModelFileError, SavedModel,
    FORMAT_VERSION,
};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brnn::{
    backward_into, bce_loss, forward, init_params, predict_proba, sample_masks, BrnnError,
    DropoutSpec, NetworkDims, NetworkParams,
};
use crate::cmapss::{WindowSample, DEFAULT_HORIZON, DEFAULT_WINDOW, N_FEATURES};
use crate::ndmath::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training samples")]
    NoSamples,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("sample for unit {unit} at cycle {cycle} has label {label}; the network is binary")]
    NonBinaryLabel { unit: u32, cycle: u32, label: usize },
    #[error(
        "sample for unit {unit} at cycle {cycle} has {found} feature values, expected {expected}"
    )]
    SampleShape {
        unit: u32,
        cycle: u32,
        found: usize,
        expected: usize,
    },
    #[error("need at least two engine units to split off a validation set, found {0}")]
    TooFewUnits(usize),
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    AtBatch {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Network(#[from] BrnnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub window_length: usize,
    pub horizon: u32,
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: DropoutSpec,
    pub validation_fraction: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_length: DEFAULT_WINDOW,
            horizon: DEFAULT_HORIZON,
            input_dim: N_FEATURES,
            hidden1: 100,
            hidden2: 50,
            dropout: DropoutSpec::default(),
            validation_fraction: 0.10,
            adam: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self) -> NetworkDims {
        NetworkDims {
            input: self.input_dim,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            seq_len: self.window_length,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.window_length == 0 || self.input_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0
        {
            return bad("window length, input width and hidden sizes must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be positive");
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0)
        {
            return bad("Adam needs lr > 0, betas in [0, 1), eps > 0");
        }
        self.dropout.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned. `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
    pub validation_units: Vec<u32>,
    pub train_windows: usize,
    pub validation_windows: usize,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_loss).unwrap();
        }
        out
    }
}

/// Sample indices on each side of a unit-level split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub validation_units: Vec<u32>,
}

/// Holds out `round(fraction × units)` whole engine units (at least one,
/// never all) so no engine contributes windows to both sides.
pub fn split_validation(
    samples: &[WindowSample],
    fraction: f64,
    rng: &mut Rng,
) -> Result<Split, TrainError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "validation fraction {fraction} outside (0, 1)"
        )));
    }
    let mut units: Vec<u32> = samples
        .iter()
        .map(|s| s.unit_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if units.len() < 2 {
        return Err(TrainError::TooFewUnits(units.len()));
    }
    let n_val = ((fraction * units.len() as f64).round() as usize).clamp(1, units.len() - 1);
    rng.shuffle(&mut units);
    let mut validation_units = units[..n_val].to_vec();
    validation_units.sort_unstable();
    let (validation, train) = (0..samples.len())
        .partition(|&i| validation_units.binary_search(&samples[i].unit_id).is_ok());
    Ok(Split {
        train,
        validation,
        validation_units,
    })
}

fn check_samples(cfg: &TrainConfig, samples: &[WindowSample]) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let expected = cfg.window_length * cfg.input_dim;
    for s in samples {
        if s.label > 1 {
            return Err(TrainError::NonBinaryLabel {
                unit: s.unit_id,
                cycle: s.end_cycle,
                label: s.label,
            });
        }
        if s.features.len() != expected {
            return Err(TrainError::SampleShape {
                unit: s.unit_id,
                cycle: s.end_cycle,
                found: s.features.len(),
                expected,
            });
        }
    }
    Ok(())
}

/// Mean BCE of the deterministic network over `idx`.
pub fn evaluate_loss(
    params: &NetworkParams,
    samples: &[WindowSample],
    idx: &[usize],
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for &i in idx {
        let s = &samples[i];
        total += bce_loss(predict_proba(params, None, &s.features)?, s.label as f64);
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Trains from scratch.
///
/// RNG draw order: initial weights, validation split, then per epoch the
/// shuffle followed by one mask set per sequence in visiting order. The
/// returned weights are those of the best validation epoch.
pub fn train(
    cfg: &TrainConfig,
    samples: &[WindowSample],
    rng: &mut Rng,
) -> Result<(NetworkParams, TrainReport), TrainError> {
    cfg.validate()?;
    check_samples(cfg, samples)?;
    let dims = cfg.dims();
    let mut params = init_params(rng, &dims);
    if cfg.max_epochs == 0 {
        return Ok((
            params,
            TrainReport {
                epochs: Vec::new(),
                best_epoch: None,
                stop_reason: StopReason::MaxEpochs,
                validation_units: Vec::new(),
                train_windows: samples.len(),
                validation_windows: 0,
            },
        ));
    }
    let split = split_validation(samples, cfg.validation_fraction, rng)?;
    info!(
        "training on {} windows, validating on {} windows from units {:?}",
        split.train.len(),
        split.validation.len(),
        split.validation_units
    );

    let mut state = AdamState::new(&params);
    let mut grads = NetworkParams::zeros(&dims);
    let mut order = split.train.clone();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, NetworkParams)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grads.scale(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &samples[i];
                let masks = sample_masks(rng, &cfg.dropout, &dims)?;
                let (p, cache) = forward(&params, Some(&masks), &s.features)?;
                let y = s.label as f64;
                let loss = bce_loss(p, y);
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch });
                }
                loss_sum += loss;
                backward_into(&params, &cache, y, scale, &mut grads)?;
            }
            adam_step(&mut params, &grads, &mut state, &cfg.adam).map_err(|e| {
                TrainError::AtBatch {
                    epoch,
                    batch,
                    source: Box::new(e),
                }
            })?;
        }
        let train_loss = loss_sum / order.len().max(1) as f64;
        let val_loss = evaluate_loss(&params, samples, &split.validation)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        info!("epoch {epoch}: train loss {train_loss:.5}, validation loss {val_loss:.5}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch ran");
    Ok((
        best_params,
        TrainReport {
            epochs,
            best_epoch: Some(best_epoch),
            stop_reason,
            validation_units: split.validation_units,
            train_windows: split.train.len(),
            validation_windows: split.validation.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(unit: u32, end: u32, features: Vec<f64>, label: usize) -> WindowSample {
        WindowSample {
            unit_id: unit,
            end_cycle: end,
            features,
            label,
            rul_at_end: 0,
        }
    }

    fn fleet_windows(units: u32, per_unit: u32, len: usize) -> Vec<WindowSample> {
        (1..=units)
            .flat_map(|u| {
                (0..per_unit)
                    .map(move |k| sample(u, k + len as u32, vec![0.0; len * N_FEATURES], 0))
            })
            .collect()
    }

    #[test]
    fn split_is_by_unit() {
        let samples = fleet_windows(10, 4, 2);
        let split = split_validation(&samples, 0.1, &mut Rng::new(3)).unwrap();
        assert_eq!(split.validation_units.len(), 1);
        assert_eq!(split.validation.len(), 4);
        assert_eq!(split.train.len() + split.validation.len(), samples.len());
        let mut all: Vec<usize> = split
            .train
            .iter()
            .chain(&split.validation)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..samples.len()).collect::<Vec<_>>());
        for &i in &split.train {
            assert!(!split.validation_units.contains(&samples[i].unit_id));
        }
        assert_eq!(
            split,
            split_validation(&samples, 0.1, &mut Rng::new(3)).unwrap()
        );
    }

    #[test]
    fn split_needs_two_units() {
        let samples = fleet_windows(1, 5, 2);
        assert!(matches!(
            split_validation(&samples, 0.1, &mut Rng::new(0)),
            Err(TrainError::TooFewUnits(1))
        ));
        // even a large fraction keeps one training unit
        let two = fleet_windows(2, 2, 2);
        let s = split_validation(&two, 0.9, &mut Rng::new(0)).unwrap();
        assert_eq!(s.validation_units.len(), 1);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let cfg = TrainConfig {
            window_length: 2,
            hidden1: 3,
            hidden2: 2,
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let samples = fleet_windows(3, 2, 2);
        let (p, report) = train(&cfg, &samples, &mut Rng::new(9)).unwrap();
        assert_eq!(p, init_params(&mut Rng::new(9), &cfg.dims()));
        assert!(report.epochs.is_empty());
        assert_eq!(report.best_epoch, None);
        assert_eq!(report.to_csv(), "epoch,train_loss,val_loss\n");
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = TrainConfig {
            window_length: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, &[], &mut Rng::new(0)),
            Err(TrainError::NoSamples)
        ));
        let mut samples = fleet_windows(3, 2, 2);
        samples[1].label = 2;
        assert!(matches!(
            train(&cfg, &samples, &mut Rng::new(0)),
            Err(TrainError::NonBinaryLabel { label: 2, .. })
        ));
        let samples = fleet_windows(3, 2, 3);
        assert!(matches!(
            train(&cfg, &samples, &mut Rng::new(0)),
            Err(TrainError::SampleShape { .. })
        ));
        let bad = TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
    }
}
