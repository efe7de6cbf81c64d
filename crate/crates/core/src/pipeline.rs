//! End-to-end helpers shared by the CLI and the tests: fit normalization on
//! the training fleet, build labelled windows, train, then forecast a fleet
//! with the saved model.

use log::info;
use thiserror::Error;

use crate::cmapss::{
    apply_normalization, fit_normalization, make_windows, DataError, EngineTrajectory, LabelScheme,
    WindowSample,
};
use crate::ndmath::Rng;
use crate::predict::{
    forecast_engine, forecast_engine_deterministic, EngineForecast, ForecastConfig, PredictError,
};
use crate::train::{train, SavedModel, TrainConfig, TrainError, TrainReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Stride-1 binary windows over every trajectory (RUL must be attached).
pub fn training_windows(
    fleet: &[EngineTrajectory],
    window: usize,
    horizon: u32,
) -> Result<Vec<WindowSample>, DataError> {
    let scheme = LabelScheme::binary(horizon)?;
    let mut out = Vec::new();
    for t in fleet {
        out.extend(make_windows(t, window, 1, &scheme)?);
    }
    Ok(out)
}

/// Fits normalization on `fleet`, trains with `cfg` seeded by `cfg.seed`,
/// and bundles the result as a saveable model.
pub fn fit_model(
    fleet: &[EngineTrajectory],
    cfg: &TrainConfig,
    regime_normalize: bool,
) -> Result<(SavedModel, TrainReport), PipelineError> {
    let stats = fit_normalization(fleet, regime_normalize)?;
    let norm = apply_normalization(fleet, &stats)?;
    let samples = training_windows(&norm, cfg.window_length, cfg.horizon)?;
    info!(
        "{} training windows from {} units",
        samples.len(),
        fleet.len()
    );
    let mut rng = Rng::new(cfg.seed);
    let (params, report) = train(cfg, &samples, &mut rng)?;
    Ok((
        SavedModel {
            params,
            config: cfg.clone(),
            normalization: Some(stats),
        },
        report,
    ))
}

pub fn forecast_config(model: &SavedModel, samples: usize, seed: u64) -> ForecastConfig {
    ForecastConfig {
        window_length: model.config.window_length,
        horizon: model.config.horizon,
        samples,
        seed,
        dropout: model.config.dropout,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetForecast {
    pub forecasts: Vec<EngineForecast>,
    /// Units shorter than one window.
    pub skipped: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    MonteCarlo,
    Deterministic,
}

/// Normalizes raw trajectories with the model's statistics and forecasts
/// every unit long enough to fill a window.
pub fn forecast_fleet(
    model: &SavedModel,
    fleet: &[EngineTrajectory],
    cfg: &ForecastConfig,
    mode: Mode,
) -> Result<FleetForecast, PipelineError> {
    let norm = match &model.normalization {
        Some(stats) => apply_normalization(fleet, stats)?,
        None => fleet.to_vec(),
    };
    let mut out = FleetForecast {
        forecasts: Vec::new(),
        skipped: Vec::new(),
    };
    for t in &norm {
        if t.len() < cfg.window_length {
            out.skipped.push(t.unit_id);
            continue;
        }
        out.forecasts.push(match mode {
            Mode::MonteCarlo => forecast_engine(&model.params, t, cfg)?,
            Mode::Deterministic => forecast_engine_deterministic(&model.params, t, cfg)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmapss::attach_rul;
    use crate::synthetic::{simulate_fleet, SimConfig};

    fn fleet() -> Vec<EngineTrajectory> {
        let cfg = SimConfig {
            units: 4,
            min_life: 20,
            max_life: 30,
            seed: 2,
            ..SimConfig::default()
        };
        simulate_fleet(&cfg)
            .into_iter()
            .map(|t| attach_rul(t, 0))
            .collect()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            window_length: 10,
            horizon: 8,
            hidden1: 4,
            hidden2: 3,
            max_epochs: 2,
            batch_size: 16,
            validation_fraction: 0.25,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn window_count_per_unit() {
        let f = fleet();
        let w = training_windows(&f, 10, 8).unwrap();
        let want: usize = f.iter().map(|t| t.len() - 9).sum();
        assert_eq!(w.len(), want);
    }

    #[test]
    fn fit_and_forecast() {
        let f = fleet();
        let (model, report) = fit_model(&f, &config(), false).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert!(model.normalization.is_some());
        let mut short = f.clone();
        short[1].cycles.truncate(5);
        short[1].settings.truncate(5);
        short[1].sensors.truncate(5);
        short[1].rul.as_mut().unwrap().truncate(5);
        let cfg = forecast_config(&model, 4, 1);
        let mc = forecast_fleet(&model, &short, &cfg, Mode::MonteCarlo).unwrap();
        assert_eq!(mc.skipped, vec![2]);
        assert_eq!(mc.forecasts.len(), 3);
        let det = forecast_fleet(&model, &short, &cfg, Mode::Deterministic).unwrap();
        assert!(det.forecasts[0].points.iter().all(|p| p.p10 == p.p90));
    }
}
