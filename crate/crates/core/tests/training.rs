use pdm_brnn::brnn::predict_proba;
use pdm_brnn::cmapss::{WindowSample, N_FEATURES};
use pdm_brnn::ndmath::Rng;
use pdm_brnn::train::{split_validation, train, StopReason, TrainConfig, TrainError};

const STEPS: usize = 10;

/// Label is 1 iff feature 0 has a positive mean over the window. Each
/// window's mean sits at least 0.5 away from zero.
fn separable(n: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|k| {
            let shift = rng.uniform(0.5, 1.5) * if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            let mut x: Vec<f64> = (0..STEPS * N_FEATURES).map(|_| rng.normal()).collect();
            for t in 0..STEPS {
                x[t * N_FEATURES] = shift + 0.3 * rng.normal();
            }
            let drift = (0..STEPS).map(|t| x[t * N_FEATURES]).sum::<f64>() / STEPS as f64 - shift;
            for t in 0..STEPS {
                x[t * N_FEATURES] -= drift;
            }
            let mean = (0..STEPS).map(|t| x[t * N_FEATURES]).sum::<f64>() / STEPS as f64;
            WindowSample {
                unit_id: (k / 20) as u32 + 1,
                end_cycle: (k % 20) as u32 + STEPS as u32,
                features: x,
                label: usize::from(mean > 0.0),
                rul_at_end: 0,
            }
        })
        .collect()
}

fn config() -> TrainConfig {
    TrainConfig {
        window_length: STEPS,
        hidden1: 8,
        hidden2: 4,
        max_epochs: 30,
        patience: 30,
        batch_size: 16,
        validation_fraction: 0.2,
        seed: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_task_reaches_full_validation_accuracy() {
    let samples = separable(400, 1);
    // brute-force check of the construction: the sign of the mean decides
    for s in &samples {
        let mean: f64 = (0..STEPS).map(|t| s.features[t * N_FEATURES]).sum::<f64>();
        assert_eq!(s.label, usize::from(mean > 0.0));
        assert!(mean.abs() / STEPS as f64 >= 0.5 - 1e-12);
    }
    let cfg = config();
    let mut rng = Rng::new(cfg.seed);
    let (params, report) = train(&cfg, &samples, &mut rng).unwrap();
    assert!(report.epochs.len() <= 30);

    // replay the split the trainer drew: init consumes the same draws
    let mut replay = Rng::new(cfg.seed);
    pdm_brnn::brnn::init_params(&mut replay, &cfg.dims());
    let split = split_validation(&samples, cfg.validation_fraction, &mut replay).unwrap();
    assert_eq!(split.validation_units, report.validation_units);
    let correct = split
        .validation
        .iter()
        .filter(|&&i| {
            let p = predict_proba(&params, None, &samples[i].features).unwrap();
            usize::from(p >= 0.5) == samples[i].label
        })
        .count();
    assert_eq!(
        correct,
        split.validation.len(),
        "validation accuracy {correct}/{}",
        split.validation.len()
    );
}

#[test]
fn best_epoch_has_lowest_validation_loss() {
    let samples = separable(200, 2);
    let cfg = TrainConfig {
        max_epochs: 12,
        patience: 3,
        ..config()
    };
    let (_, report) = train(&cfg, &samples, &mut Rng::new(3)).unwrap();
    let best = report.best_epoch.unwrap();
    let best_loss = report.epochs[best - 1].val_loss;
    assert!(report.epochs.iter().all(|e| best_loss <= e.val_loss));
    if report.stop_reason == StopReason::EarlyStopping {
        assert_eq!(report.epochs.len(), best + cfg.patience);
    }
}

#[test]
fn same_seed_same_report_and_weights() {
    let samples = separable(120, 4);
    let cfg = TrainConfig {
        max_epochs: 4,
        ..config()
    };
    let a = train(&cfg, &samples, &mut Rng::new(5)).unwrap();
    let b = train(&cfg, &samples, &mut Rng::new(5)).unwrap();
    assert_eq!(a.1, b.1);
    for (x, y) in a.0.tensors().iter().zip(b.0.tensors()) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(a.1.to_csv(), b.1.to_csv());
}

#[test]
fn nan_loss_aborts_with_epoch_and_batch() {
    let mut samples = separable(60, 6);
    samples[7].features[3] = f64::NAN;
    let cfg = TrainConfig {
        max_epochs: 2,
        ..config()
    };
    let err = train(&cfg, &samples, &mut Rng::new(1)).unwrap_err();
    assert!(
        matches!(err, TrainError::NonFiniteLoss { epoch: 1, .. }),
        "{err}"
    );
    assert!(err.to_string().contains("epoch 1, batch"));
}
