//! A small run-to-failure fleet simulator in the C-MAPSS file layout.
//!
//! Used for tests, examples and the `simulate` CLI command when the real
//! data is not at hand. Each engine has a life `L` drawn uniformly from
//! `[min_life, max_life]` and a health index
//! `d(t) = (exp(k t / L) − 1) / (exp(k) − 1)` that climbs from 0 to 1 at
//! failure. Informative sensors read `base + drift · d(t) + noise`;
//! seven sensors are constant, as in the single-regime subsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmapss::{
    write_trajectories, DataError, EngineTrajectory, SubsetPaths, N_SENSORS, N_SETTINGS,
};
use crate::ndmath::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub units: u32,
    pub min_life: u32,
    pub max_life: u32,
    /// Multiplier on each sensor's noise level.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            units: 100,
            min_life: 128,
            max_life: 362,
            noise: 1.0,
            seed: 0,
        }
    }
}

// (base, drift at failure, noise sd)
const SENSORS: [(f64, f64, f64); N_SENSORS] = [
    (518.67, 0.0, 0.0),
    (642.2, 1.4, 0.35),
    (1585.0, 15.0, 4.0),
    (1399.0, 24.0, 5.5),
    (14.62, 0.0, 0.0),
    (21.61, 0.0, 0.0),
    (554.3, -3.5, 0.6),
    (2388.03, 0.25, 0.05),
    (9050.0, 40.0, 15.0),
    (1.3, 0.0, 0.0),
    (47.25, 0.95, 0.18),
    (521.95, -2.6, 0.5),
    (2388.03, 0.25, 0.05),
    (8136.0, 30.0, 12.0),
    (8.41, 0.11, 0.025),
    (0.03, 0.0, 0.0),
    (391.6, 4.2, 1.2),
    (2388.0, 0.0, 0.0),
    (100.0, 0.0, 0.0),
    (38.96, -0.6, 0.15),
    (23.37, -0.36, 0.09),
];

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn simulate_engine(unit: u32, life: u32, rng: &mut Rng, noise: f64) -> EngineTrajectory {
    let k = rng.uniform(3.0, 6.0);
    let offsets: Vec<f64> = SENSORS.iter().map(|s| 0.5 * s.2 * rng.normal()).collect();
    let scale = (k.exp() - 1.0).recip();
    let mut traj = EngineTrajectory {
        unit_id: unit,
        cycles: Vec::with_capacity(life as usize),
        settings: Vec::with_capacity(life as usize),
        sensors: Vec::with_capacity(life as usize),
        rul: None,
    };
    for c in 1..=life {
        let d = ((k * f64::from(c) / f64::from(life)).exp() - 1.0) * scale;
        let settings: [f64; N_SETTINGS] = [
            round4(0.002 * rng.normal()),
            round4(0.0003 * rng.normal()),
            100.0,
        ];
        let mut sensors = [0.0; N_SENSORS];
        for (j, &(base, drift, sd)) in SENSORS.iter().enumerate() {
            sensors[j] = round4(base + offsets[j] + drift * d + noise * sd * rng.normal());
        }
        traj.cycles.push(c);
        traj.settings.push(settings);
        traj.sensors.push(sensors);
    }
    traj
}

/// Run-to-failure trajectories for units `1..=units`, without RUL.
pub fn simulate_fleet(cfg: &SimConfig) -> Vec<EngineTrajectory> {
    let mut rng = Rng::from_parts(&[cfg.seed, 0x5151]);
    let span = u64::from(cfg.max_life.max(cfg.min_life) - cfg.min_life) + 1;
    (1..=cfg.units)
        .map(|u| {
            let life = cfg.min_life + rng.below(span) as u32;
            simulate_engine(u, life.max(1), &mut rng, cfg.noise)
        })
        .collect()
}

/// Cuts each trajectory at a random point, keeping at least `min_keep`
/// cycles, and returns the truncated fleet with the true final RULs.
pub fn truncate_for_test(
    fleet: &[EngineTrajectory],
    min_keep: usize,
    rng: &mut Rng,
) -> (Vec<EngineTrajectory>, Vec<u32>) {
    fleet
        .iter()
        .map(|t| {
            let lo = min_keep.clamp(1, t.len());
            let keep = lo + rng.below((t.len() - lo + 1) as u64) as usize;
            let cut = EngineTrajectory {
                unit_id: t.unit_id,
                cycles: t.cycles[..keep].to_vec(),
                settings: t.settings[..keep].to_vec(),
                sensors: t.sensors[..keep].to_vec(),
                rul: None,
            };
            (cut, (t.len() - keep) as u32)
        })
        .unzip()
}

/// Simulates a train fleet and a disjoint test fleet and writes the three
/// subset files into `dir`.
pub fn write_dataset(
    dir: &Path,
    subset: &str,
    train: &SimConfig,
    test: &SimConfig,
    min_keep: usize,
) -> Result<SubsetPaths, DataError> {
    let paths = SubsetPaths::new(dir, subset);
    let train_fleet = simulate_fleet(train);
    let mut rng = Rng::from_parts(&[test.seed, 0x7e57]);
    let (test_fleet, ruls) = truncate_for_test(&simulate_fleet(test), min_keep, &mut rng);
    let rul_text: String = ruls.iter().map(|r| format!("{r}\n")).collect();
    for (path, text) in [
        (&paths.train, write_trajectories(&train_fleet)),
        (&paths.test, write_trajectories(&test_fleet)),
        (&paths.rul, rul_text),
    ] {
        std::fs::write(path, text).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(paths)
}
