//! C-MAPSS telemetry: parsing, RUL attachment, feature normalization,
//! failure-window labels and fixed-length training windows.
//!
//! A telemetry line has 26 whitespace-separated columns:
//! `unit cycle setting1..3 sensor1..21`. The 24 model inputs are the three
//! settings followed by the 21 sensors, in file order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_SETTINGS: usize = 3;
pub const N_SENSORS: usize = 21;
pub const N_FEATURES: usize = N_SETTINGS + N_SENSORS;
pub const N_COLUMNS: usize = 2 + N_FEATURES;

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_HORIZON: u32 = 30;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected {N_COLUMNS} fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: field {field} is not numeric: {text:?}")]
    NotNumeric {
        line: usize,
        field: usize,
        text: String,
    },
    #[error("line {line}: unit {unit} jumps from cycle {previous} to {cycle}")]
    NonContiguousCycle {
        line: usize,
        unit: u32,
        previous: u32,
        cycle: u32,
    },
    #[error("RUL file line {line}: expected a non-negative integer, found {text:?}")]
    BadRul { line: usize, text: String },
    #[error("{trajectories} trajectories but {ruls} RUL entries")]
    RulCountMismatch { trajectories: usize, ruls: usize },
    #[error("cannot fit normalization on an empty fleet")]
    EmptyFleet,
    #[error("operating regime {0:?} was not seen when fitting normalization")]
    UnknownRegime([f64; N_SETTINGS]),
    #[error("unit {0} has no RUL attached")]
    MissingRul(u32),
    #[error("invalid label scheme: {0}")]
    InvalidScheme(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One engine's cycle-ordered record.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineTrajectory {
    pub unit_id: u32,
    pub cycles: Vec<u32>,
    pub settings: Vec<[f64; N_SETTINGS]>,
    pub sensors: Vec<[f64; N_SENSORS]>,
    /// Remaining useful life per cycle, once attached.
    pub rul: Option<Vec<u32>>,
}

impl EngineTrajectory {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn last_cycle(&self) -> u32 {
        self.cycles.last().copied().unwrap_or(0)
    }

    /// The 24 model inputs at row `t` (settings then sensors).
    pub fn features(&self, t: usize) -> [f64; N_FEATURES] {
        join_features(&self.settings[t], &self.sensors[t])
    }

    /// Cycle at which RUL equals `horizon`, if that cycle is part of the
    /// record.
    pub fn window_entry_cycle(&self, horizon: u32) -> Option<u32> {
        let entry = self.virtual_window_entry(horizon)?;
        (entry >= 1 && entry <= i64::from(self.last_cycle())).then_some(entry as u32)
    }

    /// Cycle at which RUL equals `horizon`, extrapolated from the attached
    /// RUL. May lie before cycle 1 or after the last recorded cycle.
    pub fn virtual_window_entry(&self, horizon: u32) -> Option<i64> {
        let rul = self.rul.as_ref()?;
        let last = *rul.last()?;
        Some(i64::from(self.last_cycle()) + i64::from(last) - i64::from(horizon))
    }
}

fn join_features(settings: &[f64; N_SETTINGS], sensors: &[f64; N_SENSORS]) -> [f64; N_FEATURES] {
    let mut out = [0.0; N_FEATURES];
    out[..N_SETTINGS].copy_from_slice(settings);
    out[N_SETTINGS..].copy_from_slice(sensors);
    out
}

/// A single parsed telemetry line.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub unit_id: u32,
    pub cycle: u32,
    pub settings: [f64; N_SETTINGS],
    pub sensors: [f64; N_SENSORS],
}

/// Parses one 26-column line. `line_no` is only used in error messages.
pub fn parse_record(line: &str, line_no: usize) -> Result<TelemetryRecord, DataError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != N_COLUMNS {
        return Err(DataError::FieldCount {
            line: line_no,
            found: fields.len(),
        });
    }
    let integer = |i: usize| -> Result<u32, DataError> {
        fields[i].parse::<u32>().map_err(|_| DataError::NotNumeric {
            line: line_no,
            field: i + 1,
            text: fields[i].to_string(),
        })
    };
    let real = |i: usize| -> Result<f64, DataError> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| DataError::NotNumeric {
                line: line_no,
                field: i + 1,
                text: fields[i].to_string(),
            })
    };
    let unit_id = integer(0)?;
    let cycle = integer(1)?;
    let mut settings = [0.0; N_SETTINGS];
    for (k, s) in settings.iter_mut().enumerate() {
        *s = real(2 + k)?;
    }
    let mut sensors = [0.0; N_SENSORS];
    for (k, s) in sensors.iter_mut().enumerate() {
        *s = real(2 + N_SETTINGS + k)?;
    }
    Ok(TelemetryRecord {
        unit_id,
        cycle,
        settings,
        sensors,
    })
}

/// Parses a whole telemetry file. Trajectories come back sorted by unit id;
/// each unit's cycles must run 1, 2, 3, … in file order.
pub fn parse_trajectories(text: &str) -> Result<Vec<EngineTrajectory>, DataError> {
    let mut units: BTreeMap<u32, EngineTrajectory> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let rec = parse_record(line, line_no)?;
        let traj = units
            .entry(rec.unit_id)
            .or_insert_with(|| EngineTrajectory {
                unit_id: rec.unit_id,
                cycles: Vec::new(),
                settings: Vec::new(),
                sensors: Vec::new(),
                rul: None,
            });
        let previous = traj.last_cycle();
        if rec.cycle != previous + 1 {
            return Err(DataError::NonContiguousCycle {
                line: line_no,
                unit: rec.unit_id,
                previous,
                cycle: rec.cycle,
            });
        }
        traj.cycles.push(rec.cycle);
        traj.settings.push(rec.settings);
        traj.sensors.push(rec.sensors);
    }
    Ok(units.into_values().collect())
}

/// Serializes a fleet back to the 26-column format. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_trajectories(fleet: &[EngineTrajectory]) -> String {
    let mut out = String::new();
    for traj in fleet {
        for t in 0..traj.len() {
            write!(out, "{} {}", traj.unit_id, traj.cycles[t]).unwrap();
            for v in traj.features(t) {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_rul_file(text: &str) -> Result<Vec<u32>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u32>().map_err(|_| DataError::BadRul {
                line: i + 1,
                text: l.trim().to_string(),
            })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_trajectories(path: &Path) -> Result<Vec<EngineTrajectory>, DataError> {
    parse_trajectories(&read_text(path)?)
}

pub fn read_rul_file(path: &Path) -> Result<Vec<u32>, DataError> {
    parse_rul_file(&read_text(path)?)
}

/// `rul[t] = final_rul + (last_cycle - cycles[t])`. Training trajectories run
/// to failure and use `final_rul = 0`.
pub fn attach_rul(mut traj: EngineTrajectory, final_rul: u32) -> EngineTrajectory {
    let last = traj.last_cycle();
    traj.rul = Some(
        traj.cycles
            .iter()
            .map(|&c| final_rul + (last - c))
            .collect(),
    );
    traj
}

/// Pairs test trajectories (sorted by unit) with the RUL file entries.
pub fn attach_test_rul(
    fleet: Vec<EngineTrajectory>,
    ruls: &[u32],
) -> Result<Vec<EngineTrajectory>, DataError> {
    if fleet.len() != ruls.len() {
        return Err(DataError::RulCountMismatch {
            trajectories: fleet.len(),
            ruls: ruls.len(),
        });
    }
    Ok(fleet
        .into_iter()
        .zip(ruls)
        .map(|(t, &r)| attach_rul(t, r))
        .collect())
}

/// File locations of one subset inside a data directory, using the
/// distribution's names (`train_FD001.txt`, `test_FD001.txt`, `RUL_FD001.txt`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub rul: PathBuf,
}

impl SubsetPaths {
    pub fn new(dir: &Path, subset: &str) -> Self {
        SubsetPaths {
            train: dir.join(format!("train_{subset}.txt")),
            test: dir.join(format!("test_{subset}.txt")),
            rul: dir.join(format!("RUL_{subset}.txt")),
        }
    }
}

/// Training fleet (run to failure) and test fleet, both with RUL attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub train: Vec<EngineTrajectory>,
    pub test: Vec<EngineTrajectory>,
}

impl Subset {
    pub fn train_rows(&self) -> usize {
        self.train.iter().map(EngineTrajectory::len).sum()
    }

    pub fn test_rows(&self) -> usize {
        self.test.iter().map(EngineTrajectory::len).sum()
    }
}

pub fn load_subset(dir: &Path, subset: &str) -> Result<Subset, DataError> {
    let paths = SubsetPaths::new(dir, subset);
    let train = read_trajectories(&paths.train)?
        .into_iter()
        .map(|t| attach_rul(t, 0))
        .collect();
    let test = attach_test_rul(read_trajectories(&paths.test)?, &read_rul_file(&paths.rul)?)?;
    Ok(Subset { train, test })
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

impl FeatureStats {
    fn fit<'a>(rows: impl Iterator<Item = [f64; N_FEATURES]> + Clone + 'a) -> Self {
        let mut mean = vec![0.0; N_FEATURES];
        let mut first: Option<[f64; N_FEATURES]> = None;
        let mut constant = [true; N_FEATURES];
        let mut count = 0usize;
        for row in rows.clone() {
            let f = *first.get_or_insert(row);
            for k in 0..N_FEATURES {
                mean[k] += row[k];
                constant[k] &= row[k] == f[k];
            }
            count += 1;
        }
        let n = count as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        // a summed mean can miss a constant value by an ulp; pin it exactly
        if let Some(f) = first {
            for k in 0..N_FEATURES {
                if constant[k] {
                    mean[k] = f[k];
                }
            }
        }
        let mut var = vec![0.0; N_FEATURES];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        FeatureStats { mean, std, count }
    }

    fn apply(&self, row: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            out[k] = if self.std[k] > 0.0 {
                (row[k] - self.mean[k]) / self.std[k]
            } else {
                0.0
            };
        }
        out
    }
}

/// Operating-regime key: each setting rounded to one decimal place, stored
/// as tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegimeKey(pub [i64; N_SETTINGS]);

impl RegimeKey {
    pub fn of(settings: &[f64; N_SETTINGS]) -> Self {
        RegimeKey(settings.map(|s| (s * 10.0).round() as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Statistics over every training cycle.
    pub global: FeatureStats,
    /// Per-regime statistics, sorted by key. Present only in regime mode.
    pub regimes: Option<Vec<(RegimeKey, FeatureStats)>>,
}

impl NormStats {
    /// Normalizes one row of raw telemetry into the 24 model inputs.
    pub fn normalize(
        &self,
        settings: &[f64; N_SETTINGS],
        sensors: &[f64; N_SENSORS],
    ) -> Result<[f64; N_FEATURES], DataError> {
        let row = join_features(settings, sensors);
        match &self.regimes {
            None => Ok(self.global.apply(&row)),
            Some(regimes) => {
                let key = RegimeKey::of(settings);
                let idx = regimes
                    .binary_search_by(|(k, _)| k.cmp(&key))
                    .map_err(|_| DataError::UnknownRegime(*settings))?;
                Ok(regimes[idx].1.apply(&row))
            }
        }
    }
}

pub fn fit_normalization(
    fleet: &[EngineTrajectory],
    regime_mode: bool,
) -> Result<NormStats, DataError> {
    if fleet.iter().all(|t| t.is_empty()) {
        return Err(DataError::EmptyFleet);
    }
    let rows = fleet
        .iter()
        .flat_map(|t| (0..t.len()).map(move |i| t.features(i)));
    let global = FeatureStats::fit(rows.clone());
    let regimes = regime_mode.then(|| {
        let mut grouped: BTreeMap<RegimeKey, Vec<[f64; N_FEATURES]>> = BTreeMap::new();
        for t in fleet {
            for i in 0..t.len() {
                grouped
                    .entry(RegimeKey::of(&t.settings[i]))
                    .or_default()
                    .push(t.features(i));
            }
        }
        grouped
            .into_iter()
            .map(|(k, rows)| (k, FeatureStats::fit(rows.into_iter())))
            .collect()
    });
    Ok(NormStats { global, regimes })
}

/// Replaces raw settings/sensors with normalized values. Zero-variance
/// features map to 0.
pub fn apply_normalization(
    fleet: &[EngineTrajectory],
    stats: &NormStats,
) -> Result<Vec<EngineTrajectory>, DataError> {
    fleet
        .iter()
        .map(|traj| {
            let mut out = traj.clone();
            for t in 0..traj.len() {
                let z = stats.normalize(&traj.settings[t], &traj.sensors[t])?;
                out.settings[t].copy_from_slice(&z[..N_SETTINGS]);
                out.sensors[t].copy_from_slice(&z[N_SETTINGS..]);
            }
            Ok(out)
        })
        .collect()
}

/// How RUL maps to a class index.
///
/// Binary: class 1 iff `rul <= horizon`. Multiclass with boundaries
/// `w0 < w1 < …`: class 0 for `rul ∈ [0, w0]`, class k for
/// `rul ∈ [w(k-1)+1, wk]`, and one final open class for `rul > w_last`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LabelScheme {
    Binary { horizon: u32 },
    Multiclass { boundaries: Vec<u32> },
}

impl Default for LabelScheme {
    fn default() -> Self {
        LabelScheme::Binary {
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl LabelScheme {
    pub fn binary(horizon: u32) -> Result<Self, DataError> {
        if horizon == 0 {
            return Err(DataError::InvalidScheme("horizon must be positive".into()));
        }
        Ok(LabelScheme::Binary { horizon })
    }

    pub fn multiclass(boundaries: Vec<u32>) -> Result<Self, DataError> {
        if boundaries.is_empty() {
            return Err(DataError::InvalidScheme("no window boundaries".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidScheme(format!(
                "boundaries must be strictly increasing: {boundaries:?}"
            )));
        }
        Ok(LabelScheme::Multiclass { boundaries })
    }

    pub fn num_classes(&self) -> usize {
        match self {
            LabelScheme::Binary { .. } => 2,
            LabelScheme::Multiclass { boundaries } => boundaries.len() + 1,
        }
    }
}

pub fn make_label(rul: u32, scheme: &LabelScheme) -> usize {
    match scheme {
        LabelScheme::Binary { horizon } => usize::from(rul <= *horizon),
        LabelScheme::Multiclass { boundaries } => boundaries
            .iter()
            .position(|&w| rul <= w)
            .unwrap_or(boundaries.len()),
    }
}

/// A fixed-length window of normalized features ending at `end_cycle`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub unit_id: u32,
    pub end_cycle: u32,
    /// `length × 24`, time-major.
    pub features: Vec<f64>,
    pub label: usize,
    pub rul_at_end: u32,
}

/// Time-major features of the `length` rows ending at row index `end`
/// (inclusive).
pub fn window_features(traj: &EngineTrajectory, end: usize, length: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(length * N_FEATURES);
    for t in end + 1 - length..=end {
        out.extend_from_slice(&traj.settings[t]);
        out.extend_from_slice(&traj.sensors[t]);
    }
    out
}

/// One sample per end cycle `e` in `length..=n` stepping by `stride`.
/// Trajectories shorter than `length` produce nothing.
pub fn make_windows(
    traj: &EngineTrajectory,
    length: usize,
    stride: usize,
    scheme: &LabelScheme,
) -> Result<Vec<WindowSample>, DataError> {
    let rul = traj
        .rul
        .as_ref()
        .ok_or(DataError::MissingRul(traj.unit_id))?;
    if length == 0 || traj.len() < length {
        return Ok(Vec::new());
    }
    Ok((length - 1..traj.len())
        .step_by(stride.max(1))
        .map(|end| WindowSample {
            unit_id: traj.unit_id,
            end_cycle: traj.cycles[end],
            features: window_features(traj, end, length),
            label: make_label(rul[end], scheme),
            rul_at_end: rul[end],
        })
        .collect())
}
