//! Classification metrics, BRNN-vs-baseline comparison and plot-data CSV.
//!
//! The decision rule is `p50 >= threshold`. A crossing is *sustained* once
//! `sustain` consecutive forecast cycles satisfy it; the crossing cycle is
//! the first of that run.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predict::{AlignedSeries, EngineForecast};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unit {0} has no true labels; metrics need RUL-labelled forecasts")]
    MissingLabels(u32),
    #[error("forecast sets differ: {0}")]
    Mismatch(String),
    #[error("nothing to export")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub threshold: f64,
    /// Consecutive cycles at or above the threshold that count as a crossing.
    pub sustain: usize,
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule {
            threshold: 0.5,
            sustain: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineLeadTime {
    pub unit: u32,
    /// Cycle where RUL equals the horizon, extrapolated if outside the record.
    pub window_entry: Option<i64>,
    pub crossing: Option<u32>,
    /// `window_entry − crossing`; negative means the alarm came late.
    pub lead_time: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Fraction of label-0 cycles predicted positive.
    pub false_alarm_rate: f64,
    pub lead_times: Vec<EngineLeadTime>,
    pub evaluated_cycles: usize,
}

/// First cycle of the first run of `sustain` consecutive points with
/// `p50 >= threshold`.
pub fn first_sustained_crossing(f: &EngineForecast, rule: &DecisionRule) -> Option<u32> {
    let need = rule.sustain.max(1);
    let mut run = 0;
    for (k, p) in f.points.iter().enumerate() {
        if p.p50 >= rule.threshold {
            run += 1;
            if run == need {
                return Some(f.points[k + 1 - need].cycle);
            }
        } else {
            run = 0;
        }
    }
    None
}

pub fn classify_metrics(
    forecasts: &[EngineForecast],
    horizon: u32,
    rule: &DecisionRule,
) -> Result<Metrics, EvalError> {
    let mut c = Confusion::default();
    let mut lead_times = Vec::with_capacity(forecasts.len());
    for f in forecasts {
        let labels = f
            .labels
            .as_ref()
            .ok_or(EvalError::MissingLabels(f.unit_id))?;
        for (p, &y) in f.points.iter().zip(labels) {
            c.record(p.p50 >= rule.threshold, y == 1);
        }
        let window_entry = f.virtual_window_entry(horizon);
        let crossing = first_sustained_crossing(f, rule);
        lead_times.push(EngineLeadTime {
            unit: f.unit_id,
            window_entry,
            crossing,
            lead_time: window_entry.zip(crossing).map(|(e, x)| e - i64::from(x)),
        });
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
        false_alarm_rate: ratio(c.fp, c.fp + c.tn),
        confusion: c,
        lead_times,
        evaluated_cycles: c.total(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineCrossings {
    pub unit: u32,
    pub window_entry: Option<i64>,
    pub brnn: Option<u32>,
    pub baseline: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub horizon: u32,
    pub rule: DecisionRule,
    pub brnn: Metrics,
    pub baseline: Metrics,
    pub engines: Vec<EngineCrossings>,
    /// Engines whose BRNN median crosses before warning-window entry.
    pub brnn_early_crossings: usize,
    /// Engines whose deterministic baseline crosses before warning-window entry.
    pub baseline_early_crossings: usize,
}

fn is_early(crossing: Option<u32>, entry: Option<i64>) -> bool {
    matches!((crossing, entry), (Some(x), Some(e)) if i64::from(x) < e)
}

pub fn compare(
    brnn: &[EngineForecast],
    baseline: &[EngineForecast],
    horizon: u32,
    rule: &DecisionRule,
) -> Result<ComparisonReport, EvalError> {
    if brnn.len() != baseline.len() {
        return Err(EvalError::Mismatch(format!(
            "{} BRNN engines vs {} baseline engines",
            brnn.len(),
            baseline.len()
        )));
    }
    for (a, b) in brnn.iter().zip(baseline) {
        if a.unit_id != b.unit_id {
            return Err(EvalError::Mismatch(format!(
                "unit {} vs unit {}",
                a.unit_id, b.unit_id
            )));
        }
        if !a
            .points
            .iter()
            .map(|p| p.cycle)
            .eq(b.points.iter().map(|p| p.cycle))
        {
            return Err(EvalError::Mismatch(format!(
                "unit {}: cycle sets differ",
                a.unit_id
            )));
        }
    }
    let m_brnn = classify_metrics(brnn, horizon, rule)?;
    let m_base = classify_metrics(baseline, horizon, rule)?;
    let engines: Vec<EngineCrossings> = m_brnn
        .lead_times
        .iter()
        .zip(&m_base.lead_times)
        .map(|(a, b)| EngineCrossings {
            unit: a.unit,
            window_entry: a.window_entry,
            brnn: a.crossing,
            baseline: b.crossing,
        })
        .collect();
    let brnn_early_crossings = engines
        .iter()
        .filter(|e| is_early(e.brnn, e.window_entry))
        .count();
    let baseline_early_crossings = engines
        .iter()
        .filter(|e| is_early(e.baseline, e.window_entry))
        .count();
    Ok(ComparisonReport {
        horizon,
        rule: *rule,
        brnn: m_brnn,
        baseline: m_base,
        engines,
        brnn_early_crossings,
        baseline_early_crossings,
    })
}

pub const CSV_HEADER: &str = "unit,cycle_or_tau,p10,p25,p50,p75,p90,label";

fn push_row(out: &mut String, unit: u32, t: i64, p: [f64; 5], label: Option<u8>) {
    let label = label.map(|l| l.to_string()).unwrap_or_default();
    let _ = writeln!(
        out,
        "{unit},{t},{},{},{},{},{},{label}",
        p[0], p[1], p[2], p[3], p[4]
    );
}

/// Per-cycle rows for single-engine or baseline plots.
pub fn forecasts_csv(forecasts: &[EngineForecast]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for f in forecasts {
        for (k, p) in f.points.iter().enumerate() {
            let label = f.labels.as_ref().map(|l| l[k]);
            push_row(
                &mut out,
                f.unit_id,
                i64::from(p.cycle),
                p.percentiles(),
                label,
            );
        }
    }
    out
}

/// Rows indexed by `tau` for the aligned-fleet plot.
pub fn aligned_csv(series: &AlignedSeries) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in &series.rows {
        push_row(
            &mut out,
            r.unit,
            r.tau,
            [r.p10, r.p25, r.p50, r.p75, r.p90],
            r.label,
        );
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn export_forecasts(forecasts: &[EngineForecast], path: &Path) -> Result<(), EvalError> {
    if forecasts.iter().all(|f| f.points.is_empty()) {
        return Err(EvalError::Empty);
    }
    write(path, &forecasts_csv(forecasts))
}

pub fn export_aligned(series: &AlignedSeries, path: &Path) -> Result<(), EvalError> {
    if series.rows.is_empty() {
        return Err(EvalError::Empty);
    }
    write(path, &aligned_csv(series))
}
