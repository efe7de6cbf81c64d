//! Line-in, record-out streaming inference.
//!
//! Each input line is one 26-column telemetry row. Per unit a ring buffer
//! keeps the latest `window_length` normalized rows; until it fills, the
//! unit is in warmup. Cycles need only increase per unit; a gap simply
//! means the window spans it.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use serde::Serialize;

use super::{cycle_rng, mc_predict, summarize, PredictError};
use crate::brnn::{DropoutSpec, NetworkParams};
use crate::cmapss::{parse_record, TelemetryRecord, N_FEATURES};
use crate::train::SavedModel;

/// One output line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StreamRecord {
    Prediction {
        unit: u32,
        cycle: u32,
        p10: f64,
        p25: f64,
        p50: f64,
        p75: f64,
        p90: f64,
    },
    Status {
        unit: u32,
        cycle: u32,
        status: &'static str,
    },
    Error {
        line: usize,
        status: &'static str,
        message: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        unit: Option<u32>,
        #[serde(skip_serializing_if = "Option::is_none")]
        cycle: Option<u32>,
    },
}

impl StreamRecord {
    fn error(line: usize, message: String, unit: Option<u32>, cycle: Option<u32>) -> Self {
        StreamRecord::Error {
            line,
            status: "error",
            message,
            unit,
            cycle,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StreamSummary {
    pub lines: usize,
    pub predictions: usize,
    pub warmups: usize,
    pub errors: usize,
}

#[derive(Debug, Default)]
struct UnitBuffer {
    rows: VecDeque<[f64; N_FEATURES]>,
    last_cycle: u32,
}

/// Per-unit streaming state bound to one model.
pub struct Streamer<'m> {
    model: &'m SavedModel,
    samples: usize,
    seed: u64,
    units: HashMap<u32, UnitBuffer>,
    line_no: usize,
}

impl<'m> Streamer<'m> {
    pub fn new(model: &'m SavedModel, samples: usize, seed: u64) -> Result<Self, PredictError> {
        if samples == 0 {
            return Err(PredictError::ZeroSamples);
        }
        Ok(Streamer {
            model,
            samples,
            seed,
            units: HashMap::new(),
            line_no: 0,
        })
    }

    fn params(&self) -> &NetworkParams {
        &self.model.params
    }

    fn dropout(&self) -> &DropoutSpec {
        &self.model.config.dropout
    }

    /// Feeds one line. Blank lines produce no record.
    pub fn process_line(&mut self, line: &str) -> Option<StreamRecord> {
        self.line_no += 1;
        if line.trim().is_empty() {
            return None;
        }
        let line_no = self.line_no;
        Some(match parse_record(line, line_no) {
            Ok(rec) => self.process_record(rec, line_no),
            Err(e) => StreamRecord::error(line_no, e.to_string(), None, None),
        })
    }

    fn process_record(&mut self, rec: TelemetryRecord, line_no: usize) -> StreamRecord {
        let (unit, cycle) = (rec.unit_id, rec.cycle);
        let err = |m: String| StreamRecord::error(line_no, m, Some(unit), Some(cycle));
        let last = self.units.get(&unit).map_or(0, |b| b.last_cycle);
        if cycle <= last {
            return err(format!(
                "unit {unit}: cycle {cycle} arrived after cycle {last}; line skipped"
            ));
        }
        let row = match &self.model.normalization {
            Some(stats) => match stats.normalize(&rec.settings, &rec.sensors) {
                Ok(r) => r,
                Err(e) => return err(e.to_string()),
            },
            None => {
                let mut r = [0.0; N_FEATURES];
                r[..3].copy_from_slice(&rec.settings);
                r[3..].copy_from_slice(&rec.sensors);
                r
            }
        };
        let len = self.model.config.window_length;
        let buf = self.units.entry(unit).or_default();
        buf.last_cycle = cycle;
        if buf.rows.len() == len {
            buf.rows.pop_front();
        }
        buf.rows.push_back(row);
        if buf.rows.len() < len {
            return StreamRecord::Status {
                unit,
                cycle,
                status: "warmup",
            };
        }
        let window: Vec<f64> = buf.rows.iter().flatten().copied().collect();
        let mut rng = cycle_rng(self.seed, unit, cycle);
        let dist = mc_predict(
            self.params(),
            self.dropout(),
            &window,
            self.samples,
            &mut rng,
        )
        .and_then(|s| summarize(cycle, s));
        match dist {
            Ok(d) => StreamRecord::Prediction {
                unit,
                cycle,
                p10: d.p10,
                p25: d.p25,
                p50: d.p50,
                p75: d.p75,
                p90: d.p90,
            },
            Err(e) => err(e.to_string()),
        }
    }
}

/// Reads telemetry lines from `input` and writes one JSON object per line
/// to `output`, flushing after each record.
pub fn stream_predict(
    model: &SavedModel,
    input: impl BufRead,
    mut output: impl Write,
    samples: usize,
    seed: u64,
) -> Result<StreamSummary, PredictError> {
    let mut streamer = Streamer::new(model, samples, seed)?;
    let mut summary = StreamSummary::default();
    for line in input.lines() {
        let line = line?;
        summary.lines += 1;
        let Some(record) = streamer.process_line(&line) else {
            continue;
        };
        match record {
            StreamRecord::Prediction { .. } => summary.predictions += 1,
            StreamRecord::Status { .. } => summary.warmups += 1,
            StreamRecord::Error { .. } => summary.errors += 1,
        }
        serde_json::to_writer(&mut output, &record).map_err(std::io::Error::from)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(summary)
}
