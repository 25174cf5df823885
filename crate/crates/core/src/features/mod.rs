//! Feature extraction from windowed physiological streams.

pub mod breathing;
pub mod dsp;
pub mod eda;
pub mod gaze;
pub mod head;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use breathing::{breathing_features, BreathingFeatures};
pub use eda::{eda_features, EdaFeatures};
pub use gaze::{GazeSample, GazeTrace};
pub use head::{head_motion, HeadSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("{signal} window too short: need {need_s} s, got {got_s:.2} s")]
    TooShort {
        signal: &'static str,
        need_s: f64,
        got_s: f64,
    },
    #[error("{signal}: need at least {need} samples, got {got}")]
    TooFewSamples {
        signal: &'static str,
        need: usize,
        got: usize,
    },
    #[error("head sample {index} is not a unit quaternion (norm {norm})")]
    NonUnitQuaternion { index: usize, norm: f64 },
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("feature table header is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: bad number `{value}` in column `{column}`")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
}

/// Uniformly sampled single-channel signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub fs: f64,
    pub values: Vec<f64>,
}

/// Everything recorded during one reading window. Absent sensors are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhysioWindow {
    pub eda: Option<Signal>,
    pub breathing: Option<Signal>,
    pub gaze: Option<GazeTrace>,
    pub head: Option<Vec<HeadSample>>,
    pub span: (f64, f64),
}

pub const DEFAULT_FEATURES: [&str; 22] = [
    "n_blinks",
    "mean_blink_dur",
    "mind_wandering_total",
    "n_fixations",
    "mean_fixation_dur",
    "n_saccades",
    "mean_saccade_len",
    "mean_saccade_angle",
    "n_split_saccades",
    "mean_split_saccade_len",
    "pupil_mean",
    "pupil_sd",
    "head_travel",
    "head_mean_speed",
    "eda_n_peaks",
    "eda_mean_peak_amp",
    "eda_mean_smna",
    "breath_rate",
    "breath_rmssd",
    "breath_rate_int",
    "breath_rmssd_int",
    "reading_duration",
];

/// Ordered list of feature names. Names the extractor does not know are always missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    pub names: Vec<String>,
}

impl Default for FeatureRegistry {
    fn default() -> Self {
        FeatureRegistry {
            names: DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FeatureRegistry {
    pub fn new(names: Vec<String>) -> Self {
        FeatureRegistry { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// One entry per registry name; `None` marks a missing value.
    pub values: Vec<Option<f64>>,
    pub subject: String,
    pub label: Option<String>,
    pub span: (f64, f64),
}

impl FeatureVector {
    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

fn count(n: usize) -> Option<f64> {
    Some(n as f64)
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Every known feature of a window, by name.
pub fn compute_all(window: &PhysioWindow) -> Vec<(&'static str, Option<f64>)> {
    let mut out: Vec<(&'static str, Option<f64>)> = Vec::with_capacity(22);
    if let Some(g) = window.gaze.as_ref().filter(|g| !g.samples.is_empty()) {
        let blinks = g.blinks();
        out.push(("n_blinks", count(blinks.n_blinks)));
        out.push(("mean_blink_dur", blinks.mean_duration));
        out.push(("mind_wandering_total", Some(g.mind_wandering())));
        let on = g.samples.iter().filter(|s| s.on_screen()).count();
        if on >= 2 {
            let m = g.eye_movements();
            out.push(("n_fixations", count(m.fixations.len())));
            out.push(("mean_fixation_dur", mean_of(m.fixations.iter().map(|f| f.duration()))));
            out.push(("n_saccades", count(m.saccades.len())));
            out.push(("mean_saccade_len", mean_of(m.saccades.iter().map(|s| s.length))));
            out.push(("mean_saccade_angle", mean_of(m.saccades.iter().map(|s| s.angle_deg))));
            out.push(("n_split_saccades", count(m.split_lengths.len())));
            out.push(("mean_split_saccade_len", mean_of(m.split_lengths.iter().copied())));
        }
        if let Some((m, sd)) = g.pupil_stats() {
            out.push(("pupil_mean", Some(m)));
            out.push(("pupil_sd", Some(sd)));
        }
    }
    if let Some(Ok((travel, speed))) = window.head.as_ref().map(|h| head_motion(h)) {
        out.push(("head_travel", Some(travel)));
        out.push(("head_mean_speed", Some(speed)));
    }
    if let Some(Ok(e)) = window.eda.as_ref().map(|s| eda_features(&s.values, s.fs)) {
        out.push(("eda_n_peaks", count(e.n_peaks)));
        out.push(("eda_mean_peak_amp", e.mean_peak_amp));
        out.push(("eda_mean_smna", Some(e.mean_smna)));
    }
    if let Some(Ok(b)) = window.breathing.as_ref().map(|s| breathing_features(&s.values, s.fs)) {
        out.push(("breath_rate", b.rate_bpm));
        out.push(("breath_rmssd", b.rmssd));
        out.push(("breath_rate_int", b.rate_bpm_integrated));
        out.push(("breath_rmssd_int", b.rmssd_integrated));
    }
    out.push(("reading_duration", Some(window.span.1 - window.span.0)));
    out
}

/// Extract the registry's features. Partial sensor absence yields missing entries, never an error.
pub fn extract(
    window: &PhysioWindow,
    registry: &FeatureRegistry,
    subject: &str,
    label: Option<&str>,
) -> FeatureVector {
    let all = compute_all(window);
    let values = registry
        .names
        .iter()
        .map(|name| {
            all.iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, v)| *v)
                .filter(|v| v.is_finite())
        })
        .collect();
    FeatureVector {
        values,
        subject: subject.to_string(),
        label: label.map(str::to_string),
        span: window.span,
    }
}

/// Feature vectors sharing one registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub registry: FeatureRegistry,
    pub rows: Vec<FeatureVector>,
}

const META_COLUMNS: [&str; 4] = ["subject", "label", "t0", "t1"];

impl FeatureTable {
    pub fn new(registry: FeatureRegistry) -> Self {
        FeatureTable {
            registry,
            rows: Vec::new(),
        }
    }

    /// CSV with the registry columns followed by subject, label, t0, t1. Missing cells are empty.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), TableError> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<&str> = self
            .registry
            .names
            .iter()
            .map(String::as_str)
            .chain(META_COLUMNS)
            .collect();
        out.write_record(&header)?;
        for row in &self.rows {
            let mut rec: Vec<String> = row
                .values
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            rec.push(row.subject.clone());
            rec.push(row.label.clone().unwrap_or_default());
            rec.push(row.span.0.to_string());
            rec.push(row.span.1.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(r: R) -> Result<Self, TableError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let col = |name: &'static str| header.iter().position(|h| h == name).ok_or(TableError::MissingColumn(name));
        let (cs, cl, c0, c1) = (col("subject")?, col("label")?, col("t0")?, col("t1")?);
        let feature_cols: Vec<usize> = (0..header.len())
            .filter(|i| ![cs, cl, c0, c1].contains(i))
            .collect();
        let registry = FeatureRegistry::new(feature_cols.iter().map(|&i| header[i].to_string()).collect());
        let mut rows = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<Option<f64>, TableError> {
                let cell = rec.get(i).unwrap_or("").trim();
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse().map(Some).map_err(|_| TableError::BadNumber {
                    row: row + 1,
                    column: header[i].to_string(),
                    value: cell.to_string(),
                })
            };
            let values = feature_cols.iter().map(|&i| num(i)).collect::<Result<_, _>>()?;
            let label = rec.get(cl).unwrap_or("").to_string();
            rows.push(FeatureVector {
                values,
                subject: rec.get(cs).unwrap_or("").to_string(),
                label: (!label.is_empty()).then_some(label),
                span: (num(c0)?.unwrap_or(0.0), num(c1)?.unwrap_or(0.0)),
            });
        }
        Ok(FeatureTable { registry, rows })
    }
}
