//! One session's sensor data in analysis form: conversion to and from transport
//! recordings, and cutting into tag-delimited windows for feature extraction.

use std::collections::BTreeMap;

use crate::director::{Marker, MARKER_STREAM};
use crate::features::gaze::{GazeSample, GazeTrace};
use crate::features::head::HeadSample;
use crate::features::{extract, FeatureRegistry, FeatureVector, PhysioWindow, Signal};
use crate::transport::{Recording, Sample, StreamInfo, StreamKind};

pub const EDA_STREAM: &str = "eda";
pub const BREATHING_STREAM: &str = "breathing";
pub const GAZE_STREAM: &str = "gaze";
pub const HEAD_STREAM: &str = "head";
/// Ground-truth or estimated state values; channel labels are state keys.
pub const STATE_STREAM: &str = "state";

/// Off-screen gaze is sent with coordinates outside the inflated display rectangle.
pub const GAZE_OFF: f64 = -1.0;

/// A uniformly sampled signal anchored at its first sample's time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedSignal {
    pub t0: f64,
    pub fs: f64,
    pub values: Vec<f64>,
}

impl TimedSignal {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.fs
    }

    /// Samples with `t0 <= t < t1`.
    pub fn slice(&self, t0: f64, t1: f64) -> Signal {
        let idx = |t: f64| (((t - self.t0) * self.fs - 1e-9).ceil().max(0.0) as usize).min(self.values.len());
        let (a, b) = (idx(t0), idx(t1));
        Signal {
            fs: self.fs,
            values: self.values[a..b.max(a)].to_vec(),
        }
    }
}

/// A TAG_START … TAG_STOP span with the labels announced inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct TagWindow {
    pub tag: String,
    pub span: (f64, f64),
    /// construct → class
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorData {
    pub subject: Option<String>,
    pub eda: Option<TimedSignal>,
    pub breathing: Option<TimedSignal>,
    pub gaze: Vec<GazeSample>,
    pub head: Vec<HeadSample>,
    /// State channels by key, as `(t, value)`.
    pub state: BTreeMap<String, Vec<(f64, f64)>>,
    pub markers: Vec<(f64, Marker)>,
}

fn uniform(rec: &Recording, stream: usize) -> Option<TimedSignal> {
    let info = &rec.streams[stream];
    let mut it = rec.samples_of(stream).peekable();
    let t0 = it.peek()?.t;
    Some(TimedSignal {
        t0,
        fs: info.nominal_rate,
        values: it.filter_map(|s| s.as_values().map(|v| v[0])).collect(),
    })
}

impl SensorData {
    /// Interpret a recording by stream name. Unknown streams are ignored.
    pub fn from_recording(rec: &Recording) -> SensorData {
        let mut data = SensorData::default();
        for (k, info) in rec.streams.iter().enumerate() {
            match (info.name.as_str(), info.kind) {
                (EDA_STREAM, StreamKind::Signal) if info.nominal_rate > 0.0 => data.eda = uniform(rec, k),
                (BREATHING_STREAM, StreamKind::Signal) if info.nominal_rate > 0.0 => data.breathing = uniform(rec, k),
                (GAZE_STREAM, StreamKind::Signal) if info.channel_count >= 3 => {
                    data.gaze = rec
                        .samples_of(k)
                        .filter_map(|s| s.as_values().map(|v| GazeSample::from_raw(s.t, v[0], v[1], v[2])))
                        .collect();
                }
                (HEAD_STREAM, StreamKind::Signal) if info.channel_count == 4 => {
                    data.head = rec
                        .samples_of(k)
                        .filter_map(|s| {
                            s.as_values().map(|v| HeadSample {
                                t: s.t,
                                q: [v[0], v[1], v[2], v[3]],
                            })
                        })
                        .collect();
                }
                (STATE_STREAM, StreamKind::Signal) => {
                    for s in rec.samples_of(k) {
                        if let Some(v) = s.as_values() {
                            for (label, &x) in info.channel_labels.iter().zip(v) {
                                data.state.entry(label.clone()).or_default().push((s.t, x));
                            }
                        }
                    }
                }
                (_, StreamKind::Marker) => {
                    for s in rec.samples_of(k) {
                        if let Some(m) = s.as_marker() {
                            let marker: Marker = m.parse().expect("marker parsing is infallible");
                            if let Marker::Other(o) = &marker {
                                if let Some(id) = o.strip_prefix("SUBJECT:") {
                                    data.subject.get_or_insert_with(|| id.to_string());
                                }
                            }
                            data.markers.push((s.t, marker));
                        }
                    }
                }
                _ => {}
            }
        }
        data.markers.sort_by(|a, b| a.0.total_cmp(&b.0));
        data
    }

    /// Stream descriptions this data maps to, with source ids prefixed by `source`.
    pub fn stream_infos(&self, source: &str) -> Vec<StreamInfo> {
        let mut out = Vec::new();
        if let Some(s) = &self.eda {
            out.push(StreamInfo::signal(EDA_STREAM, &format!("{source}-eda"), &["eda_us"], s.fs));
        }
        if let Some(s) = &self.breathing {
            out.push(StreamInfo::signal(BREATHING_STREAM, &format!("{source}-breathing"), &["resp"], s.fs));
        }
        if !self.gaze.is_empty() {
            out.push(StreamInfo::signal(GAZE_STREAM, &format!("{source}-gaze"), &["x", "y", "pupil"], nominal(&self.gaze.iter().map(|g| g.t).collect::<Vec<_>>())));
        }
        if !self.head.is_empty() {
            out.push(StreamInfo::signal(HEAD_STREAM, &format!("{source}-head"), &["w", "x", "y", "z"], nominal(&self.head.iter().map(|h| h.t).collect::<Vec<_>>())));
        }
        if !self.state.is_empty() {
            let keys: Vec<&str> = self.state.keys().map(String::as_str).collect();
            let times: Vec<f64> = self.state.values().next().map(|v| v.iter().map(|p| p.0).collect()).unwrap_or_default();
            out.push(StreamInfo::signal(STATE_STREAM, &format!("{source}-state"), &keys, nominal(&times)));
        }
        out.push(StreamInfo::marker(MARKER_STREAM, &format!("{source}-markers")));
        out
    }

    /// Build a recording; samples are interleaved by timestamp (markers first on ties).
    pub fn to_recording(&self, source: &str, session_start: f64) -> Recording {
        let streams = self.stream_infos(source);
        let index = |name: &str| streams.iter().position(|s| s.name == name);
        let mut samples: Vec<(usize, Sample)> = Vec::new();
        if let Some(k) = index(MARKER_STREAM) {
            samples.extend(self.markers.iter().map(|(t, m)| (k, Sample::marker(*t, m.label()))));
        }
        for (name, sig) in [(EDA_STREAM, &self.eda), (BREATHING_STREAM, &self.breathing)] {
            if let (Some(k), Some(s)) = (index(name), sig) {
                samples.extend(s.values.iter().enumerate().map(|(i, &v)| (k, Sample::values(s.time(i), vec![v]))));
            }
        }
        if let Some(k) = index(GAZE_STREAM) {
            samples.extend(self.gaze.iter().map(|g| {
                let v = match g.pos {
                    Some([x, y]) => vec![x, y, g.pupil.unwrap_or(0.0)],
                    None => vec![GAZE_OFF, GAZE_OFF, 0.0],
                };
                (k, Sample::values(g.t, v))
            }));
        }
        if let Some(k) = index(HEAD_STREAM) {
            samples.extend(self.head.iter().map(|h| (k, Sample::values(h.t, h.q.to_vec()))));
        }
        if let Some(k) = index(STATE_STREAM) {
            let cols: Vec<&Vec<(f64, f64)>> = self.state.values().collect();
            for i in 0..cols[0].len() {
                samples.push((k, Sample::values(cols[0][i].0, cols.iter().map(|c| c[i].1).collect())));
            }
        }
        let marker_stream = index(MARKER_STREAM);
        samples.sort_by(|a, b| {
            a.1.t
                .total_cmp(&b.1.t)
                .then_with(|| (Some(a.0) != marker_stream).cmp(&(Some(b.0) != marker_stream)))
        });
        Recording {
            session_start,
            streams,
            samples,
        }
    }

    /// Balanced TAG_START/TAG_STOP spans in closing order. Unmatched markers are skipped.
    pub fn tag_windows(&self) -> Vec<TagWindow> {
        let mut open: Vec<(String, f64, BTreeMap<String, String>)> = Vec::new();
        let mut out = Vec::new();
        for (t, m) in &self.markers {
            match m {
                Marker::TagStart(tag) => open.push((tag.clone(), *t, BTreeMap::new())),
                Marker::TagStop(tag) => {
                    if let Some(pos) = open.iter().rposition(|o| &o.0 == tag) {
                        let (tag, t0, labels) = open.remove(pos);
                        out.push(TagWindow {
                            tag,
                            span: (t0, *t),
                            labels,
                        });
                    }
                }
                Marker::Label { construct, class } => {
                    for o in &mut open {
                        o.2.insert(construct.clone(), class.clone());
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn window(&self, span: (f64, f64)) -> PhysioWindow {
        let (t0, t1) = span;
        let gaze: Vec<GazeSample> = self.gaze.iter().filter(|g| g.t >= t0 && g.t < t1).cloned().collect();
        let head: Vec<HeadSample> = self.head.iter().filter(|h| h.t >= t0 && h.t < t1).copied().collect();
        PhysioWindow {
            eda: self.eda.as_ref().map(|s| s.slice(t0, t1)),
            breathing: self.breathing.as_ref().map(|s| s.slice(t0, t1)),
            gaze: (!gaze.is_empty()).then(|| GazeTrace::new(gaze)),
            head: (!head.is_empty()).then_some(head),
            span,
        }
    }

    /// One feature row per tag window. The row label is the window's first class label.
    pub fn feature_rows(&self, registry: &FeatureRegistry, subject: &str) -> Vec<(TagWindow, FeatureVector)> {
        self.tag_windows()
            .into_iter()
            .map(|w| {
                let label = w.labels.values().next().cloned();
                let fv = extract(&self.window(w.span), registry, subject, label.as_deref());
                (w, fv)
            })
            .collect()
    }
}

/// Rate implied by the median sample interval; 0 if irregular or too short.
fn nominal(times: &[f64]) -> f64 {
    let mut d: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let rate = 1.0 / d[d.len() / 2];
    (rate * 1e6).round() / 1e6
}
