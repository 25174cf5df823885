//! Turns streamed physiology into construct intensities with trained models.
//!
//! Evaluation is driven by sample timestamps, not by the wall clock: the same
//! samples in the same order always yield the same updates.

use std::collections::VecDeque;

use crate::classify::{Class, Construct, PipelineModel, RankStrategy};
use crate::director::StateUpdate;
use crate::features::gaze::{GazeSample, GazeTrace};
use crate::features::head::HeadSample;
use crate::features::{extract, PhysioWindow, Signal};
use crate::sensors::{BREATHING_STREAM, EDA_STREAM, GAZE_STREAM, HEAD_STREAM};
use crate::transport::{Sample, StreamInfo};

/// The class whose probability is reported as the construct's intensity.
pub fn high_pole(construct: &Construct) -> Class {
    let high = match construct.name.as_str() {
        "arousal" => "exciting",
        "difficulty" => "complicated",
        "valence" => "happy",
        _ => return Class::A,
    };
    construct.class_of(high).unwrap_or(Class::A)
}

#[derive(Debug, Clone)]
pub struct ConstructModel {
    /// State key, e.g. `arousal`.
    pub key: String,
    pub model: PipelineModel,
    pub high: Class,
}

impl ConstructModel {
    pub fn new(model: PipelineModel) -> Self {
        ConstructModel {
            key: model.construct.name.clone(),
            high: high_pole(&model.construct),
            model,
        }
    }
}

#[derive(Debug, Default)]
struct Buffers {
    eda: VecDeque<(f64, f64)>,
    eda_fs: f64,
    breathing: VecDeque<(f64, f64)>,
    breathing_fs: f64,
    gaze: VecDeque<GazeSample>,
    head: VecDeque<HeadSample>,
}

fn uniform(buf: &VecDeque<(f64, f64)>, fs: f64, t0: f64, t1: f64) -> Option<Signal> {
    let values: Vec<f64> = buf.iter().filter(|(t, _)| *t >= t0 && *t < t1).map(|p| p.1).collect();
    (!values.is_empty() && fs > 0.0).then_some(Signal { fs, values })
}

pub struct Estimator {
    models: Vec<ConstructModel>,
    window_s: f64,
    cadence_s: f64,
    next_tick: Option<f64>,
    buf: Buffers,
}

impl Estimator {
    pub fn new(models: Vec<ConstructModel>, window_s: f64, cadence_s: f64) -> Self {
        Estimator {
            models,
            window_s,
            cadence_s,
            next_tick: None,
            buf: Buffers::default(),
        }
    }

    pub fn models(&self) -> &[ConstructModel] {
        &self.models
    }

    /// Buffer one sample; returns the updates of every evaluation it completes.
    pub fn push(&mut self, info: &StreamInfo, sample: &Sample) -> Vec<StateUpdate> {
        let Some(v) = sample.as_values() else {
            return Vec::new();
        };
        let t = sample.t;
        match info.name.as_str() {
            EDA_STREAM => {
                self.buf.eda_fs = info.nominal_rate;
                self.buf.eda.push_back((t, v[0]));
            }
            BREATHING_STREAM => {
                self.buf.breathing_fs = info.nominal_rate;
                self.buf.breathing.push_back((t, v[0]));
            }
            GAZE_STREAM if v.len() >= 3 => self.buf.gaze.push_back(GazeSample::from_raw(t, v[0], v[1], v[2])),
            HEAD_STREAM if v.len() == 4 => self.buf.head.push_back(HeadSample {
                t,
                q: [v[0], v[1], v[2], v[3]],
            }),
            _ => return Vec::new(),
        }
        let mut out = Vec::new();
        let tick = *self.next_tick.get_or_insert(t + self.cadence_s);
        if t >= tick {
            let mut tick = tick;
            while t >= tick {
                out.extend(self.evaluate(tick));
                tick += self.cadence_s;
            }
            self.next_tick = Some(tick);
            self.prune(tick - self.window_s);
        }
        out
    }

    fn prune(&mut self, keep_from: f64) {
        let b = &mut self.buf;
        while b.eda.front().is_some_and(|s| s.0 < keep_from) {
            b.eda.pop_front();
        }
        while b.breathing.front().is_some_and(|s| s.0 < keep_from) {
            b.breathing.pop_front();
        }
        while b.gaze.front().is_some_and(|s| s.t < keep_from) {
            b.gaze.pop_front();
        }
        while b.head.front().is_some_and(|s| s.t < keep_from) {
            b.head.pop_front();
        }
    }

    /// The window ending at `t1`.
    pub fn window(&self, t1: f64) -> PhysioWindow {
        let t0 = t1 - self.window_s;
        let b = &self.buf;
        let gaze: Vec<GazeSample> = b.gaze.iter().filter(|s| s.t >= t0 && s.t < t1).copied().collect();
        let head: Vec<HeadSample> = b.head.iter().filter(|s| s.t >= t0 && s.t < t1).copied().collect();
        PhysioWindow {
            eda: uniform(&b.eda, b.eda_fs, t0, t1),
            breathing: uniform(&b.breathing, b.breathing_fs, t0, t1),
            gaze: (!gaze.is_empty()).then(|| GazeTrace::new(gaze)),
            head: (!head.is_empty()).then_some(head),
            span: (t0, t1),
        }
    }

    fn evaluate(&self, t1: f64) -> Option<StateUpdate> {
        if self.models.is_empty() {
            return None;
        }
        let window = self.window(t1);
        let values: Vec<(String, f64)> = self
            .models
            .iter()
            .filter_map(|m| {
                let fv = extract(&window, &m.model.registry, "live", None);
                let p = m.model.predict(&fv, &[], RankStrategy::PopulationQuantile).ok()?;
                let v = if m.high == Class::A { p.posterior_a } else { 1.0 - p.posterior_a };
                Some((m.key.clone(), v))
            })
            .collect();
        (!values.is_empty()).then(|| StateUpdate::new(t1, "models", values))
    }
}
