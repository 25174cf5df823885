//! Synthetic physiology with known ground truth.
//!
//! A [`SubjectProfile`] fixes baselines, noise scales and response gains; a
//! [`Scenario`] is a contiguous timeline of segments with ground-truth arousal,
//! valence and difficulty. [`generate`] turns both into [`SensorData`] whose
//! marker stream carries the truth as `LABEL:` markers.

mod generator;
pub mod live;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generator::{scr_shape, Chunk, Generator, GAZE_FS, HEAD_FS, PHYSIO_FS, SCR_REFRACTORY_S};

use crate::classify::{Class, Construct};
use crate::director::Marker;
use crate::features::gaze::GazeSample;
use crate::features::head::HeadSample;
use crate::features::{FeatureRegistry, FeatureTable};
use crate::sensors::{SensorData, TimedSignal};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid profile {id}: {reason}")]
    Profile { id: String, reason: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("a cohort needs at least 3 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("separability must be in [0, 1], got {0}")]
    Separability(f64),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ground-truth reader state, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub arousal: f64,
    pub valence: f64,
    pub difficulty: f64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        GroundTruth {
            arousal: 0.5,
            valence: 0.5,
            difficulty: 0.5,
        }
    }
}

impl GroundTruth {
    pub const KEYS: [&'static str; 3] = ["arousal", "valence", "difficulty"];

    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "arousal" => Some(self.arousal),
            "valence" => Some(self.valence),
            "difficulty" => Some(self.difficulty),
            _ => None,
        }
    }

    /// Set one dimension, clamped to [0, 1]. Returns false for unknown keys or non-finite values.
    pub fn set(&mut self, key: &str, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        let v = value.clamp(0.0, 1.0);
        match key {
            "arousal" => self.arousal = v,
            "valence" => self.valence = v,
            "difficulty" => self.difficulty = v,
            _ => return false,
        }
        true
    }

    /// Pull every dimension toward 0.5: `0.5 + s·(v − 0.5)`.
    pub fn scaled(&self, s: f64) -> GroundTruth {
        let f = |v: f64| 0.5 + s * (v - 0.5);
        GroundTruth {
            arousal: f(self.arousal),
            valence: f(self.valence),
            difficulty: f(self.difficulty),
        }
    }

    fn is_valid(&self) -> bool {
        [self.arousal, self.valence, self.difficulty]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

/// Resting levels of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub breath_rate_bpm: f64,
    pub breath_amplitude: f64,
    pub eda_tonic_us: f64,
    pub scr_amplitude_us: f64,
    pub scr_rate_per_min: f64,
    pub pupil: f64,
    pub blinks_per_min: f64,
    pub wander_per_min: f64,
    pub fixation_s: f64,
    pub saccade_len: f64,
    pub head_speed_deg_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    /// SD of the slow breathing-rate wander.
    pub breath_rate_sd_bpm: f64,
    /// Pink-noise level relative to the breathing amplitude.
    pub breath_noise: f64,
    /// Tonic random-walk scale, µS/√s.
    pub tonic_drift_us: f64,
    pub scr_amplitude_cv: f64,
    pub eda_noise_us: f64,
    pub pupil_sd: f64,
    pub saccade_cv: f64,
    pub fixation_cv: f64,
    pub fixation_jitter: f64,
}

/// Response gains. Rate-like gains are absolute per unit of the construct; the
/// others are relative changes per unit deviation from 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// bpm per unit valence.
    pub breath_rate_bpm: f64,
    /// SCRs per minute per unit arousal.
    pub scr_rate_per_min: f64,
    pub scr_amplitude: f64,
    pub pupil: f64,
    /// Look-away episodes per minute per unit difficulty.
    pub wander_per_min: f64,
    pub fixation: f64,
    /// Negative: harder text, shorter saccades.
    pub saccade_len: f64,
    pub head_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub id: String,
    pub seed: u64,
    pub baseline: Baseline,
    pub noise: Noise,
    pub gains: Gains,
}

impl SubjectProfile {
    /// A middle-of-the-road subject.
    pub fn typical(id: &str, seed: u64) -> Self {
        SubjectProfile {
            id: id.to_string(),
            seed,
            baseline: Baseline {
                breath_rate_bpm: 14.0,
                breath_amplitude: 1.0,
                eda_tonic_us: 5.0,
                scr_amplitude_us: 0.3,
                scr_rate_per_min: 3.0,
                pupil: 3.5,
                blinks_per_min: 15.0,
                wander_per_min: 1.0,
                fixation_s: 0.25,
                saccade_len: 0.08,
                head_speed_deg_s: 5.0,
            },
            noise: Noise {
                breath_rate_sd_bpm: 0.3,
                breath_noise: 0.1,
                tonic_drift_us: 0.002,
                scr_amplitude_cv: 0.2,
                eda_noise_us: 0.002,
                pupil_sd: 0.05,
                saccade_cv: 0.2,
                fixation_cv: 0.25,
                fixation_jitter: 0.002,
            },
            gains: Gains {
                breath_rate_bpm: 6.0,
                scr_rate_per_min: 8.0,
                scr_amplitude: 1.0,
                pupil: 0.2,
                wander_per_min: 3.0,
                fixation: 1.0,
                saccade_len: -0.8,
                head_speed: 1.0,
            },
        }
    }

    /// A subject with randomized baselines and mildly randomized gains, drawn from `seed`.
    pub fn random(id: &str, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(99);
        let mut p = SubjectProfile::typical(id, seed);
        let b = &mut p.baseline;
        b.breath_rate_bpm = rng.random_range(12.0..16.0);
        b.breath_amplitude = rng.random_range(0.5..2.0);
        b.eda_tonic_us = rng.random_range(2.0..12.0);
        b.scr_amplitude_us = rng.random_range(0.2..0.5);
        b.scr_rate_per_min = rng.random_range(2.0..4.0);
        b.pupil = rng.random_range(3.0..4.5);
        b.blinks_per_min = rng.random_range(10.0..20.0);
        b.wander_per_min = rng.random_range(0.5..1.5);
        b.fixation_s = rng.random_range(0.2..0.3);
        b.saccade_len = rng.random_range(0.06..0.1);
        b.head_speed_deg_s = rng.random_range(3.0..8.0);
        let g = &mut p.gains;
        for v in [
            &mut g.breath_rate_bpm,
            &mut g.scr_rate_per_min,
            &mut g.scr_amplitude,
            &mut g.pupil,
            &mut g.wander_per_min,
            &mut g.fixation,
            &mut g.saccade_len,
            &mut g.head_speed,
        ] {
            *v *= rng.random_range(0.8..1.2);
        }
        p
    }

    /// SCR hazard (per second, before the refractory period) at `arousal`.
    pub fn scr_rate_per_s(&self, arousal: f64) -> f64 {
        (self.baseline.scr_rate_per_min + self.gains.scr_rate_per_min * arousal).max(0.0) / 60.0
    }

    /// Multiply every level/amplitude baseline by `factor` (timing baselines are untouched).
    pub fn with_level_shift(mut self, factor: f64) -> Self {
        let b = &mut self.baseline;
        b.breath_amplitude *= factor;
        b.eda_tonic_us *= factor;
        b.scr_amplitude_us *= factor;
        b.pupil *= factor;
        b.head_speed_deg_s *= factor;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| {
            Err(SimError::Profile {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        let n = &self.noise;
        let noise = [
            n.breath_rate_sd_bpm,
            n.breath_noise,
            n.tonic_drift_us,
            n.scr_amplitude_cv,
            n.eda_noise_us,
            n.pupil_sd,
            n.saccade_cv,
            n.fixation_cv,
            n.fixation_jitter,
        ];
        if noise.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise scales must be finite and >= 0");
        }
        let b = &self.baseline;
        let positive = [
            b.breath_rate_bpm,
            b.breath_amplitude,
            b.eda_tonic_us,
            b.scr_amplitude_us,
            b.pupil,
            b.fixation_s,
            b.saccade_len,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("baselines must be finite and > 0");
        }
        let rest = [b.scr_rate_per_min, b.blinks_per_min, b.wander_per_min, b.head_speed_deg_s];
        if rest.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("rates must be finite and >= 0");
        }
        // expected SCR count must not fall with arousal
        if !(self.gains.scr_rate_per_min.is_finite() && self.gains.scr_rate_per_min >= 0.0) {
            return bad("scr rate gain must be >= 0");
        }
        Ok(())
    }
}

/// Expected number of SCR onsets in `duration` seconds at constant `arousal`
/// (Poisson hazard thinned by the refractory period).
pub fn expected_scr_count(profile: &SubjectProfile, arousal: f64, duration: f64) -> f64 {
    let l = profile.scr_rate_per_s(arousal);
    l / (1.0 + l * SCR_REFRACTORY_S) * duration
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    #[serde(default)]
    pub truth: GroundTruth,
    /// Emits `STORY:<id>` at the segment start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story: Option<String>,
    /// Wraps the segment in `TAG_START`/`TAG_STOP`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    /// construct → class, emitted as `LABEL:` markers after the tag opens.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
    /// Evenly spaced `PAGE:<k>` markers.
    #[serde(default)]
    pub pages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub segments: Vec<Segment>,
}

/// Stories of the built-in scenario: (story, construct, class, truth value).
pub const PAIRED_STORIES: [(&str, &str, &str, f64); 6] = [
    ("bunny", "arousal", "boring", 0.1),
    ("police", "arousal", "exciting", 0.9),
    ("happy", "valence", "happy", 0.9),
    ("sad", "valence", "sad", 0.1),
    ("spectrometer", "difficulty", "complicated", 0.9),
    ("coffee", "difficulty", "simple", 0.1),
];

impl Scenario {
    /// Three contrasting pairs of 70 s, four-page stories.
    pub fn story_pairs() -> Scenario {
        let segments = PAIRED_STORIES
            .iter()
            .map(|&(story, construct, class, v)| {
                let mut truth = GroundTruth::default();
                truth.set(construct, v);
                Segment {
                    duration: 70.0,
                    truth,
                    story: Some(story.to_string()),
                    tag: Some(story.to_uppercase()),
                    labels: BTreeMap::from([(construct.to_string(), class.to_string())]),
                    pages: 4,
                }
            })
            .collect();
        Scenario {
            name: "story_pairs".into(),
            segments,
        }
    }

    /// Built-in scenarios by name.
    pub fn builtin(name: &str) -> Option<Scenario> {
        match name {
            "story_pairs" => Some(Scenario::story_pairs()),
            _ => None,
        }
    }

    /// Ground truth pulled toward neutral by `separability` ∈ [0, 1]; labels are kept.
    pub fn scaled(&self, separability: f64) -> Scenario {
        let mut s = self.clone();
        for seg in &mut s.segments {
            seg.truth = seg.truth.scaled(separability);
        }
        s
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment start times, one per segment.
    pub fn starts(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let t0 = t;
                t += s.duration;
                t0
            })
            .collect()
    }

    pub fn truth_at(&self, t: f64) -> Option<GroundTruth> {
        self.starts()
            .iter()
            .zip(&self.segments)
            .find(|(t0, s)| t >= **t0 && t < **t0 + s.duration)
            .map(|(_, s)| s.truth)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.segments.is_empty() {
            return Err(SimError::Scenario("no segments".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration.is_finite() && s.duration > 0.0) {
                return Err(SimError::Scenario(format!("segment {i}: duration must be > 0")));
            }
            if !s.truth.is_valid() {
                return Err(SimError::Scenario(format!("segment {i}: ground truth outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Markers for segment `seg` starting at `t0`, in emission order.
pub fn segment_markers(seg: &Segment, t0: f64) -> Vec<(f64, Marker)> {
    let mut out = Vec::new();
    if let Some(story) = &seg.story {
        out.push((t0, Marker::Story(story.clone())));
    }
    if let Some(tag) = &seg.tag {
        out.push((t0, Marker::TagStart(tag.clone())));
    }
    for (construct, class) in &seg.labels {
        out.push((
            t0,
            Marker::Label {
                construct: construct.clone(),
                class: class.clone(),
            },
        ));
    }
    for k in 0..seg.pages {
        out.push((t0 + seg.duration * k as f64 / seg.pages as f64, Marker::Page(k)));
    }
    out
}

/// Simulate one subject reading through `scenario`.
pub fn generate(profile: &SubjectProfile, scenario: &Scenario) -> Result<SensorData, SimError> {
    profile.validate()?;
    scenario.validate()?;
    let mut gen = Generator::new(profile);
    let mut markers = vec![(0.0, Marker::Other(format!("SUBJECT:{}", profile.id)))];
    let (mut eda, mut breathing) = (Vec::new(), Vec::new());
    let (mut gaze, mut head): (Vec<GazeSample>, Vec<HeadSample>) = (Vec::new(), Vec::new());
    let mut t0 = 0.0;
    for seg in &scenario.segments {
        markers.extend(segment_markers(seg, t0));
        let t1 = t0 + seg.duration;
        let chunk = gen.advance(t1, &seg.truth);
        eda.extend(chunk.eda);
        breathing.extend(chunk.breathing);
        gaze.extend(chunk.gaze);
        head.extend(chunk.head);
        if let Some(tag) = &seg.tag {
            markers.push((t1, Marker::TagStop(tag.clone())));
        }
        t0 = t1;
    }
    let signal = |values| TimedSignal {
        t0: 0.0,
        fs: PHYSIO_FS,
        values,
    };
    Ok(SensorData {
        subject: Some(profile.id.clone()),
        eda: Some(signal(eda)),
        breathing: Some(signal(breathing)),
        gaze,
        head,
        state: BTreeMap::new(),
        markers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortOptions {
    pub n_subjects: usize,
    pub separability: f64,
    /// Each subject's level baselines are multiplied by `1 ± baseline_shift` (sign drawn per subject).
    pub baseline_shift: f64,
    pub seed: u64,
    pub registry: FeatureRegistry,
}

impl Default for CohortOptions {
    fn default() -> Self {
        CohortOptions {
            n_subjects: 14,
            separability: 1.0,
            baseline_shift: 0.0,
            seed: 1,
            registry: FeatureRegistry::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub profiles: Vec<SubjectProfile>,
    /// One row per tag window and subject, labelled with the window's class.
    pub table: FeatureTable,
}

pub fn cohort_profiles(opts: &CohortOptions) -> Vec<SubjectProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.n_subjects)
        .map(|i| {
            let seed: u64 = rng.random();
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            SubjectProfile::random(&format!("S{:02}", i + 1), seed).with_level_shift(1.0 + sign * opts.baseline_shift)
        })
        .collect()
}

/// Simulate a cohort and extract one feature row per tag window.
pub fn make_cohort_with(scenario: &Scenario, opts: &CohortOptions) -> Result<Cohort, SimError> {
    if opts.n_subjects < 3 {
        return Err(SimError::TooFewSubjects(opts.n_subjects));
    }
    if !(0.0..=1.0).contains(&opts.separability) {
        return Err(SimError::Separability(opts.separability));
    }
    scenario.validate()?;
    let scenario = scenario.scaled(opts.separability);
    let profiles = cohort_profiles(opts);
    let rows = profiles
        .par_iter()
        .map(|p| {
            let data = generate(p, &scenario)?;
            Ok(data
                .feature_rows(&opts.registry, &p.id)
                .into_iter()
                .map(|(_, fv)| fv)
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let mut table = FeatureTable::new(opts.registry.clone());
    table.rows = rows.into_iter().flatten().collect();
    Ok(Cohort { profiles, table })
}

pub fn make_cohort(n_subjects: usize, scenario: &Scenario, separability: f64) -> Result<Cohort, SimError> {
    make_cohort_with(
        scenario,
        &CohortOptions {
            n_subjects,
            separability,
            ..Default::default()
        },
    )
}

/// Features the generator ties to a construct, with the class in which each is higher.
pub fn planted_associations(construct: &Construct) -> Vec<(&'static str, Class)> {
    let (higher_a, higher_b): (&[&'static str], &[&'static str]) = match construct.name.as_str() {
        // exciting (B) raises SCR rate/amplitude and pupil size
        "arousal" => (&[], &["eda_n_peaks", "eda_mean_smna", "eda_mean_peak_amp", "pupil_mean"]),
        // happy (A) breathes faster and moves more
        "valence" => (&["breath_rate", "breath_rate_int", "head_travel", "head_mean_speed"], &[]),
        // complicated (A) holds fixations and looks away; simple (B) reads in more, longer
        // jumps. Longer jumps reach the line end sooner, so return sweeps (~176°) make up a
        // larger share of saccades and the mean angle rises with them.
        "difficulty" => (
            &["mean_fixation_dur", "mind_wandering_total"],
            &[
                "n_fixations",
                "n_saccades",
                "mean_saccade_len",
                "mean_saccade_angle",
                "n_split_saccades",
                "mean_split_saccade_len",
            ],
        ),
        _ => (&[], &[]),
    };
    higher_a
        .iter()
        .map(|&f| (f, Class::A))
        .chain(higher_b.iter().map(|&f| (f, Class::B)))
        .collect()
}
