//! Oracles and fixtures shared by the integration tests. Each test binary uses a
//! different subset.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::thread;

use pif::classify::{Class, Construct, Dataset, Observation};
use pif::director::{merge, replay, DirectorConfig, Marker, StateUpdate};
use pif::features::eda::{self, scr_kernel_peak};
use pif::features::FeatureRegistry;
use pif::story::{lint, parse, Diagnostic, StorySource};
use pif::transport::recording::record_to;
use pif::transport::{Recording, Registry, Replay, Sample, Speed, StreamInfo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FS: f64 = 512.0;

// ---- stories ----

pub fn corpus(dir: &str) -> Vec<PathBuf> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/stories").join(dir);
    let mut files: Vec<PathBuf> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "pif"))
        .collect();
    files.sort();
    files
}

/// Parse errors, or lint findings when the story parses.
pub fn diagnostics(path: &Path) -> Vec<Diagnostic> {
    let source = StorySource::from_file(path).unwrap();
    match parse(&source) {
        Ok(graph) => lint(&graph),
        Err(e) => e.diagnostics,
    }
}

/// `// expect: LINE: message fragment`
pub fn expectation(path: &Path) -> (usize, String) {
    let text = std::fs::read_to_string(path).unwrap();
    let rest = text
        .lines()
        .find_map(|l| l.strip_prefix("// expect: "))
        .unwrap_or_else(|| panic!("{} has no expectation", path.display()));
    let (line, msg) = rest.split_once(": ").unwrap();
    (line.parse().unwrap(), msg.to_string())
}

// ---- signals ----

pub fn sine(f: f64, fs: f64, secs: f64) -> Vec<f64> {
    (0..(fs * secs) as usize)
        .map(|i| (2.0 * PI * f * i as f64 / fs).sin())
        .collect()
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Tonic drift plus SCRs of the given amplitude at the given onsets, at [`FS`].
pub fn eda_trace(secs: f64, onsets: &[f64], amp: f64) -> Vec<f64> {
    let scale = amp / scr_kernel_peak();
    (0..(secs * FS) as usize)
        .map(|i| {
            let t = i as f64 / FS;
            let tonic = 2.0 + 0.004 * t + 0.05 * (2.0 * PI * t / 120.0).sin();
            let phasic: f64 = onsets
                .iter()
                .filter(|&&o| t >= o)
                .map(|&o| {
                    let d = t - o;
                    scale * ((-d / eda::TAU_DECAY_S).exp() - (-d / eda::TAU_RISE_S).exp())
                })
                .sum();
            tonic + phasic
        })
        .collect()
}

// ---- classification ----

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Φ(x) via the complementary error function series of Abramowitz–Stegun 7.1.26.
pub fn phi(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * z.abs());
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-z * z).exp();
    0.5 * (1.0 + if z >= 0.0 { erf } else { -erf })
}

/// Unit spherical Gaussians with means ±2 on the first axis (4σ apart), classes alternating.
pub fn gaussians(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<Class>) {
    let mut x = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let class = if i % 2 == 0 { Class::A } else { Class::B };
        let shift = if class == Class::A { 2.0 } else { -2.0 };
        let mut row: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        row[0] += shift;
        x.push(row);
        c.push(class);
    }
    (x, c)
}

/// Subjects with random baselines and scales; class A raises the first three
/// features by `shift` within-subject noise units.
pub fn cohort(rng: &mut ChaCha8Rng, subjects: usize, per_class: usize, d: usize, shift: f64) -> Dataset {
    let registry = FeatureRegistry::new((0..d).map(|j| format!("f{j}")).collect());
    let mut observations = Vec::new();
    for s in 0..subjects {
        let base: Vec<f64> = (0..d).map(|_| 10.0 * rng.random::<f64>()).collect();
        let scale: Vec<f64> = (0..d).map(|_| 0.5 + 3.0 * rng.random::<f64>()).collect();
        for k in 0..2 * per_class {
            let class = if k % 2 == 0 { Class::A } else { Class::B };
            let values = (0..d)
                .map(|j| {
                    let effect = if j < 3 && class == Class::A { shift } else { 0.0 };
                    Some(base[j] + scale[j] * (normal(rng) + effect))
                })
                .collect();
            observations.push(Observation {
                subject: format!("s{s:02}"),
                values,
                class,
            });
        }
    }
    Dataset {
        registry,
        construct: Construct::arousal(),
        observations,
    }
}

/// Apply a random strictly increasing transform to every feature of every subject.
pub fn monotone_transform(data: &Dataset, rng: &mut ChaCha8Rng) -> Dataset {
    let mut t = data.clone();
    let d = data.registry.len();
    for s in data.subjects() {
        for j in 0..d {
            let kind = rng.random_range(0..4);
            let (a, b) = (rng.random_range(0.1..5.0), rng.random_range(-20.0..20.0));
            for o in t.observations.iter_mut().filter(|o| o.subject == s) {
                let v = o.values[j].unwrap();
                o.values[j] = Some(match kind {
                    0 => a * v + b,
                    1 => (v / 10.0).exp() * a,
                    2 => v.powi(3) + b,
                    _ => (v - 5.0).atan() * a,
                });
            }
        }
    }
    t
}

// ---- director ----

pub const TAGS: [&str; 4] = ["DUNGEON", "FOREST", "CAVE", "SEA"];
pub const KEYS: [&str; 3] = ["arousal", "valence", "difficulty"];

pub struct Log {
    pub markers: Vec<(f64, Marker)>,
    pub states: Vec<StateUpdate>,
}

/// Random balanced tag visits (possibly nested or crossing) on a 0.25 s grid so
/// that updates regularly share timestamps with markers.
pub fn random_log(rng: &mut ChaCha8Rng) -> Log {
    let horizon = 200.0;
    let mut markers = Vec::new();
    for tag in TAGS {
        let mut t = rng.random_range(0..40) as f64 * 0.25;
        while t < horizon {
            let len = rng.random_range(1..80) as f64 * 0.25;
            markers.push((t, Marker::TagStart(tag.into())));
            markers.push((t + len, Marker::TagStop(tag.into())));
            t += len + rng.random_range(1..120) as f64 * 0.25;
        }
    }
    markers.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = rng.random_range(50..600);
    let states = (0..n)
        .map(|_| {
            let t = if rng.random_bool(0.5) {
                rng.random_range(0..900) as f64 * 0.25
            } else {
                rng.random_range(0.0..horizon + 20.0)
            };
            // `then` rather than `then_some`: the value draw must only happen when kept
            #[allow(clippy::filter_map_bool_then)]
            let values = KEYS
                .iter()
                .filter_map(|k| rng.random_bool(0.7).then(|| (k.to_string(), rng.random_range(-5.0..5.0))))
                .collect::<BTreeMap<_, _>>();
            StateUpdate {
                t,
                source: "sim".into(),
                values,
            }
        })
        .collect();
    Log { markers, states }
}

/// Independent oracle: for each tag, average every update falling in one of its
/// visits. Markers precede states at equal times, so a visit covers [open, close).
pub fn brute_force(log: &Log) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for tag in TAGS {
        let mut visits = Vec::new();
        let mut open = None;
        for (t, m) in &log.markers {
            match m {
                Marker::TagStart(x) if x == tag => open = Some(*t),
                Marker::TagStop(x) if x == tag => visits.push((open.take().unwrap(), *t)),
                _ => {}
            }
        }
        for key in KEYS {
            let vals: Vec<f64> = log
                .states
                .iter()
                .filter(|u| visits.iter().any(|&(a, b)| u.t >= a && u.t < b))
                .filter_map(|u| u.values.get(key).copied())
                .collect();
            if !vals.is_empty() {
                out.insert(
                    format!("phys_{}_{}", tag.to_lowercase(), key),
                    vals.iter().sum::<f64>() / vals.len() as f64,
                );
            }
        }
    }
    out
}

pub fn run_director(log: &Log) -> BTreeMap<String, f64> {
    let inputs = merge(log.markers.clone(), log.states.clone());
    replay(DirectorConfig::default(), &inputs).variables().clone()
}

pub fn bits(m: &BTreeMap<String, f64>) -> Vec<(String, u64)> {
    m.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect()
}

// ---- transport ----

/// 70 s of 512 Hz two-channel signal plus 14 markers.
pub fn session_recording() -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let streams = vec![
        StreamInfo::signal("physio", "physio-1", &["eda", "resp"], 512.0),
        StreamInfo::marker("pif-markers", "markers-1"),
    ];
    let mut samples = Vec::new();
    let t0 = 1234.5678;
    let mut next_marker = 0;
    for i in 0..70 * 512 {
        let t = t0 + i as f64 / 512.0;
        if next_marker < 14 && t >= t0 + 2.0 + 5.0 * next_marker as f64 {
            samples.push((1, Sample::marker(t, format!("PAGE:{next_marker}"))));
            next_marker += 1;
        }
        samples.push((0, Sample::values(t, vec![rng.random_range(0.0..20.0), rng.random::<f64>() - 0.5])));
    }
    Recording {
        session_start: 1.76e9,
        streams,
        samples,
    }
}

/// Replay through a fresh registry at full speed and capture it again.
/// Returns the new recording and the overflow the recorder saw.
pub fn replay_and_record(rec: &Recording) -> (Recording, u64) {
    let reg = Registry::new();
    let replay = Replay::open(&reg, rec.clone()).unwrap();
    let inlets: Vec<_> = rec
        .streams
        .iter()
        .map(|s| reg.open_inlet(&s.source_id, 1 << 20).unwrap())
        .collect();
    let recorder = thread::spawn(move || {
        let mut buf = Vec::new();
        let summary = record_to(&inlets, &mut buf, 1.76e9, &AtomicBool::new(false)).unwrap();
        (buf, summary)
    });
    assert_eq!(replay.run(Speed::Max).unwrap(), rec.samples.len() as u64);
    let (buf, summary) = recorder.join().unwrap();
    (Recording::parse(buf.as_slice()).unwrap(), summary.total_overflow)
}

pub fn payload_bytes(rec: &Recording, stream: usize) -> Vec<String> {
    rec.samples_of(stream).map(|s| serde_json::to_string(&s.v).unwrap()).collect()
}

pub fn deltas(rec: &Recording, stream: usize) -> Vec<f64> {
    let t: Vec<f64> = rec.samples_of(stream).map(|s| s.t).collect();
    t.windows(2).map(|w| w[1] - w[0]).collect()
}
