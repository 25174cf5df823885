//! Incremental signal models. A [`Generator`] advances in time under the current
//! ground truth, so the same code serves batch scenarios and live steering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{GroundTruth, SubjectProfile};
use crate::features::eda::{scr_kernel_peak, TAU_DECAY_S, TAU_RISE_S};
use crate::features::gaze::GazeSample;
use crate::features::head::{axis_angle, quat_mul, HeadSample};
use crate::sensors::GAZE_OFF;

pub const PHYSIO_FS: f64 = 512.0;
pub const GAZE_FS: f64 = 70.0;
pub const HEAD_FS: f64 = 70.0;
/// Minimum spacing between two SCR onsets.
pub const SCR_REFRACTORY_S: f64 = 1.5;
/// How long a response keeps contributing to the signal.
const SCR_SPAN_S: f64 = 30.0;
const BREATH_OU_TAU_S: f64 = 10.0;
const HEAD_OU_TAU_S: f64 = 1.0;
const SACCADE_SAMPLES: usize = 2;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One-pole approximation of 1/f noise (Kellet's economy filter), unit-ish variance.
#[derive(Debug, Clone, Default)]
struct PinkNoise {
    b: [f64; 3],
}

impl PinkNoise {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let w = normal(rng);
        self.b[0] = 0.99765 * self.b[0] + w * 0.0990460;
        self.b[1] = 0.96300 * self.b[1] + w * 0.2965164;
        self.b[2] = 0.57000 * self.b[2] + w * 1.0526913;
        (self.b[0] + self.b[1] + self.b[2] + w * 0.1848) / 3.0
    }
}

/// Normalized skin-conductance response shape, peak 1.
pub fn scr_shape(u: f64) -> f64 {
    if u < 0.0 {
        0.0
    } else {
        ((-u / TAU_DECAY_S).exp() - (-u / TAU_RISE_S).exp()) / scr_kernel_peak()
    }
}

fn fixation(rng: &mut ChaCha8Rng, t: f64, pos: [f64; 2], mean: f64, cv: f64) -> GazeState {
    let d = (mean * (1.0 + cv * normal(rng))).max(0.13);
    GazeState::Fixation { until: t + d, pos }
}

#[derive(Debug, Clone)]
enum GazeState {
    Fixation { until: f64, pos: [f64; 2] },
    Saccade { from: [f64; 2], to: [f64; 2], step: usize },
    Blink { until: f64, pos: [f64; 2] },
    Away { until: f64, pos: [f64; 2] },
}

/// Everything emitted by one [`Generator::advance`] call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chunk {
    pub eda: Vec<f64>,
    pub breathing: Vec<f64>,
    pub gaze: Vec<GazeSample>,
    pub head: Vec<HeadSample>,
    /// Onset times of the skin-conductance responses started in this chunk.
    pub scr_onsets: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    profile: SubjectProfile,
    rngs: [ChaCha8Rng; 4],
    /// Index of the next 512 Hz sample, and of the next gaze/head sample.
    n_physio: u64,
    n_gaze: u64,
    n_head: u64,
    // breathing
    phase: f64,
    rate_dev: f64,
    pink: PinkNoise,
    // eda
    tonic: f64,
    scrs: Vec<(f64, f64)>,
    last_scr: f64,
    // gaze
    gaze: GazeState,
    pupil_dev: f64,
    // head
    q: [f64; 4],
    omega: [f64; 3],
}

impl Generator {
    pub fn new(profile: &SubjectProfile) -> Self {
        let rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(profile.seed);
            r.set_stream(stream);
            r
        };
        let mut rngs = [rng(1), rng(2), rng(3), rng(4)];
        let phase = rngs[0].random_range(0.0..std::f64::consts::TAU);
        Generator {
            profile: profile.clone(),
            n_physio: 0,
            n_gaze: 0,
            n_head: 0,
            phase,
            rate_dev: 0.0,
            pink: PinkNoise::default(),
            tonic: profile.baseline.eda_tonic_us,
            scrs: Vec::new(),
            last_scr: f64::NEG_INFINITY,
            gaze: GazeState::Fixation {
                until: 0.0,
                pos: [0.1, 0.1],
            },
            pupil_dev: 0.0,
            q: [1.0, 0.0, 0.0, 0.0],
            omega: [0.0; 3],
            rngs,
        }
    }

    /// Current simulated time (the next physiological sample's timestamp).
    pub fn time(&self) -> f64 {
        self.n_physio as f64 / PHYSIO_FS
    }

    pub fn profile(&self) -> &SubjectProfile {
        &self.profile
    }

    /// Produce every sample with timestamp < `until` under `truth`.
    pub fn advance(&mut self, until: f64, truth: &GroundTruth) -> Chunk {
        let mut chunk = Chunk::default();
        while (self.n_physio as f64) / PHYSIO_FS < until - 1e-12 {
            let t = self.n_physio as f64 / PHYSIO_FS;
            self.physio_sample(t, truth, &mut chunk);
            self.n_physio += 1;
        }
        while (self.n_gaze as f64) / GAZE_FS < until - 1e-12 {
            let t = self.n_gaze as f64 / GAZE_FS;
            let s = self.gaze_sample(t, truth);
            chunk.gaze.push(s);
            self.n_gaze += 1;
        }
        while (self.n_head as f64) / HEAD_FS < until - 1e-12 {
            let t = self.n_head as f64 / HEAD_FS;
            let s = self.head_sample(t, truth);
            chunk.head.push(s);
            self.n_head += 1;
        }
        chunk
    }

    fn physio_sample(&mut self, t: f64, truth: &GroundTruth, chunk: &mut Chunk) {
        let dt = 1.0 / PHYSIO_FS;
        let (b, n, g) = (&self.profile.baseline, &self.profile.noise, &self.profile.gains);

        // breathing: frequency-modulated sinusoid plus pink noise
        let rng = &mut self.rngs[0];
        let k = (-dt / BREATH_OU_TAU_S).exp();
        self.rate_dev = k * self.rate_dev + n.breath_rate_sd_bpm * (1.0 - k * k).sqrt() * normal(rng);
        let rate = (b.breath_rate_bpm + g.breath_rate_bpm * (truth.valence - 0.5) + self.rate_dev).max(1.0);
        self.phase = (self.phase + std::f64::consts::TAU * rate / 60.0 * dt) % std::f64::consts::TAU;
        let pink = self.pink.next(rng);
        chunk
            .breathing
            .push(b.breath_amplitude * (self.phase.sin() + n.breath_noise * pink));

        // eda: tonic random walk plus a refractory Poisson train of responses
        let rng = &mut self.rngs[1];
        self.tonic = (self.tonic + n.tonic_drift_us * dt.sqrt() * normal(rng)).max(0.1);
        let hazard = self.profile.scr_rate_per_s(truth.arousal);
        if t - self.last_scr >= SCR_REFRACTORY_S && rng.random::<f64>() < hazard * dt {
            let amp = b.scr_amplitude_us
                * (1.0 + g.scr_amplitude * (truth.arousal - 0.5)).max(0.05)
                * (n.scr_amplitude_cv * normal(rng)).exp();
            self.scrs.push((t, amp));
            self.last_scr = t;
            chunk.scr_onsets.push(t);
        }
        self.scrs.retain(|&(t0, _)| t - t0 < SCR_SPAN_S);
        let phasic: f64 = self.scrs.iter().map(|&(t0, a)| a * scr_shape(t - t0)).sum();
        chunk.eda.push(self.tonic + phasic + n.eda_noise_us * normal(rng));
    }

    fn gaze_sample(&mut self, t: f64, truth: &GroundTruth) -> GazeSample {
        let dt = 1.0 / GAZE_FS;
        let (b, n, g) = (&self.profile.baseline, &self.profile.noise, &self.profile.gains);
        let rng = &mut self.rngs[2];
        let k = (-dt / 5.0f64).exp();
        self.pupil_dev = k * self.pupil_dev + n.pupil_sd * (1.0 - k * k).sqrt() * normal(rng);
        let pupil = b.pupil * (1.0 + g.pupil * (truth.arousal - 0.5)) + self.pupil_dev;

        let blink_p = b.blinks_per_min / 60.0 * dt;
        let away_p = (b.wander_per_min + g.wander_per_min * truth.difficulty).max(0.0) / 60.0 * dt;
        let fixation_mean = b.fixation_s * (1.0 + g.fixation * (truth.difficulty - 0.5)).max(0.2);
        let saccade_mean = b.saccade_len * (1.0 + g.saccade_len * (truth.difficulty - 0.5)).max(0.2);

        // state transitions happen at sample boundaries
        let next = match self.gaze.clone() {
            GazeState::Fixation { until, pos } if t >= until => {
                let len = (saccade_mean * (1.0 + n.saccade_cv * normal(rng))).max(0.035);
                let mut to = [pos[0] + len, pos[1]];
                if to[0] > 0.9 {
                    to = [0.1 + rng.random_range(0.0..0.02), pos[1] + 0.06];
                    if to[1] > 0.9 {
                        to[1] = 0.1;
                    }
                }
                Some(GazeState::Saccade {
                    from: pos,
                    to,
                    step: 0,
                })
            }
            GazeState::Fixation { pos, .. } => {
                let u: f64 = rng.random();
                if u < blink_p {
                    Some(GazeState::Blink {
                        until: t + rng.random_range(0.08..0.3),
                        pos,
                    })
                } else if u < blink_p + away_p {
                    Some(GazeState::Away {
                        until: t + rng.random_range(0.7..2.5),
                        pos,
                    })
                } else {
                    None
                }
            }
            GazeState::Saccade { to, step, .. } if step >= SACCADE_SAMPLES => {
                Some(fixation(rng, t, to, fixation_mean, n.fixation_cv))
            }
            GazeState::Blink { until, pos } | GazeState::Away { until, pos } if t >= until => {
                Some(fixation(rng, t, pos, fixation_mean, n.fixation_cv))
            }
            _ => None,
        };
        if let Some(s) = next {
            self.gaze = s;
        }
        let rng = &mut self.rngs[2];
        match &mut self.gaze {
            GazeState::Fixation { pos, .. } => {
                let j = n.fixation_jitter;
                GazeSample::on(t, pos[0] + j * normal(rng), pos[1] + j * normal(rng), pupil)
            }
            GazeState::Saccade { from, to, step } => {
                *step += 1;
                let f = *step as f64 / (SACCADE_SAMPLES + 1) as f64;
                GazeSample::on(t, from[0] + f * (to[0] - from[0]), from[1] + f * (to[1] - from[1]), pupil)
            }
            GazeState::Blink { .. } => GazeSample::from_raw(t, GAZE_OFF, GAZE_OFF, 0.0),
            // looking away from the page: far outside the display rectangle
            GazeState::Away { .. } => GazeSample::from_raw(t, 2.0, 0.5, pupil),
        }
    }

    fn head_sample(&mut self, t: f64, truth: &GroundTruth) -> HeadSample {
        let dt = 1.0 / HEAD_FS;
        let (b, g) = (&self.profile.baseline, &self.profile.gains);
        let rng = &mut self.rngs[3];
        let scale = (b.head_speed_deg_s * (1.0 + g.head_speed * (truth.valence - 0.5))).max(0.0).to_radians();
        let k = (-dt / HEAD_OU_TAU_S).exp();
        for w in &mut self.omega {
            *w = k * *w + scale * (1.0 - k * k).sqrt() * normal(rng);
        }
        let norm = self.omega.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            self.q = quat_mul(&self.q, &axis_angle(self.omega, norm * dt));
            let qn = self.q.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut self.q {
                *v /= qn;
            }
        }
        HeadSample { t, q: self.q }
    }
}
