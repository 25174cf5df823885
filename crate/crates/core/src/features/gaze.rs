//! Gaze events: blinks, mind wandering, fixations, saccades and pupil statistics.

use serde::{Deserialize, Serialize};

use super::dsp::{mean, pop_std};

/// Tolerance for duration comparisons against the event thresholds.
const EPS: f64 = 1e-9;
pub const BLINK_MIN_S: f64 = 0.050;
pub const BLINK_MAX_S: f64 = 0.500;
pub const FIX_MAX_DISPERSION: f64 = 0.02;
pub const FIX_MIN_DURATION_S: f64 = 0.100;
pub const SPLIT_SACCADE_S: f64 = 0.350;
/// Fraction of the display by which the on-screen rectangle is inflated.
pub const SCREEN_MARGIN: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    /// Position on the display plane, `None` when off-screen.
    pub pos: Option<[f64; 2]>,
    pub pupil: Option<f64>,
}

impl GazeSample {
    pub fn on(t: f64, x: f64, y: f64, pupil: f64) -> Self {
        GazeSample {
            t,
            pos: Some([x, y]),
            pupil: Some(pupil),
        }
    }

    pub fn off(t: f64) -> Self {
        GazeSample {
            t,
            pos: None,
            pupil: None,
        }
    }

    /// Classify a raw tracker sample; positions outside the inflated display are off-screen.
    pub fn from_raw(t: f64, x: f64, y: f64, pupil: f64) -> Self {
        let inside = |v: f64| v.is_finite() && (-SCREEN_MARGIN..=1.0 + SCREEN_MARGIN).contains(&v);
        if inside(x) && inside(y) {
            GazeSample::on(t, x, y, pupil)
        } else {
            GazeSample::off(t)
        }
    }

    pub fn on_screen(&self) -> bool {
        self.pos.is_some()
    }
}

/// Timestamps must be increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GazeTrace {
    pub samples: Vec<GazeSample>,
}

/// Maximal run of off-screen samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    /// Index of the first off-screen sample.
    pub first: usize,
    /// Index one past the last off-screen sample.
    pub end: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapKind {
    Ignored,
    Blink,
    MindWandering,
}

impl Gap {
    pub fn kind(&self) -> GapKind {
        if self.duration > BLINK_MAX_S + EPS {
            GapKind::MindWandering
        } else if self.duration >= BLINK_MIN_S - EPS {
            GapKind::Blink
        } else {
            GapKind::Ignored
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixation {
    pub t_start: f64,
    pub t_end: f64,
    pub centroid: [f64; 2],
    first: usize,
    last: usize,
}

impl Fixation {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saccade {
    pub t_start: f64,
    pub t_end: f64,
    pub length: f64,
    /// Absolute direction relative to the horizontal, degrees in [0, 180].
    pub angle_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EyeMovements {
    pub fixations: Vec<Fixation>,
    pub saccades: Vec<Saccade>,
    /// Lengths of saccade pieces after cutting at 350 ms boundaries.
    pub split_lengths: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlinkStats {
    pub n_blinks: usize,
    pub mean_duration: Option<f64>,
}

fn nominal_interval(samples: &[GazeSample]) -> f64 {
    let mut dts: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    if dts.is_empty() {
        return 0.0;
    }
    dts.sort_by(f64::total_cmp);
    dts[dts.len() / 2]
}

impl GazeTrace {
    pub fn new(samples: Vec<GazeSample>) -> Self {
        GazeTrace { samples }
    }

    /// A gap lasts from its first off-screen sample to the next on-screen sample;
    /// a trailing gap ends one nominal sampling interval after the last sample.
    pub fn gaps(&self) -> Vec<Gap> {
        let s = &self.samples;
        let dt = nominal_interval(s);
        let mut out = Vec::new();
        let mut i = 0;
        while i < s.len() {
            if s[i].on_screen() {
                i += 1;
                continue;
            }
            let first = i;
            while i < s.len() && !s[i].on_screen() {
                i += 1;
            }
            let until = if i < s.len() { s[i].t } else { s[i - 1].t + dt };
            out.push(Gap {
                first,
                end: i,
                duration: until - s[first].t,
            });
        }
        out
    }

    pub fn blinks(&self) -> BlinkStats {
        let durations: Vec<f64> = self
            .gaps()
            .iter()
            .filter(|g| g.kind() == GapKind::Blink)
            .map(|g| g.duration)
            .collect();
        BlinkStats {
            n_blinks: durations.len(),
            mean_duration: (!durations.is_empty()).then(|| mean(&durations)),
        }
    }

    pub fn mind_wandering(&self) -> f64 {
        self.gaps()
            .iter()
            .filter(|g| g.kind() == GapKind::MindWandering)
            .map(|g| g.duration)
            .sum()
    }

    /// Runs of on-screen sample indices not interrupted by a blink-length or longer gap.
    fn segments(&self) -> Vec<Vec<usize>> {
        let breaks: Vec<Gap> = self
            .gaps()
            .into_iter()
            .filter(|g| g.kind() != GapKind::Ignored)
            .collect();
        let mut out = vec![Vec::new()];
        let mut next_break = breaks.iter().peekable();
        for (i, s) in self.samples.iter().enumerate() {
            if let Some(g) = next_break.peek() {
                if i >= g.first {
                    next_break.next();
                    if !out.last().is_some_and(Vec::is_empty) {
                        out.push(Vec::new());
                    }
                }
            }
            if s.on_screen() {
                out.last_mut().expect("non-empty").push(i);
            }
        }
        out.retain(|seg| !seg.is_empty());
        out
    }

    fn pos(&self, i: usize) -> [f64; 2] {
        self.samples[i].pos.expect("on-screen sample")
    }

    fn dispersion(&self, idx: &[usize]) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &i in idx {
            let p = self.pos(i);
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (hi[0] - lo[0]) + (hi[1] - lo[1])
    }

    /// Dispersion-threshold fixation identification within each segment.
    pub fn fixations(&self) -> Vec<Fixation> {
        let mut out = Vec::new();
        for seg in self.segments() {
            let t = |k: usize| self.samples[seg[k]].t;
            let mut i = 0;
            while i < seg.len() {
                let mut j = i;
                while j < seg.len() && t(j) - t(i) < FIX_MIN_DURATION_S - EPS {
                    j += 1;
                }
                if j >= seg.len() {
                    break;
                }
                if self.dispersion(&seg[i..=j]) > FIX_MAX_DISPERSION {
                    i += 1;
                    continue;
                }
                while j + 1 < seg.len() && self.dispersion(&seg[i..=j + 1]) <= FIX_MAX_DISPERSION {
                    j += 1;
                }
                let pts = &seg[i..=j];
                let n = pts.len() as f64;
                let cx = pts.iter().map(|&k| self.pos(k)[0]).sum::<f64>() / n;
                let cy = pts.iter().map(|&k| self.pos(k)[1]).sum::<f64>() / n;
                out.push(Fixation {
                    t_start: t(i),
                    t_end: t(j),
                    centroid: [cx, cy],
                    first: seg[i],
                    last: seg[j],
                });
                i = j + 1;
            }
        }
        out
    }

    /// Position along the gaze path between two fixations at time `at`.
    fn path_position(&self, path: &[(f64, [f64; 2])], at: f64) -> [f64; 2] {
        let k = path.partition_point(|(t, _)| *t <= at);
        if k == 0 {
            return path[0].1;
        }
        if k >= path.len() {
            return path[path.len() - 1].1;
        }
        let (t0, p0) = path[k - 1];
        let (t1, p1) = path[k];
        let f = if t1 > t0 { (at - t0) / (t1 - t0) } else { 0.0 };
        [p0[0] + f * (p1[0] - p0[0]), p0[1] + f * (p1[1] - p0[1])]
    }

    pub fn eye_movements(&self) -> EyeMovements {
        let fixations = self.fixations();
        let breaks: Vec<Gap> = self
            .gaps()
            .into_iter()
            .filter(|g| g.kind() != GapKind::Ignored)
            .collect();
        let mut saccades = Vec::new();
        let mut split_lengths = Vec::new();
        for pair in fixations.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if breaks.iter().any(|g| g.first > a.last && g.first < b.first) {
                continue;
            }
            let (dx, dy) = (b.centroid[0] - a.centroid[0], b.centroid[1] - a.centroid[1]);
            let sac = Saccade {
                t_start: a.t_end,
                t_end: b.t_start,
                length: dx.hypot(dy),
                angle_deg: dy.atan2(dx).abs().to_degrees(),
            };
            saccades.push(sac);

            let mut path = vec![(a.t_end, a.centroid)];
            for k in a.last + 1..b.first {
                if let Some(p) = self.samples[k].pos {
                    path.push((self.samples[k].t, p));
                }
            }
            path.push((b.t_start, b.centroid));
            let duration = sac.t_end - sac.t_start;
            let pieces = ((duration / SPLIT_SACCADE_S) - EPS).ceil().max(1.0) as usize;
            let mut prev = self.path_position(&path, sac.t_start);
            for piece in 1..=pieces {
                let at = if piece == pieces {
                    sac.t_end
                } else {
                    sac.t_start + piece as f64 * SPLIT_SACCADE_S
                };
                let cur = self.path_position(&path, at);
                split_lengths.push((cur[0] - prev[0]).hypot(cur[1] - prev[1]));
                prev = cur;
            }
        }
        EyeMovements {
            fixations,
            saccades,
            split_lengths,
        }
    }

    /// Mean and population SD of pupil dilation over on-screen samples.
    pub fn pupil_stats(&self) -> Option<(f64, f64)> {
        let values: Vec<f64> = self
            .samples
            .iter()
            .filter(|s| s.on_screen())
            .filter_map(|s| s.pupil)
            .filter(|p| p.is_finite())
            .collect();
        (!values.is_empty()).then(|| (mean(&values), pop_std(&values)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1 kHz trace with off-screen runs of the given lengths (ms), separated by 1 s on-screen.
    fn with_gaps(gaps_ms: &[usize]) -> GazeTrace {
        let mut s = Vec::new();
        let mut t = 0usize;
        let push_on = |s: &mut Vec<GazeSample>, t: &mut usize, n: usize| {
            for _ in 0..n {
                s.push(GazeSample::on(*t as f64 / 1000.0, 0.5, 0.5, 1.0));
                *t += 1;
            }
        };
        push_on(&mut s, &mut t, 1000);
        for &g in gaps_ms {
            for _ in 0..g {
                s.push(GazeSample::off(t as f64 / 1000.0));
                t += 1;
            }
            push_on(&mut s, &mut t, 1000);
        }
        GazeTrace::new(s)
    }

    #[test]
    fn blink_rules() {
        let one = with_gaps(&[300]).blinks();
        assert_eq!(one.n_blinks, 1);
        assert!((one.mean_duration.unwrap() - 0.3).abs() < 1e-9);

        let short = with_gaps(&[49]).blinks();
        assert_eq!(short.n_blinks, 0);
        assert_eq!(short.mean_duration, None);

        let mixed = with_gaps(&[100, 400, 600]);
        let b = mixed.blinks();
        assert_eq!(b.n_blinks, 2);
        assert!((b.mean_duration.unwrap() - 0.25).abs() < 1e-9);
        assert!((mixed.mind_wandering() - 0.6).abs() < 1e-9);
    }

    #[test]
    fn mind_wandering_sums() {
        assert_eq!(with_gaps(&[]).mind_wandering(), 0.0);
        assert!((with_gaps(&[501, 2000]).mind_wandering() - 2.501).abs() < 1e-9);
    }

    #[test]
    fn raw_classification() {
        assert!(GazeSample::from_raw(0.0, 1.05, -0.05, 1.0).on_screen());
        assert!(!GazeSample::from_raw(0.0, 1.2, 0.5, 1.0).on_screen());
        assert!(!GazeSample::from_raw(0.0, f64::NAN, 0.5, 1.0).on_screen());
    }

    #[test]
    fn pupil() {
        let alt: Vec<GazeSample> = (0..100)
            .map(|i| GazeSample::on(i as f64 * 0.01, 0.5, 0.5, if i % 2 == 0 { 0.9 } else { 1.1 }))
            .collect();
        let (m, sd) = GazeTrace::new(alt).pupil_stats().unwrap();
        assert!((m - 1.0).abs() < 1e-12 && (sd - 0.1).abs() < 1e-12);
        assert_eq!(GazeTrace::new(vec![GazeSample::off(0.0)]).pupil_stats(), None);
    }
}
