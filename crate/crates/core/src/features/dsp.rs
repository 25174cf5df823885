//! Butterworth filter design, zero-phase filtering, decimation and peak picking.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Direct-form II transposed biquad `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }

    /// Filter in place from the DF2T state `z`.
    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z[0];
            z[0] = self.b[1] * input - self.a[0] * y + z[1];
            z[1] = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub fs: f64,
}

fn analog_prototype(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear(p: Complex64, fs: f64) -> Complex64 {
    let k = Complex64::new(2.0 * fs, 0.0);
    (k + p) / (k - p)
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

/// Biquads from digital poles (upper half-plane representatives), each with numerator `num`.
fn sections_from_poles(poles: &[Complex64], num: [f64; 3]) -> Vec<Biquad> {
    let mut sections = Vec::new();
    let mut reals = Vec::new();
    for p in poles {
        if p.im > 1e-12 {
            sections.push(Biquad {
                b: num,
                a: [-2.0 * p.re, p.norm_sqr()],
            });
        } else if p.im.abs() <= 1e-12 {
            reals.push(p.re);
        }
    }
    for pair in reals.chunks(2) {
        match pair {
            [r1, r2] => sections.push(Biquad {
                b: num,
                a: [-(r1 + r2), r1 * r2],
            }),
            [r] => sections.push(Biquad {
                b: [1.0, 1.0, 0.0],
                a: [-r, 0.0],
            }),
            _ => {}
        }
    }
    sections
}

impl Sos {
    /// Butterworth band-pass from an `order`-pole low-pass prototype (2·order poles in total).
    pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Self {
        assert!(order >= 1 && 0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0);
        let w1 = prewarp(low_hz, fs);
        let w2 = prewarp(high_hz, fs);
        let w0 = (w1 * w2).sqrt();
        let bw = w2 - w1;
        let mut poles = Vec::new();
        for p in analog_prototype(order) {
            let half = p * bw / 2.0;
            let disc = (half * half - w0 * w0).sqrt();
            poles.push(bilinear(half + disc, fs));
            poles.push(bilinear(half - disc, fs));
        }
        // zeros at s = 0 and s = ∞ map to z = 1 and z = -1
        let mut sos = Sos {
            sections: sections_from_poles(&poles, [1.0, 0.0, -1.0]),
            fs,
        };
        let center = 2.0 * (w0 / (2.0 * fs)).atan();
        sos.normalize_at(center);
        sos
    }

    pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Self {
        assert!(order >= 1 && 0.0 < cutoff_hz && cutoff_hz < fs / 2.0);
        let wc = prewarp(cutoff_hz, fs);
        let poles: Vec<Complex64> = analog_prototype(order)
            .into_iter()
            .map(|p| bilinear(p * wc, fs))
            .collect();
        let mut sos = Sos {
            sections: sections_from_poles(&poles, [1.0, 2.0, 1.0]),
            fs,
        };
        sos.normalize_at(0.0);
        sos
    }

    fn normalize_at(&mut self, w: f64) {
        let g = self.response_at(w).norm();
        let per = g.powf(1.0 / self.sections.len() as f64);
        for s in &mut self.sections {
            for b in &mut s.b {
                *b /= per;
            }
        }
    }

    /// Complex response at normalized angular frequency `w` (rad/sample).
    pub fn response_at(&self, w: f64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    /// Single-pass magnitude at `hz`.
    pub fn gain_at(&self, hz: f64) -> f64 {
        self.response_at(2.0 * PI * hz / self.fs).norm()
    }

    /// Causal filtering with steady-state initial conditions for the first sample.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let state = self.steady_state(x.first().copied().unwrap_or(0.0));
        self.run(&mut y, &state);
        y
    }

    /// Cascade state equivalent to an infinitely long constant input `x0`.
    fn steady_state(&self, mut x0: f64) -> Vec<f64> {
        let mut state = Vec::with_capacity(2 * self.sections.len());
        for s in &self.sections {
            let g = s.dc_gain();
            state.push((g - s.b[0]) * x0);
            state.push((s.b[2] - s.a[1] * g) * x0);
            x0 *= g;
        }
        state
    }

    fn run(&self, y: &mut [f64], state: &[f64]) {
        for (k, s) in self.sections.iter().enumerate() {
            s.run(y, [state[2 * k], state[2 * k + 1]]);
        }
    }

    /// Zero-phase forward-backward filtering with odd-symmetric edge extension.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * self.sections.len() * 2).max(n / 2).min(n - 1);
        let left: Vec<f64> = (1..=pad).rev().map(|i| 2.0 * x[0] - x[i]).collect();
        let right: Vec<f64> = (1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]).collect();
        self.filtfilt_extended(&left, x, &right)
    }

    /// Zero-phase filtering of `x` with caller-supplied edge extensions, which are
    /// filtered along and then discarded.
    pub fn filtfilt_extended(&self, left: &[f64], x: &[f64], right: &[f64]) -> Vec<f64> {
        let mut ext = Vec::with_capacity(left.len() + x.len() + right.len());
        ext.extend_from_slice(left);
        ext.extend_from_slice(x);
        ext.extend_from_slice(right);
        if ext.is_empty() {
            return Vec::new();
        }
        let state = self.steady_state(ext[0]);
        self.run(&mut ext, &state);
        ext.reverse();
        let state = self.steady_state(ext[0]);
        self.run(&mut ext, &state);
        ext.reverse();
        ext[left.len()..left.len() + x.len()].to_vec()
    }
}

/// Autoregressive coefficients `a` (with `a[0] = 1`) by Burg's method, so that
/// `x[n] ≈ -Σ a[i]·x[n-i]`. The input should have zero mean.
pub fn burg(x: &[f64], order: usize) -> Vec<f64> {
    let n = x.len();
    let mut f = x.to_vec();
    let mut b = x.to_vec();
    let mut a = vec![1.0];
    for m in 0..order.min(n.saturating_sub(1)) {
        let (mut num, mut den) = (0.0, 0.0);
        for i in m + 1..n {
            num += f[i] * b[i - 1];
            den += f[i] * f[i] + b[i - 1] * b[i - 1];
        }
        if den <= 0.0 {
            break;
        }
        let k = -2.0 * num / den;
        a.push(0.0);
        let prev = a.clone();
        for i in 0..a.len() {
            a[i] = prev[i] + k * prev[m + 1 - i];
        }
        for i in (m + 1..n).rev() {
            let fi = f[i];
            f[i] = fi + k * b[i - 1];
            b[i] = b[i - 1] + k * fi;
        }
    }
    a
}

/// Extend `x` by `len` samples past its end using the AR model `a`.
pub fn ar_extend(x: &[f64], a: &[f64], len: usize) -> Vec<f64> {
    let p = a.len() - 1;
    let mut hist: Vec<f64> = x[x.len().saturating_sub(p)..].to_vec();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let pred = -(1..=p.min(hist.len()))
            .map(|i| a[i] * hist[hist.len() - i])
            .sum::<f64>();
        hist.push(pred);
        out.push(pred);
    }
    out
}

/// Least-squares line `(intercept, slope)` through `x` against the sample index.
pub fn linear_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let xm = mean(x);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - tm;
        sxy += dt * (v - xm);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (xm - slope * tm, slope)
}

/// Zero-phase filtering with edges extended by linear prediction around the
/// linear trend, which continues quasi-periodic signals smoothly instead of
/// folding them.
pub fn filtfilt_predicted(sos: &Sos, x: &[f64], ar_order: usize, pad: usize) -> Vec<f64> {
    if x.len() <= 2 * ar_order {
        return sos.filtfilt(x);
    }
    let (c, slope) = linear_fit(x);
    let trend = |i: f64| c + slope * i;
    let resid: Vec<f64> = x.iter().enumerate().map(|(i, v)| v - trend(i as f64)).collect();
    let a = burg(&resid, ar_order);
    let n = x.len() as f64;
    let right: Vec<f64> = ar_extend(&resid, &a, pad)
        .into_iter()
        .enumerate()
        .map(|(k, v)| v + trend(n + k as f64))
        .collect();
    let reversed: Vec<f64> = resid.iter().rev().copied().collect();
    let mut left: Vec<f64> = ar_extend(&reversed, &a, pad)
        .into_iter()
        .enumerate()
        .map(|(k, v)| v + trend(-1.0 - k as f64))
        .collect();
    left.reverse();
    sos.filtfilt_extended(&left, x, &right)
}

/// Block-mean decimation. Returns the decimated signal and the time offset
/// (seconds, relative to the first input sample) of output sample 0.
pub fn decimate_mean(x: &[f64], factor: usize, fs: f64) -> (Vec<f64>, f64) {
    let factor = factor.max(1);
    let out = x
        .chunks_exact(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect();
    (out, (factor as f64 - 1.0) / 2.0 / fs)
}

/// Decimation factor bringing `fs` down to roughly `target_fs` (integer, ≥ 1).
pub fn decimation_factor(fs: f64, target_fs: f64) -> usize {
    ((fs / target_fs).floor() as usize).max(1)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn pop_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Local maxima (plateaus resolved to their middle sample).
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < x.len() {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < x.len() && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Topographic prominence of the peak at `p`.
pub fn prominence(x: &[f64], p: usize) -> f64 {
    let h = x[p];
    let mut left_min = h;
    for i in (0..p).rev() {
        if x[i] > h {
            break;
        }
        left_min = left_min.min(x[i]);
    }
    let mut right_min = h;
    for &v in &x[p + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Peaks with prominence ≥ `min_prominence`, at least `min_distance` samples apart
/// (taller peaks win). Returned in ascending index order.
pub fn find_peaks(x: &[f64], min_prominence: f64, min_distance: usize) -> Vec<usize> {
    let mut peaks: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&p| prominence(x, p) >= min_prominence)
        .collect();
    if min_distance > 1 && peaks.len() > 1 {
        let mut by_height: Vec<usize> = (0..peaks.len()).collect();
        by_height.sort_by(|&a, &b| x[peaks[b]].total_cmp(&x[peaks[a]]).then(a.cmp(&b)));
        let mut keep = vec![true; peaks.len()];
        for &i in &by_height {
            if !keep[i] {
                continue;
            }
            for j in (0..i).rev() {
                if peaks[i] - peaks[j] >= min_distance {
                    break;
                }
                keep[j] = false;
            }
            for j in i + 1..peaks.len() {
                if peaks[j] - peaks[i] >= min_distance {
                    break;
                }
                keep[j] = false;
            }
        }
        peaks = peaks.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
    }
    peaks
}

/// Sub-sample offset of a peak by parabolic interpolation, in [-0.5, 0.5].
pub fn parabolic_offset(x: &[f64], p: usize) -> f64 {
    if p == 0 || p + 1 >= x.len() {
        return 0.0;
    }
    let (a, b, c) = (x[p - 1], x[p], x[p + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < f64::EPSILON {
        0.0
    } else {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, fs: f64, secs: f64) -> Vec<f64> {
        (0..(fs * secs) as usize)
            .map(|i| (2.0 * PI * f * i as f64 / fs).sin())
            .collect()
    }

    fn rms_middle(x: &[f64]) -> f64 {
        let n = x.len();
        let mid = &x[n / 4..3 * n / 4];
        (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt()
    }

    #[test]
    fn bandpass_shape() {
        let f = Sos::butter_bandpass(4, 0.1, 0.35, 512.0);
        assert_eq!(f.sections.len(), 4);
        let center = (0.1f64 * 0.35).sqrt();
        assert!((f.gain_at(center) - 1.0).abs() < 1e-9);
        // -3 dB at the corners
        assert!((f.gain_at(0.1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!((f.gain_at(0.35) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!(f.gain_at(0.0) < 1e-12);
    }

    #[test]
    fn lowpass_shape() {
        let f = Sos::butter_lowpass(2, 0.05, 8.0);
        assert!((f.gain_at(0.0) - 1.0).abs() < 1e-12);
        assert!((f.gain_at(0.05) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        let odd = Sos::butter_lowpass(3, 1.0, 100.0);
        assert_eq!(odd.sections.len(), 2);
        assert!((odd.gain_at(1.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
    }

    #[test]
    fn filtfilt_attenuation() {
        let fs = 64.0;
        let f = Sos::butter_bandpass(4, 0.1, 0.35, fs);
        let pass = rms_middle(&f.filtfilt(&sine(0.2, fs, 200.0)));
        for stop in [0.05, 1.0] {
            let s = rms_middle(&f.filtfilt(&sine(stop, fs, 200.0)));
            let db = 20.0 * (pass / s).log10();
            assert!(db >= 20.0, "{stop} Hz only {db:.1} dB down");
        }
    }

    #[test]
    fn peaks_prominence_and_distance() {
        let x = [0.0, 1.0, 0.0, 0.5, 0.4, 0.6, 0.0, 3.0, 3.0, 3.0, 0.0];
        assert_eq!(local_maxima(&x), vec![1, 3, 5, 8]);
        assert!((prominence(&x, 3) - 0.1).abs() < 1e-12);
        assert_eq!(find_peaks(&x, 0.2, 1), vec![1, 5, 8]);
        assert_eq!(find_peaks(&x, 0.2, 4), vec![1, 8]);
    }

    #[test]
    fn decimation_center_time() {
        let (y, t0) = decimate_mean(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 2.0);
        assert_eq!(y, vec![0.5, 2.5, 4.5]);
        assert!((t0 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn parabola_vertex() {
        // samples of -(t - 0.3)^2 at t = -1, 0, 1
        let x: Vec<f64> = [-1.0f64, 0.0, 1.0].iter().map(|t| -(t - 0.3) * (t - 0.3)).collect();
        assert!((parabolic_offset(&x, 1) - 0.3).abs() < 1e-12);
    }
}
