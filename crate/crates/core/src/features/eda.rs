//! Electrodermal activity: tonic/phasic split, SCR peaks and sudomotor driver.

use super::dsp::{decimate_mean, decimation_factor, find_peaks, mean, Sos};
use super::FeatureError;

/// Working rate after decimation.
pub const EDA_FS: f64 = 8.0;
pub const TONIC_CUTOFF_HZ: f64 = 0.05;
pub const MIN_PROMINENCE_US: f64 = 0.01;
pub const MIN_PEAK_DISTANCE_S: f64 = 1.0;
pub const TAU_RISE_S: f64 = 0.7;
pub const TAU_DECAY_S: f64 = 2.0;
pub const SOLVER_TOLERANCE: f64 = 1e-4;
const SOLVER_MAX_ITER: usize = 20_000;
/// How far back from a peak the onset trough is searched.
const ONSET_LOOKBACK_S: f64 = 10.0;
pub const MIN_DURATION_S: f64 = 10.0;

/// Biexponential impulse response `exp(-t/τd) - exp(-t/τr)` sampled at `fs`.
pub fn scr_kernel(fs: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            (-t / TAU_DECAY_S).exp() - (-t / TAU_RISE_S).exp()
        })
        .collect()
}

/// Peak value of the continuous kernel.
pub fn scr_kernel_peak() -> f64 {
    let t = (TAU_DECAY_S / TAU_RISE_S).ln() * TAU_DECAY_S * TAU_RISE_S / (TAU_DECAY_S - TAU_RISE_S);
    (-t / TAU_DECAY_S).exp() - (-t / TAU_RISE_S).exp()
}

/// Convolution with the kernel, realised as the difference of two first-order recursions.
#[derive(Debug, Clone, Copy)]
struct KernelOp {
    decay: f64,
    rise: f64,
}

impl KernelOp {
    fn new(fs: f64) -> Self {
        KernelOp {
            decay: (-1.0 / (TAU_DECAY_S * fs)).exp(),
            rise: (-1.0 / (TAU_RISE_S * fs)).exp(),
        }
    }

    fn forward(&self, d: &[f64], out: &mut [f64]) {
        let (mut yd, mut yr) = (0.0, 0.0);
        for (o, &v) in out.iter_mut().zip(d) {
            yd = self.decay * yd + v;
            yr = self.rise * yr + v;
            *o = yd - yr;
        }
    }

    fn adjoint(&self, r: &[f64], out: &mut [f64]) {
        let (mut yd, mut yr) = (0.0, 0.0);
        for (o, &v) in out.iter_mut().zip(r).rev() {
            yd = self.decay * yd + v;
            yr = self.rise * yr + v;
            *o = yd - yr;
        }
    }

    /// Operator norm squared; the kernel is non-negative so its gain peaks at DC.
    fn lipschitz(&self) -> f64 {
        let l1 = 1.0 / (1.0 - self.decay) - 1.0 / (1.0 - self.rise);
        l1 * l1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deconvolution {
    pub driver: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Non-negative least squares `min ½‖k * d − p‖²` subject to `d ≥ 0`, by accelerated
/// projected gradient, stopped once the relative projected-gradient step is below
/// [`SOLVER_TOLERANCE`].
pub fn deconvolve(phasic: &[f64], fs: f64) -> Deconvolution {
    let n = phasic.len();
    let op = KernelOp::new(fs);
    let step = 1.0 / op.lipschitz();
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut x_prev = vec![0.0; n];
    let mut conv = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut t = 1.0f64;

    let gradient = |at: &[f64], conv: &mut [f64], grad: &mut [f64]| {
        op.forward(at, conv);
        for (c, p) in conv.iter_mut().zip(phasic) {
            *c -= p;
        }
        op.adjoint(conv, grad);
    };
    let projected_residual = |x: &[f64], grad: &[f64]| {
        let (mut num, mut den) = (0.0, 0.0);
        for (&xi, &gi) in x.iter().zip(grad) {
            let r = xi - (xi - step * gi).max(0.0);
            num += r * r;
            den += xi * xi;
        }
        if num == 0.0 {
            0.0
        } else {
            (num / den.max(f64::MIN_POSITIVE)).sqrt()
        }
    };

    let mut iterations = 0;
    let mut residual = {
        gradient(&x, &mut conv, &mut grad);
        projected_residual(&x, &grad)
    };
    while residual > SOLVER_TOLERANCE && iterations < SOLVER_MAX_ITER {
        iterations += 1;
        gradient(&y, &mut conv, &mut grad);
        std::mem::swap(&mut x, &mut x_prev);
        for i in 0..n {
            x[i] = (y[i] - step * grad[i]).max(0.0);
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        for i in 0..n {
            y[i] = x[i] + momentum * (x[i] - x_prev[i]);
        }
        t = t_next;
        if iterations % 10 == 0 {
            gradient(&x, &mut conv, &mut grad);
            residual = projected_residual(&x, &grad);
        }
    }
    Deconvolution {
        driver: x,
        iterations,
        residual,
    }
}

/// Intermediate EDA signals at the working rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EdaDecomposition {
    pub fs: f64,
    /// Time of sample 0 relative to the first input sample.
    pub offset: f64,
    pub raw: Vec<f64>,
    pub tonic: Vec<f64>,
    pub phasic: Vec<f64>,
    pub peaks: Vec<usize>,
    pub amplitudes: Vec<f64>,
    pub driver: Vec<f64>,
}

impl EdaDecomposition {
    pub fn time_of(&self, index: usize) -> f64 {
        self.offset + index as f64 / self.fs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdaFeatures {
    pub n_peaks: usize,
    pub mean_peak_amp: Option<f64>,
    pub mean_smna: f64,
}

pub fn decompose(eda: &[f64], fs: f64) -> Result<EdaDecomposition, FeatureError> {
    let need = (MIN_DURATION_S * fs).ceil() as usize;
    if eda.len() < need {
        return Err(FeatureError::TooShort {
            signal: "eda",
            need_s: MIN_DURATION_S,
            got_s: eda.len() as f64 / fs,
        });
    }
    let factor = decimation_factor(fs, EDA_FS);
    let (raw, offset) = decimate_mean(eda, factor, fs);
    let wfs = fs / factor as f64;
    let tonic = Sos::butter_lowpass(2, TONIC_CUTOFF_HZ, wfs).filtfilt(&raw);
    let phasic: Vec<f64> = raw.iter().zip(&tonic).map(|(r, t)| r - t).collect();

    let distance = (MIN_PEAK_DISTANCE_S * wfs).round() as usize;
    let candidates = find_peaks(&phasic, MIN_PROMINENCE_US, distance);
    let lookback = (ONSET_LOOKBACK_S * wfs) as usize;
    let mut peaks = Vec::with_capacity(candidates.len());
    let mut amplitudes = Vec::with_capacity(candidates.len());
    let mut prev = 0;
    for p in candidates {
        let from = prev.max(p.saturating_sub(lookback));
        let onset = (from..=p)
            .min_by(|&a, &b| phasic[a].total_cmp(&phasic[b]))
            .unwrap_or(p);
        // Filter undershoot produces humps that are not a rise in conductance.
        let amp = raw[p] - raw[onset];
        if amp >= MIN_PROMINENCE_US {
            peaks.push(p);
            amplitudes.push(amp);
        }
        prev = p;
    }
    let driver = deconvolve(&phasic, wfs).driver;
    Ok(EdaDecomposition {
        fs: wfs,
        offset,
        raw,
        tonic,
        phasic,
        peaks,
        amplitudes,
        driver,
    })
}

pub fn eda_features(eda: &[f64], fs: f64) -> Result<EdaFeatures, FeatureError> {
    let d = decompose(eda, fs)?;
    Ok(EdaFeatures {
        n_peaks: d.peaks.len(),
        mean_peak_amp: (!d.amplitudes.is_empty()).then(|| mean(&d.amplitudes)),
        mean_smna: mean(&d.driver),
    })
}
