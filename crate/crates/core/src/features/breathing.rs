//! Breathing rate and variability from a thoracic strain signal.

use super::dsp::{decimate_mean, decimation_factor, filtfilt_predicted, linear_fit, mean, parabolic_offset, pop_std, Sos};
use super::FeatureError;

pub const BAND_LOW_HZ: f64 = 0.1;
pub const BAND_HIGH_HZ: f64 = 0.35;
pub const FILTER_ORDER: usize = 4;
/// Working rate after decimation.
pub const BREATH_FS: f64 = 8.0;
/// Linear-prediction order and horizon (s) for edge extension before filtering.
const AR_ORDER: usize = 16;
const EXTEND_S: f64 = 30.0;
pub const MIN_DURATION_S: f64 = 20.0;
/// Wider band used only to time the peak within each detected cycle, so that
/// cycle-to-cycle variation survives the narrow detection band.
pub const TIMING_LOW_HZ: f64 = 0.05;
pub const TIMING_HIGH_HZ: f64 = 1.0;
/// Hysteresis band for cycle detection, as a fraction of the filtered signal's SD.
const HYSTERESIS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreathingFeatures {
    pub rate_bpm: Option<f64>,
    pub rmssd: Option<f64>,
    pub rate_bpm_integrated: Option<f64>,
    pub rmssd_integrated: Option<f64>,
}

pub fn bandpass(fs: f64) -> Sos {
    Sos::butter_bandpass(FILTER_ORDER, BAND_LOW_HZ, BAND_HIGH_HZ, fs)
}

/// Times (s, relative to sample 0) of one peak per breathing cycle. Cycles are
/// positive excursions of `detect` bounded by hysteresis crossings on both sides;
/// excursions cut by the window edges are dropped. The peak is the maximum of
/// `timing` within the excursion, refined by parabolic interpolation.
pub fn cycle_peaks(detect: &[f64], timing: &[f64], fs: f64) -> Vec<f64> {
    let h = HYSTERESIS * pop_std(detect);
    if h.is_nan() || h <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut seen_low = false;
    let mut start: Option<usize> = None;
    for (i, &v) in detect.iter().enumerate() {
        match start {
            None if v < -h => seen_low = true,
            None if seen_low && v > h => start = Some(i),
            Some(s) if v < -h => {
                let p = (s..i).max_by(|&a, &b| timing[a].total_cmp(&timing[b])).unwrap_or(s);
                out.push((p as f64 + parabolic_offset(timing, p)) / fs);
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Breathing rate (breaths/min) and RMSSD (s) from cycle peak times.
pub fn rate_and_rmssd(peaks: &[f64]) -> (Option<f64>, Option<f64>) {
    let intervals: Vec<f64> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    if intervals.is_empty() {
        return (None, None);
    }
    let rate = 60.0 / mean(&intervals);
    let diffs: Vec<f64> = intervals.windows(2).map(|w| (w[1] - w[0]).powi(2)).collect();
    let rmssd = (!diffs.is_empty()).then(|| mean(&diffs).sqrt());
    (Some(rate), rmssd)
}

/// Peak times (relative to the first input sample) for the direct and the integrated signal.
pub fn breathing_peaks(x: &[f64], fs: f64) -> Result<(Vec<f64>, Vec<f64>), FeatureError> {
    let got_s = x.len() as f64 / fs;
    if got_s < MIN_DURATION_S {
        return Err(FeatureError::TooShort {
            signal: "breathing",
            need_s: MIN_DURATION_S,
            got_s,
        });
    }
    let factor = decimation_factor(fs, BREATH_FS);
    let (low, offset) = decimate_mean(x, factor, fs);
    let wfs = fs / factor as f64;
    let filter = bandpass(wfs);
    let pad = (EXTEND_S * wfs) as usize;
    let wide = Sos::butter_bandpass(FILTER_ORDER, TIMING_LOW_HZ, TIMING_HIGH_HZ, wfs);
    let peaks_of = |x: &[f64]| {
        let detect = filtfilt_predicted(&filter, x, AR_ORDER, pad);
        let timing = filtfilt_predicted(&wide, x, AR_ORDER, pad);
        cycle_peaks(&detect, &timing, wfs)
    };
    let direct = peaks_of(&low);

    // Integrate around the linear trend so that drift does not become a parabola.
    let (c, slope) = linear_fit(&low);
    let mut acc = 0.0;
    let integral: Vec<f64> = low
        .iter()
        .enumerate()
        .map(|(i, v)| {
            acc += (v - c - slope * i as f64) / wfs;
            acc
        })
        .collect();
    let integrated = peaks_of(&integral);
    let shift = |v: Vec<f64>| v.into_iter().map(|t| t + offset).collect();
    Ok((shift(direct), shift(integrated)))
}

pub fn breathing_features(x: &[f64], fs: f64) -> Result<BreathingFeatures, FeatureError> {
    let (direct, integrated) = breathing_peaks(x, fs)?;
    let (rate_bpm, rmssd) = rate_and_rmssd(&direct);
    let (rate_bpm_integrated, rmssd_integrated) = rate_and_rmssd(&integrated);
    Ok(BreathingFeatures {
        rate_bpm,
        rmssd,
        rate_bpm_integrated,
        rmssd_integrated,
    })
}
