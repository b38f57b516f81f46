//! Publisher-side intelligence: activity classification, fall detection and
//! light-level interpretation.
//!
//! The classifier works on the magnitude series of a 128-sample, 50 Hz window.
//! Its features are the standard deviation of the magnitude, the mean
//! magnitude, and the dominant frequency found by an autocorrelation peak
//! search. Decision regions:
//!
//! | state      | rule                                                          |
//! |------------|---------------------------------------------------------------|
//! | STILL      | σ < 0.05 g and mean ∈ [0.8, 1.2] g                           |
//! | WALKING    | σ ∈ [0.15, 0.8] g and f* ∈ [1.2, 2.4] Hz                      |
//! | RUNNING    | σ > 0.8 g, or f* > 2.4 Hz and σ ≥ 0.15 g                      |
//! | IN_VEHICLE | σ ∈ (0.05, 0.15) g and no dominant periodic peak             |
//! | UNKNOWN    | anything else, confidence 0                                  |
//!
//! Confidence is `round(100 × margin)` where margin is the distance to the
//! nearest region boundary, each feature scaled by its saturation width
//! ([`SIGMA_SCALE_G`], [`FREQ_SCALE_HZ`], [`MEAN_SCALE_G`]) and clamped to
//! [0, 1].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActivityEstimate, ActivityState};

pub const SAMPLE_RATE_HZ: f64 = 50.0;
pub const WINDOW_LEN: usize = 128;

pub const STILL_MAX_SIGMA: f64 = 0.05;
pub const VEHICLE_MAX_SIGMA: f64 = 0.15;
pub const WALK_MAX_SIGMA: f64 = 0.8;
pub const WALK_MIN_FREQ_HZ: f64 = 1.2;
pub const WALK_MAX_FREQ_HZ: f64 = 2.4;
pub const STILL_MEAN_RANGE: (f64, f64) = (0.8, 1.2);

pub const SIGMA_SCALE_G: f64 = 0.05;
pub const FREQ_SCALE_HZ: f64 = 0.3;
pub const MEAN_SCALE_G: f64 = 0.2;

/// Minimum normalized autocorrelation for a periodic peak to count as dominant.
pub const PEAK_THRESHOLD: f64 = 0.4;
/// A shorter-lag peak wins over the strongest one if it reaches this fraction of it.
pub const SUBHARMONIC_RATIO: f64 = 0.85;
/// Frequencies searched by the estimator.
pub const MIN_FREQ_HZ: f64 = 0.8;
pub const MAX_FREQ_HZ: f64 = 6.0;

pub const IMPACT_THRESHOLD_G: f64 = 2.5;
pub const IMMOBILITY_MS: i64 = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EdgeError {
    #[error("window must hold exactly {WINDOW_LEN} samples, got {0}")]
    WindowLength(usize),
    #[error("window sample {0} is not finite")]
    NonFiniteSample(usize),
    #[error("lux must be finite and non-negative, got {0}")]
    NegativeLux(f64),
}

/// 128 consecutive accelerometer readings in g, sampled at 50 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelWindow {
    samples: Vec<[f64; 3]>,
    start_timestamp_ms: i64,
}

impl AccelWindow {
    pub fn new(samples: Vec<[f64; 3]>, start_timestamp_ms: i64) -> Result<Self, EdgeError> {
        if samples.len() != WINDOW_LEN {
            return Err(EdgeError::WindowLength(samples.len()));
        }
        if let Some(i) = samples.iter().position(|s| !s.iter().all(|c| c.is_finite())) {
            return Err(EdgeError::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            start_timestamp_ms,
        })
    }

    pub fn samples(&self) -> &[[f64; 3]] {
        &self.samples
    }

    pub fn start_timestamp_ms(&self) -> i64 {
        self.start_timestamp_ms
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| magnitude(*s)).collect()
    }

    pub fn mean_vector(&self) -> [f64; 3] {
        let n = self.samples.len() as f64;
        let mut acc = [0.0; 3];
        for s in &self.samples {
            for (a, c) in acc.iter_mut().zip(s) {
                *a += c;
            }
        }
        acc.map(|a| a / n)
    }
}

pub fn magnitude([x, y, z]: [f64; 3]) -> f64 {
    (x * x + y * y + z * z).sqrt()
}

/// A periodic component found in a signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominantFrequency {
    pub hz: f64,
    /// Normalized autocorrelation at the peak lag, in [-1, 1].
    pub strength: f64,
}

/// Dominant frequency of `signal` (sampled at `rate_hz`) from the strongest
/// local maximum of its normalized autocorrelation (preferring the shortest
/// lag among near-equal peaks). Returns `None` when the
/// signal has no variance or no local maximum reaches [`PEAK_THRESHOLD`].
pub fn dominant_frequency(signal: &[f64], rate_hz: f64) -> Option<DominantFrequency> {
    let n = signal.len();
    if n < 4 {
        return None;
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let energy: f64 = centered.iter().map(|v| v * v).sum();
    if energy <= f64::EPSILON * n as f64 {
        return None;
    }
    let min_lag = ((rate_hz / MAX_FREQ_HZ).floor() as usize).max(1);
    let max_lag = ((rate_hz / MIN_FREQ_HZ).ceil() as usize).min(n - 2);
    if min_lag + 1 >= max_lag {
        return None;
    }
    // unbiased normalization so long lags are not penalized for fewer terms
    let acf = |lag: usize| -> f64 {
        let s: f64 = centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum();
        (s / (n - lag) as f64) / (energy / n as f64)
    };
    let values: Vec<f64> = (min_lag - 1..=max_lag + 1).map(acf).collect();
    let peaks: Vec<(usize, f64)> = (1..values.len() - 1)
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .map(|i| (i, values[i]))
        .collect();
    let best = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if best < PEAK_THRESHOLD {
        return None;
    }
    // multiples of the true period peak almost as high; take the shortest lag
    // that is close to the best one
    let (i, strength) = *peaks.iter().find(|p| p.1 >= SUBHARMONIC_RATIO * best)?;
    // parabolic interpolation around the peak for sub-lag resolution
    let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (min_lag - 1 + i) as f64 + shift;
    Some(DominantFrequency {
        hz: rate_hz / lag,
        strength,
    })
}

/// Features the classifier decides on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFeatures {
    pub mean: f64,
    pub sigma: f64,
    pub peak: Option<DominantFrequency>,
}

impl WindowFeatures {
    pub fn from_magnitudes(m: &[f64]) -> Self {
        let n = m.len() as f64;
        let mean = m.iter().sum::<f64>() / n;
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            sigma: var.sqrt(),
            peak: dominant_frequency(m, SAMPLE_RATE_HZ),
        }
    }
}

fn margin(distances: &[f64]) -> f64 {
    distances.iter().copied().fold(f64::INFINITY, f64::min).clamp(0.0, 1.0)
}

fn estimate(state: ActivityState, margin: f64) -> ActivityEstimate {
    ActivityEstimate {
        state,
        confidence: (100.0 * margin).round().clamp(0.0, 100.0) as u8,
    }
}

/// Classify features into an activity with a margin-based confidence.
pub fn classify_features(f: &WindowFeatures) -> ActivityEstimate {
    let sigma = f.sigma;
    let (mean_lo, mean_hi) = STILL_MEAN_RANGE;

    if sigma < STILL_MAX_SIGMA {
        if f.mean >= mean_lo && f.mean <= mean_hi {
            return estimate(
                ActivityState::Still,
                margin(&[
                    (STILL_MAX_SIGMA - sigma) / SIGMA_SCALE_G,
                    (f.mean - mean_lo) / MEAN_SCALE_G,
                    (mean_hi - f.mean) / MEAN_SCALE_G,
                ]),
            );
        }
        return estimate(ActivityState::Unknown, 0.0);
    }

    if let Some(peak) = f.peak {
        let hz = peak.hz;
        if (VEHICLE_MAX_SIGMA..=WALK_MAX_SIGMA).contains(&sigma) && (WALK_MIN_FREQ_HZ..=WALK_MAX_FREQ_HZ).contains(&hz)
        {
            return estimate(
                ActivityState::Walking,
                margin(&[
                    (sigma - VEHICLE_MAX_SIGMA) / SIGMA_SCALE_G,
                    (WALK_MAX_SIGMA - sigma) / SIGMA_SCALE_G,
                    (hz - WALK_MIN_FREQ_HZ) / FREQ_SCALE_HZ,
                    (WALK_MAX_FREQ_HZ - hz) / FREQ_SCALE_HZ,
                ]),
            );
        }
    }

    let by_frequency = f
        .peak
        .filter(|p| p.hz > WALK_MAX_FREQ_HZ && sigma >= VEHICLE_MAX_SIGMA)
        .map(|p| {
            margin(&[
                (p.hz - WALK_MAX_FREQ_HZ) / FREQ_SCALE_HZ,
                (sigma - VEHICLE_MAX_SIGMA) / SIGMA_SCALE_G,
            ])
        });
    let by_intensity = (sigma > WALK_MAX_SIGMA).then(|| margin(&[(sigma - WALK_MAX_SIGMA) / SIGMA_SCALE_G]));
    if let Some(m) = by_frequency.into_iter().chain(by_intensity).reduce(f64::max) {
        return estimate(ActivityState::Running, m);
    }

    if sigma > STILL_MAX_SIGMA && sigma < VEHICLE_MAX_SIGMA && f.peak.is_none() {
        return estimate(
            ActivityState::InVehicle,
            margin(&[
                (sigma - STILL_MAX_SIGMA) / SIGMA_SCALE_G,
                (VEHICLE_MAX_SIGMA - sigma) / SIGMA_SCALE_G,
            ]),
        );
    }

    estimate(ActivityState::Unknown, 0.0)
}

pub fn classify_magnitudes(magnitudes: &[f64]) -> ActivityEstimate {
    classify_features(&WindowFeatures::from_magnitudes(magnitudes))
}

pub fn classify_activity(window: &AccelWindow) -> ActivityEstimate {
    classify_magnitudes(&window.magnitudes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallAlert {
    pub impact_time_ms: i64,
}

#[derive(Debug, Clone, Copy)]
struct PendingImpact {
    impact_time_ms: i64,
    still_samples: usize,
}

/// Streaming fall detector over accelerometer magnitudes at 50 Hz.
///
/// An impact is the first sample of a run at or above [`IMPACT_THRESHOLD_G`].
/// After the run ends, the following samples are cut into consecutive
/// 128-sample windows; every window must classify STILL until at least
/// [`IMMOBILITY_MS`] of stillness has accumulated, at which point one alert
/// fires for that impact. A non-STILL window cancels the impact.
#[derive(Debug, Default, Clone)]
pub struct FallDetector {
    pending: Option<PendingImpact>,
    in_spike: bool,
    window: Vec<f64>,
}

impl FallDetector {
    pub fn new() -> Self {
        Self::default()
    }

    fn samples_needed() -> usize {
        (IMMOBILITY_MS as f64 * SAMPLE_RATE_HZ / 1000.0).ceil() as usize
    }

    /// Feed one sample; returns an alert when an impact has been followed by
    /// enough stillness.
    pub fn push(&mut self, magnitude: f64, timestamp_ms: i64) -> Option<FallAlert> {
        if magnitude >= IMPACT_THRESHOLD_G {
            if !self.in_spike {
                self.pending = Some(PendingImpact {
                    impact_time_ms: timestamp_ms,
                    still_samples: 0,
                });
            }
            self.in_spike = true;
            self.window.clear();
            return None;
        }
        self.in_spike = false;
        let pending = self.pending.as_mut()?;
        self.window.push(magnitude);
        if self.window.len() < WINDOW_LEN {
            return None;
        }
        let estimate = classify_magnitudes(&self.window);
        self.window.clear();
        if estimate.state != ActivityState::Still {
            self.pending = None;
            return None;
        }
        pending.still_samples += WINDOW_LEN;
        if pending.still_samples >= Self::samples_needed() {
            let alert = FallAlert {
                impact_time_ms: pending.impact_time_ms,
            };
            self.pending = None;
            return Some(alert);
        }
        None
    }

    pub fn has_pending_impact(&self) -> bool {
        self.pending.is_some()
    }
}

/// Run a fresh detector over a magnitude history that starts at
/// `start_timestamp_ms`. Histories shorter than the immobility period never
/// alert.
pub fn detect_fall(history: &[f64], start_timestamp_ms: i64) -> Vec<FallAlert> {
    let period_ms = 1000.0 / SAMPLE_RATE_HZ;
    if (history.len() as f64) * period_ms < IMMOBILITY_MS as f64 {
        return Vec::new();
    }
    let mut detector = FallDetector::new();
    history
        .iter()
        .enumerate()
        .filter_map(|(i, m)| detector.push(*m, start_timestamp_ms + (i as f64 * period_ms).round() as i64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LightLabel {
    Dark,
    Dim,
    Indoor,
    Bright,
    DirectSun,
}

impl LightLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            LightLabel::Dark => "DARK",
            LightLabel::Dim => "DIM",
            LightLabel::Indoor => "INDOOR",
            LightLabel::Bright => "BRIGHT",
            LightLabel::DirectSun => "DIRECT_SUN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightInterpretation {
    pub lux: f64,
    pub label: LightLabel,
}

/// Left-closed bands: DARK [0,10), DIM [10,200), INDOOR [200,1000),
/// BRIGHT [1000,10000), DIRECT_SUN [10000,∞).
pub fn interpret_light(lux: f64) -> Result<LightInterpretation, EdgeError> {
    if !lux.is_finite() || lux < 0.0 {
        return Err(EdgeError::NegativeLux(lux));
    }
    let label = match lux {
        l if l < 10.0 => LightLabel::Dark,
        l if l < 200.0 => LightLabel::Dim,
        l if l < 1_000.0 => LightLabel::Indoor,
        l if l < 10_000.0 => LightLabel::Bright,
        _ => LightLabel::DirectSun,
    };
    Ok(LightInterpretation { lux, label })
}
