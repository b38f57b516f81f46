//! Synthetic 50 Hz accelerometer streams for each activity.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use smartrescue_core::edge::SAMPLE_RATE_HZ;
use smartrescue_core::model::ActivityState;

use crate::SimError;

pub const STILL_NOISE_G: f64 = 0.01;
pub const WALK_AMPLITUDE_G: f64 = 0.3;
pub const WALK_FREQ_HZ: f64 = 1.8;
pub const WALK_NOISE_G: f64 = 0.05;
pub const RUN_AMPLITUDE_G: f64 = 0.9;
pub const RUN_FREQ_HZ: f64 = 2.8;
pub const RUN_NOISE_G: f64 = 0.1;
pub const VEHICLE_NOISE_G: f64 = 0.08;
/// Slow sway of a moving vehicle, well below any step frequency.
pub const VEHICLE_DRIFT_G: f64 = 0.03;
pub const VEHICLE_DRIFT_HZ: f64 = 0.15;
pub const FALL_SPIKE_G: f64 = 3.0;
pub const FALL_SPIKE_SAMPLES: usize = 2;

/// Stateful sample source. Time advances one sample per call so periodic
/// components stay phase-continuous across activity changes.
#[derive(Debug, Clone)]
pub struct AccelGenerator {
    rng: ChaCha8Rng,
    index: u64,
    spike_left: usize,
}

impl AccelGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            index: 0,
            spike_left: 0,
        }
    }

    /// Emit an impact spike on the next samples.
    pub fn inject_fall(&mut self) {
        self.spike_left = FALL_SPIKE_SAMPLES;
    }

    fn noise(&mut self, sigma: f64) -> [f64; 3] {
        let n = Normal::new(0.0, sigma).expect("sigma is a positive constant");
        [
            n.sample(&mut self.rng),
            n.sample(&mut self.rng),
            n.sample(&mut self.rng),
        ]
    }

    pub fn sample(&mut self, state: ActivityState) -> [f64; 3] {
        let t = self.index as f64 / SAMPLE_RATE_HZ;
        self.index += 1;
        if self.spike_left > 0 {
            self.spike_left -= 1;
            return [0.0, 0.0, FALL_SPIKE_G];
        }
        let (vertical, sigma) = match state {
            ActivityState::Walking => (WALK_AMPLITUDE_G * (TAU * WALK_FREQ_HZ * t).sin(), WALK_NOISE_G),
            ActivityState::Running => (RUN_AMPLITUDE_G * (TAU * RUN_FREQ_HZ * t).sin(), RUN_NOISE_G),
            ActivityState::InVehicle => (VEHICLE_DRIFT_G * (TAU * VEHICLE_DRIFT_HZ * t).sin(), VEHICLE_NOISE_G),
            ActivityState::Still | ActivityState::Unknown => (0.0, STILL_NOISE_G),
        };
        let [nx, ny, nz] = self.noise(sigma);
        [nx, ny, 1.0 + vertical + nz]
    }
}

fn sample_count(duration_s: f64, rate_hz: f64) -> Result<usize, SimError> {
    if rate_hz != SAMPLE_RATE_HZ {
        return Err(SimError::UnsupportedRate(rate_hz));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SimError::InvalidScenario("trace duration must be positive".into()));
    }
    Ok((duration_s * rate_hz).round() as usize)
}

/// A seeded trace of one activity.
pub fn accel_trace(state: ActivityState, duration_s: f64, rate_hz: f64, seed: u64) -> Result<Vec<[f64; 3]>, SimError> {
    let n = sample_count(duration_s, rate_hz)?;
    let mut g = AccelGenerator::new(seed);
    Ok((0..n).map(|_| g.sample(state)).collect())
}

/// A trace of `before` that is interrupted at `fall_at_s` by an impact spike
/// and continues as stillness.
pub fn accel_trace_with_fall(
    before: ActivityState,
    duration_s: f64,
    rate_hz: f64,
    fall_at_s: f64,
    seed: u64,
) -> Result<Vec<[f64; 3]>, SimError> {
    let n = sample_count(duration_s, rate_hz)?;
    let fall_index = (fall_at_s * rate_hz).round() as usize;
    let mut g = AccelGenerator::new(seed);
    Ok((0..n)
        .map(|i| {
            if i == fall_index {
                g.inject_fall();
            }
            g.sample(if i < fall_index { before } else { ActivityState::Still })
        })
        .collect())
}
