use smartrescue_core::edge::{
    classify_activity, detect_fall, dominant_frequency, magnitude, AccelWindow, SAMPLE_RATE_HZ, WINDOW_LEN,
};
use smartrescue_core::model::ActivityState;
use smartrescue_sim::{accel_trace, accel_trace_with_fall, SimError};

fn mags(trace: &[[f64; 3]]) -> Vec<f64> {
    trace.iter().map(|s| magnitude(*s)).collect()
}

/// One classification window cut from a seeded trace at a seed-dependent phase.
fn labeled_window(state: ActivityState, seed: u64) -> AccelWindow {
    let trace = accel_trace(state, 5.12, SAMPLE_RATE_HZ, seed).unwrap();
    let offset = (seed as usize * 37) % WINDOW_LEN;
    AccelWindow::new(trace[offset..offset + WINDOW_LEN].to_vec(), 0).unwrap()
}

#[test]
fn still_trace_stays_within_five_sigma_of_one_g() {
    for seed in 0..20 {
        let m = mags(&accel_trace(ActivityState::Still, 30.0, SAMPLE_RATE_HZ, seed).unwrap());
        assert_eq!(m.len(), 1500);
        assert!(m.iter().all(|v| (v - 1.0).abs() <= 0.05), "seed {seed}");
    }
}

#[test]
fn walking_dominant_frequency_near_step_rate() {
    for seed in 0..50 {
        let trace = accel_trace(ActivityState::Walking, 2.56, SAMPLE_RATE_HZ, seed).unwrap();
        let m = mags(&trace);
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        let centered: Vec<f64> = m.iter().map(|v| v - mean).collect();
        let f = dominant_frequency(&centered, SAMPLE_RATE_HZ).expect("walking has a periodic peak");
        assert!((1.6..=2.0).contains(&f.hz), "seed {seed}: {} Hz", f.hz);
    }
}

#[test]
fn labeled_traces_classify_as_generated() {
    for state in [ActivityState::Still, ActivityState::Walking, ActivityState::Running] {
        let agree = (0..200)
            .filter(|seed| classify_activity(&labeled_window(state, *seed)).state == state)
            .count();
        assert!(agree >= 190, "{state}: {agree}/200");
    }
    let walking_conf: Vec<u8> = (0..200)
        .map(|s| classify_activity(&labeled_window(ActivityState::Walking, s)).confidence)
        .collect();
    let confident = walking_conf.iter().filter(|c| **c >= 70).count();
    assert!(confident >= 190, "walking confidence >= 70 in {confident}/200");
}

#[test]
fn vehicle_traces_mostly_classify_in_vehicle() {
    let agree = (0..200)
        .filter(|seed| {
            classify_activity(&labeled_window(ActivityState::InVehicle, *seed)).state == ActivityState::InVehicle
        })
        .count();
    assert!(agree >= 150, "{agree}/200");
}

#[test]
fn fall_traces_alert_exactly_once_and_clean_traces_never() {
    for seed in 0..50 {
        let before = [ActivityState::Walking, ActivityState::Running, ActivityState::Still][seed as usize % 3];
        let trace = accel_trace_with_fall(before, 20.0, SAMPLE_RATE_HZ, 4.0, seed).unwrap();
        let m = mags(&trace);
        assert!(m[200] >= 2.5 && m[201] >= 2.5);
        let alerts = detect_fall(&m, 0);
        assert_eq!(alerts.len(), 1, "seed {seed}");
        assert_eq!(alerts[0].impact_time_ms, 4_000);

        for state in [
            ActivityState::Still,
            ActivityState::Walking,
            ActivityState::Running,
            ActivityState::InVehicle,
        ] {
            let clean = mags(&accel_trace(state, 20.0, SAMPLE_RATE_HZ, seed).unwrap());
            assert!(detect_fall(&clean, 0).is_empty(), "{state} seed {seed}");
        }
    }
}

#[test]
fn spike_then_walking_does_not_alert() {
    let mut m = mags(&accel_trace(ActivityState::Walking, 20.0, SAMPLE_RATE_HZ, 3).unwrap());
    m[100] = 3.0;
    m[101] = 3.0;
    assert!(detect_fall(&m, 0).is_empty());
}

#[test]
fn traces_are_deterministic_and_rate_is_fixed() {
    let a = accel_trace(ActivityState::Running, 3.0, SAMPLE_RATE_HZ, 9).unwrap();
    let b = accel_trace(ActivityState::Running, 3.0, SAMPLE_RATE_HZ, 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, accel_trace(ActivityState::Running, 3.0, SAMPLE_RATE_HZ, 10).unwrap());
    assert!(matches!(
        accel_trace(ActivityState::Still, 1.0, 100.0, 1),
        Err(SimError::UnsupportedRate(_))
    ));
}
