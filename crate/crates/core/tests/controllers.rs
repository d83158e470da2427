use fxanc::control::{dc_prenull, Pid, PidGains, PrenullConfig};
use fxanc::experiment::{prenull_stage, run_pid_baseline, run_raw_stage, ExperimentConfig};
use fxanc::plant::{ChannelConfig, EnvironmentConfig, ReferenceSensorConfig, Rig, SecondaryPathChannel};
use fxanc::rng::stream_rng;
use fxanc::AncError;

const FS: f64 = 5000.0;

fn tuned_gains(limit: f64) -> PidGains {
    let p = ExperimentConfig::default().pid;
    PidGains::new(p.kp, p.ki, p.kd, limit, 1.0 / FS).unwrap()
}

/// Error-sensor trace of a PID loop on one channel under disturbance `d(n)`.
fn closed_loop(channel: &ChannelConfig, gains: PidGains, d: impl Fn(usize) -> f64, n: usize) -> Vec<f64> {
    let mut ch = SecondaryPathChannel::new(channel, FS, stream_rng(5, 0)).unwrap();
    let mut pid = Pid::new(gains).unwrap();
    (0..n)
        .map(|k| {
            let e = ch.read(d(k) + ch.pending_field());
            ch.apply(pid.step(-e).unwrap());
            e
        })
        .collect()
}

/// Seconds from `start` until `|e|` stays below `tol` for the rest of the trace.
fn settle_time(e: &[f64], start: usize, tol: f64) -> f64 {
    let last_out = e[start..].iter().rposition(|v| v.abs() >= tol).map_or(0, |i| i + 1);
    last_out as f64 / FS
}

#[test]
fn step_disturbance_is_rejected_within_two_seconds() {
    let step = 200.0;
    let e = closed_loop(&ChannelConfig::default(), tuned_gains(1000.0), |_| step, (3.0 * FS) as usize);
    let t = settle_time(&e, 0, 0.01 * step);
    assert!(t < 2.0, "settled after {t} s");
}

#[test]
fn clamped_integrator_recovers_without_windup_tail() {
    let quiet = ChannelConfig {
        sensor_noise_nt: 0.0,
        quantize: false,
        ..Default::default()
    };
    // A disturbance the actuator cannot reach for 5 s, then one it can.
    let (big, small, switch) = (3000.0, 500.0, (5.0 * FS) as usize);
    let d = |k: usize| if k < switch { big } else { small };
    let n = (10.0 * FS) as usize;
    let free = closed_loop(&quiet, tuned_gains(1e6), d, n);
    let clamped = closed_loop(&quiet, tuned_gains(10.0), d, n);
    assert!(clamped[switch - 1] > 1000.0, "actuator should be saturated before the switch");
    let t_free = settle_time(&free, switch, 0.01 * small);
    let t_clamped = settle_time(&clamped, switch, 0.01 * small);
    assert!(t_free > 0.0);
    assert!(t_clamped <= 2.0 * t_free, "clamped {t_clamped} s vs free {t_free} s");
}

fn rig(env: EnvironmentConfig) -> Rig {
    Rig::new(&env, &Default::default(), &ReferenceSensorConfig::default(), FS, 3).unwrap()
}

#[test]
fn prenull_cancels_earth_field() {
    let mut r = rig(EnvironmentConfig::dc_only([48000.0, 5000.0, 20000.0]));
    let res = dc_prenull(&mut r, &tuned_gains(1000.0), &PrenullConfig::default()).unwrap();
    for i in 0..3 {
        assert!(res.residual_mean_nt[i].abs() < 5.0, "{:?}", res.residual_mean_nt);
    }
    // Channel DC gain is 100 nT per unit.
    assert!((res.offsets[0] + 480.0).abs() < 0.1, "{:?}", res.offsets);
    assert!((res.offsets[2] + 200.0).abs() < 0.1, "{:?}", res.offsets);
}

#[test]
fn prenull_of_zero_field_gives_zero_offsets() {
    let mut r = rig(EnvironmentConfig::dc_only([0.0; 3]));
    let res = dc_prenull(&mut r, &tuned_gains(1000.0), &PrenullConfig::default()).unwrap();
    assert!(res.offsets.iter().all(|o| o.abs() < 1e-3), "{:?}", res.offsets);
}

#[test]
fn prenull_beyond_actuator_range_times_out_saturated() {
    let mut r = rig(EnvironmentConfig::dc_only([250_000.0, 0.0, 0.0]));
    let cfg = PrenullConfig {
        timeout_s: 3.0,
        ..Default::default()
    };
    match dc_prenull(&mut r, &tuned_gains(1000.0), &cfg) {
        Err(AncError::PrenullTimeout {
            saturated,
            final_mean_nt,
            ..
        }) => {
            assert!(saturated);
            assert!(final_mean_nt[0] > 1000.0);
        }
        other => panic!("expected timeout, got {other:?}"),
    }
}

#[test]
fn null_pid_reproduces_the_raw_stage() {
    let c = ExperimentConfig {
        duration_anc_s: 5.0,
        analysis_s: 5.0,
        ..Default::default()
    };
    let (_, prenull) = prenull_stage(&c).unwrap();
    let mut zero = c.clone();
    zero.pid.kp = 0.0;
    zero.pid.ki = 0.0;
    zero.pid.kd = 0.0;
    let raw = run_raw_stage(&c, &prenull).unwrap();
    let pid = run_pid_baseline(&zero, &prenull).unwrap();
    assert_eq!(raw, pid);
}

#[test]
fn pid_baseline_reduces_band_rms() {
    let c = ExperimentConfig::default();
    let (_, prenull) = prenull_stage(&c).unwrap();
    let raw = run_raw_stage(&c, &prenull).unwrap();
    let pid = run_pid_baseline(&c, &prenull).unwrap();
    let params = &c.welch;
    for i in 0..3 {
        let tail = |b: &fxanc::signal::SampleBuffer| b.tail(c.samples(c.analysis_s));
        let r = fxanc::signal::rms_in_band(&tail(&raw.error[i]), 0.0, 1000.0, params).unwrap();
        let p = fxanc::signal::rms_in_band(&tail(&pid.error[i]), 0.0, 1000.0, params).unwrap();
        assert!(p < r, "axis {i}: pid {p} raw {r}");
        // Below a few hertz the loop has gain, so the drift is strongly reduced.
        let rl = fxanc::signal::rms_in_band(&tail(&raw.error[i]), 0.0, 2.0, params).unwrap();
        let pl = fxanc::signal::rms_in_band(&tail(&pid.error[i]), 0.0, 2.0, params).unwrap();
        assert!(pl < 0.1 * rl, "axis {i}: pid {pl} raw {rl} below 2 Hz");
    }
}
