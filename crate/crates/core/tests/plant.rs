use fxanc::experiment::{run_anc_stage, run_sp_stage, ExperimentConfig};
use fxanc::plant::{ChannelConfig, EnvironmentConfig, NoiseShape, Quantizer, ReferenceSensorConfig, Rig, ShapedNoise};
use fxanc::rng::stream_rng;
use fxanc::signal::{welch_psd, SampleBuffer, WelchParams, Window};
use fxanc::AncError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 5000.0;

fn ideal_channels() -> [ChannelConfig; 3] {
    let c = ChannelConfig {
        sensor_noise_nt: 0.0,
        quantize: false,
        ..Default::default()
    };
    [c.clone(), c.clone(), c]
}

fn ideal_reference() -> ReferenceSensorConfig {
    ReferenceSensorConfig {
        noise_nt: 0.0,
        quantize: false,
        ..Default::default()
    }
}

fn drives(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [0; 3].map(|_| rng.random_range(-2.0..2.0)))
        .collect()
}

fn record(env: &EnvironmentConfig, drive: &[[f64; 3]], seed: u64) -> Vec<([f64; 3], [f64; 3])> {
    let mut rig = Rig::new(env, &ideal_channels(), &ideal_reference(), FS, seed).unwrap();
    drive
        .iter()
        .map(|d| {
            let r = rig.sense(*d);
            (r.error_sensor_nt, r.reference_sensor_nt)
        })
        .collect()
}

#[test]
fn superposition_of_ambient_and_drive() {
    let ambient = EnvironmentConfig::default();
    let silent = EnvironmentConfig {
        dc_field_nt: [0.0; 3],
        ..ambient.static_part()
    };
    let d = drives(3000, 4);
    let zero = vec![[0.0; 3]; d.len()];
    let both = record(&ambient, &d, 9);
    let amb_only = record(&ambient, &zero, 9);
    let drive_only = record(&silent, &d, 9);
    for n in 0..d.len() {
        for i in 0..3 {
            let e = both[n].0[i] - amb_only[n].0[i];
            let r = both[n].1[i] - amb_only[n].1[i];
            let scale = both[n].0[i].abs().max(1.0);
            assert!((e - drive_only[n].0[i]).abs() < 1e-9 * scale, "tick {n} axis {i}");
            assert!((r - drive_only[n].1[i]).abs() < 1e-9 * scale, "tick {n} axis {i}");
        }
    }
}

#[test]
fn identical_seed_gives_identical_readings() {
    let env = EnvironmentConfig::default();
    let ch: [ChannelConfig; 3] = Default::default();
    let rs = ReferenceSensorConfig::default();
    let d = drives(5000, 1);
    let run = |seed| {
        let mut rig = Rig::new(&env, &ch, &rs, FS, seed).unwrap();
        d.iter().map(|x| rig.sense(*x)).collect::<Vec<_>>()
    };
    let a = run(77);
    let b = run(77);
    assert!(a.iter().zip(&b).all(|(x, y)| {
        x.tick == y.tick
            && x.error_sensor_nt.map(f64::to_bits) == y.error_sensor_nt.map(f64::to_bits)
            && x.reference_sensor_nt.map(f64::to_bits) == y.reference_sensor_nt.map(f64::to_bits)
    }));
    assert_ne!(a, run(78));
}

#[test]
fn cross_correlation_peak_sits_at_group_delay() {
    let cfg = ChannelConfig {
        sensor_noise_nt: 0.0,
        quantize: false,
        ..Default::default()
    };
    let mut ch = fxanc::plant::SecondaryPathChannel::new(&cfg, FS, stream_rng(1, 0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 40_000;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| ch.plant_step(*v)).collect();
    let xcorr = |lag: usize| (0..n - lag).map(|k| x[k] * y[k + lag]).sum::<f64>();
    let peak = (0..100).max_by(|a, b| xcorr(*a).total_cmp(&xcorr(*b))).unwrap();
    // Actuator [0.7, 0.3] contributes 0.3 samples, the 63-tap low-pass 31, the delay 5.
    let expected = 0.3 + 31.0 + cfg.extra_delay_samples as f64;
    assert!((peak as f64 - expected).abs() <= 1.0, "peak {peak}, expected {expected}");
}

#[test]
fn pink_noise_falls_ten_db_per_decade() {
    let shape = NoiseShape::Pink {
        corner_lo_hz: 0.1,
        corner_hi_hz: 2000.0,
        rolloff_order: 0,
    };
    let mut g = ShapedNoise::new(shape, 10.0, FS, stream_rng(3, 0)).unwrap();
    let x: Vec<f64> = (0..(400.0 * FS) as usize).map(|_| g.next_sample()).collect();
    let psd = welch_psd(&SampleBuffer::new(x, FS).unwrap(), &WelchParams::new(8192, 0.5, Window::Hann)).unwrap();
    // Least-squares slope of 10 log10 PSD against log10 f over 1-500 Hz.
    let pts: Vec<(f64, f64)> = psd
        .iter()
        .filter(|(f, _)| *f >= 1.0 && *f <= 500.0)
        .map(|(f, p)| (f.log10(), 10.0 * p.log10()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((slope + 10.0).abs() <= 3.0, "slope {slope} dB/decade");
}

#[test]
fn strong_echo_destabilises_a_step_size_that_is_stable_without_it() {
    let run = |echo: f64| {
        let mut c = ExperimentConfig::default();
        c.environment.echo_coupling = echo;
        c.mu_anc_safety = 0.02;
        c.anc.phase1_max_s = 20.0;
        let sp = run_sp_stage(&c).unwrap();
        run_anc_stage(&c, &sp.models, &sp.prenull)
    };
    let quiet = run(0.0).expect("stable without echo");
    assert!(quiet.phase2.error.iter().all(|e| e.rms() < 100.0));
    for echo in [0.8, 0.9] {
        match run(echo) {
            Err(AncError::Divergence { context, .. }) => assert!(context.contains("axis"), "{context}"),
            other => panic!("echo {echo}: expected divergence, got {:?}", other.map(|r| r.weight_drift())),
        }
    }
}

proptest! {
    #[test]
    fn quantisation_error_within_half_step(bits in 8u32..=24, range in 1.0f64..1e4, frac in -0.999f64..0.999) {
        let q = Quantizer::new(bits, range).unwrap();
        let v = frac * range;
        let (out, clipped) = q.quantize(v);
        prop_assert!(!clipped);
        prop_assert!((out - v).abs() <= q.step() / 2.0 * (1.0 + 1e-12));
        prop_assert!((q.step() - 2.0 * range / 2f64.powi(bits as i32)).abs() <= 1e-15 * range);
    }
}
