//! Byte-format round trips, corruption handling, and the scaling-fit math.

use baton_core::bench::{bench_bundle, fit_scaling_exponent, measure_latency, BenchConfig};
use baton_core::denoiser::Backbone;
use baton_core::diffusion::{DiffusionSchedule, SamplerConfig};
use baton_core::dsp::MusicFeatureSequence;
use baton_core::error::Error;
use baton_core::formats::{
    decode_checkpoint, decode_featseq, decode_moseq, encode_checkpoint, encode_featseq, encode_moseq,
    Checkpoint,
};
use baton_core::kin::{smplx55, toy9, MotionSequence, NormStats};
use baton_core::toy::{make_conducting_motion, ToySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_motion(seed: u64) -> MotionSequence {
    make_conducting_motion(&ToySpec {
        bpm: 120.0,
        meter: 3,
        duration_s: 4.0,
        amplitude: 0.3,
        noise: 0.004,
        seed,
    })
    .unwrap()
}

#[test]
fn moseq_round_trip_and_magic_guard() {
    let motion = toy_motion(1);
    let bytes = encode_moseq(&motion, "toy9");
    let (back, header) = decode_moseq(&bytes).unwrap();
    assert_eq!(back, motion, "bit-identical payload round trip");
    assert_eq!(header.frame_dim, 57);
    assert!(!header.has_contacts);
    // Re-encoding is byte-stable.
    assert_eq!(encode_moseq(&back, "toy9"), bytes);

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(matches!(decode_moseq(&corrupt), Err(Error::FormatError(_))));
    assert!(matches!(decode_moseq(&bytes[..bytes.len() - 3]), Err(Error::FormatError(_))));
}

#[test]
fn moseq_contacts_round_trip() {
    let skel = smplx55();
    let mut motion = MotionSequence::rest(&skel, 5, 30);
    motion.contacts = Some(vec![1.0; 5 * 4]);
    let bytes = encode_moseq(&motion, "smplx55");
    let (back, header) = decode_moseq(&bytes).unwrap();
    assert!(header.has_contacts);
    assert_eq!(back.contacts.as_ref().unwrap().len(), 20);
    assert_eq!(back, motion);
}

#[test]
fn featseq_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<f32> = (0..12 * 35).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let seq = MusicFeatureSequence::from_frames(frames, 30).unwrap();
    let bytes = encode_featseq(&seq);
    let (back, header) = decode_featseq(&bytes).unwrap();
    assert_eq!(back.frames, seq.frames);
    assert_eq!(header.column_layout.len(), 35);
    assert_eq!(header.column_layout[32], "peak");
    let mut corrupt = bytes.clone();
    corrupt[2] ^= 0xff;
    assert!(decode_featseq(&corrupt).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_every_tensor() {
    let bc = BenchConfig { d_model: 16, ..BenchConfig::default() };
    let bundle = bench_bundle(&bc, Backbone::Bimamba).unwrap();
    let ema = bundle.params.clone();
    let ckpt = Checkpoint {
        bundle,
        ema,
        schedule: DiffusionSchedule::default_schedule(),
        skeleton: toy9(),
        step: 1234,
        seed: 42,
    };
    let bytes = encode_checkpoint(&ckpt);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.bundle.params.checksum(), ckpt.bundle.params.checksum());
    assert_eq!(back.ema.checksum(), ckpt.ema.checksum());
    assert_eq!(back.step, 1234);
    assert_eq!(back.skeleton, ckpt.skeleton);
    assert_eq!(back.schedule, ckpt.schedule);
    // Save(load(x)) is byte-stable.
    assert_eq!(encode_checkpoint(&back), bytes);

    let mut corrupt = bytes.clone();
    corrupt[1] = b'?';
    assert!(matches!(decode_checkpoint(&corrupt), Err(Error::FormatError(_))));
}

#[test]
fn checkpoint_rejects_missing_tensors_and_bad_version() {
    let bc = BenchConfig { d_model: 16, ..BenchConfig::default() };
    let bundle = bench_bundle(&bc, Backbone::Bimamba).unwrap();
    let ema = bundle.params.clone();
    let ckpt = Checkpoint {
        bundle,
        ema,
        schedule: DiffusionSchedule::default_schedule(),
        skeleton: toy9(),
        step: 1,
        seed: 0,
    };
    let bytes = encode_checkpoint(&ckpt);
    // Flip the version field inside the JSON manifest.
    let json_start = 9;
    let s = String::from_utf8_lossy(&bytes[json_start..json_start + 200]).to_string();
    assert!(s.contains("\"format_version\":1"));
    let mut hacked = bytes.clone();
    let pos = json_start
        + s.find("\"format_version\":1").unwrap()
        + "\"format_version\":".len();
    hacked[pos] = b'9';
    assert!(matches!(decode_checkpoint(&hacked), Err(Error::FormatError(_))));
}

#[test]
fn scaling_exponent_fits_synthetic_laws() {
    let lin: Vec<(f64, f64)> = (1..6).map(|i| (256.0 * i as f64, 0.003 * 256.0 * i as f64)).collect();
    let slope = fit_scaling_exponent(&lin).unwrap();
    assert!((slope - 1.0).abs() < 1e-6, "{slope}");
    let quad: Vec<(f64, f64)> =
        (1..6).map(|i| (256.0 * i as f64, 1e-7 * (256.0 * i as f64).powi(2))).collect();
    let slope = fit_scaling_exponent(&quad).unwrap();
    assert!((slope - 2.0).abs() < 1e-6, "{slope}");
    assert!(fit_scaling_exponent(&lin[..2]).is_err());
}

#[test]
fn measure_latency_contract() {
    // Tiny model, small lengths: spread over reps stays sane and T=0 errors.
    let bc = BenchConfig { d_model: 16, grid: vec![32], reps: 5, steps: 4, ..BenchConfig::default() };
    let bundle = bench_bundle(&bc, Backbone::Bimamba).unwrap();
    let schedule = DiffusionSchedule::default_schedule();
    let sampler = SamplerConfig { steps: 4, guidance: 1.0, seed: 1 };
    let p = measure_latency(&bundle, &schedule, &sampler, 32, 5, bc.mem_cap_bytes).unwrap();
    assert!(p.wall_time_s.unwrap() > 0.0);
    assert!(!p.capped);
    assert!(measure_latency(&bundle, &schedule, &sampler, 0, 5, bc.mem_cap_bytes).is_err());
    // A 1-byte cap trips the guard into a capped point, not a crash.
    let capped = measure_latency(&bundle, &schedule, &sampler, 32, 5, 1).unwrap();
    assert!(capped.capped);
    assert!(capped.wall_time_s.is_none());
    let _ = NormStats::identity(3);
}
