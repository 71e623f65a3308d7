use std::time::Instant;

use shiftgrad::models::gradcheck::check_forecast_past;
use shiftgrad::models::EncoderArch;
use shiftgrad::ndgrad::gradcheck::{check_primitive, PRIMITIVES};

const SEEDS: u64 = 100;
const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn every_primitive_matches_finite_differences() {
    for name in PRIMITIVES {
        for seed in 0..SEEDS {
            let err = check_primitive(name, seed, STEP).unwrap();
            assert!(err <= TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn encoder_and_past_decoder_match_finite_differences() {
    let t0 = Instant::now();
    for arch in [EncoderArch::Mlp, EncoderArch::Attention] {
        for seed in 0..SEEDS {
            let err = check_forecast_past(arch, seed, STEP).unwrap();
            assert!(err <= TOL, "{arch:?} seed {seed}: relative error {err:e}");
        }
    }
    assert!(t0.elapsed().as_secs() <= 60);
}

#[test]
fn unknown_primitive_rejected() {
    assert!(check_primitive("conv", 0, STEP).is_err());
}
