//! Finite-difference check of the full encoder + past-decoder composition,
//! differentiating the summed NLL with respect to the input and every
//! parameter of both networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Encoder, EncoderArch, EncoderConfig, MdnConfig, MdnDecoder};
use crate::error::Result;
use crate::ndgrad::gradcheck::{check_gradients, GradCheckReport};
use crate::ndgrad::Tensor;

pub fn check_forecast_past(arch: EncoderArch, seed: u64, h: f64) -> Result<f64> {
    Ok(check_forecast_past_report(arch, seed, h)?.max_relative_error)
}

pub fn check_forecast_past_report(arch: EncoderArch, seed: u64, h: f64) -> Result<GradCheckReport> {
    let ec = EncoderConfig {
        arch,
        width: 6,
        depth: 1,
        latent: 3,
        pos_scale: 1.0,
        ctx_scale: 1.0,
        ..EncoderConfig::mlp(4, 2)
    };
    let dc = MdnConfig {
        width: 5,
        depth: 1,
        k: 2,
        pos_scale: 1.0,
        var_floor: 1e-2,
        ..MdnConfig::new(3, 2)
    };
    let enc = Encoder::new(ec.clone(), seed)?;
    let dec = MdnDecoder::new(dc, seed ^ 0xdec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let rows = 2;
    let x = Tensor::new(vec![rows, ec.input_dim()], (0..rows * ec.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let y = Tensor::new(vec![rows, 4], (0..rows * 4).map(|_| rng.gen_range(-0.5..0.5)).collect())?;
    let n_enc = enc.params.len();
    let mut inputs = vec![x];
    // Zero-initialised biases put dead rows exactly on a ReLU kink, where
    // central differences see half a slope; jitter every parameter off init.
    let mut jitter = |t: &Tensor| {
        let d = t.data().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        Tensor::new(t.shape().to_vec(), d)
    };
    for t in enc.params.tensors().iter().chain(dec.params.tensors()) {
        inputs.push(jitter(t)?);
    }
    let report = check_gradients(&inputs, h, |t, ids| {
        let yc = t.constant(y.clone());
        let z = enc.encode(t, &ids[1..1 + n_enc], ids[0])?;
        let nodes = dec.decode(t, &ids[1 + n_enc..], z)?;
        let per = dec.nll(t, &nodes, yc)?;
        t.sum(per)
    })?;
    Ok(report)
}
