//! Adam and the training loops for the forecaster, the past decoder and the
//! reconstruction models.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    random_mask, stack_rows, AutoEncoder, Encoder, Forecaster, MdnDecoder, Pair, ParamSet, ReconBatch, ReconSample,
};
use crate::ndgrad::{NodeId, Tape, Tensor};
use crate::synthgen::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    let c = state.config;
    state.step += 1;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (pd, gd) = (p.data_mut(), g.data());
        let (md, vd) = (m.data_mut(), v.data_mut());
        for j in 0..pd.len() {
            md[j] = c.beta1 * md[j] + (1.0 - c.beta1) * gd[j];
            vd[j] = c.beta2 * vd[j] + (1.0 - c.beta2) * gd[j] * gd[j];
            let mh = md[j] / bc1;
            let vh = vd[j] / bc2;
            pd[j] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 1e-4,
            seed: 0,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Which dataset a batch is drawn from, plus coordinates for seeding.
#[derive(Clone, Copy, Debug)]
pub struct BatchCtx {
    pub val: bool,
    pub epoch: usize,
    pub batch: usize,
    pub chunk: usize,
}

/// Rows per independent tape. Fixed so that gradient reduction order does not
/// depend on the thread count.
const CHUNK: usize = 16;

/// Generic minibatch loop over trainable parameter groups. `loss` builds the
/// mean loss of the given rows on a tape whose group handles it receives.
pub fn fit<F>(groups: &mut [&mut ParamSet], n_train: usize, n_val: usize, cfg: &TrainConfig, loss: F) -> Result<TrainReport>
where
    F: Fn(&mut Tape, &[Vec<NodeId>], &[usize], BatchCtx) -> Result<NodeId> + Sync,
{
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::Invalid("empty training set".into()));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut states: Vec<OptimState> = groups.iter().map(|g| OptimState::new(g.tensors(), adam)).collect();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x7a1]));
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Vec<ParamSet>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let snapshot: Vec<&ParamSet> = groups.iter().map(|g| &**g).collect();
            let parts = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, rows)| {
                    let ctx = BatchCtx {
                        val: false,
                        epoch,
                        batch: bi,
                        chunk: ci,
                    };
                    chunk_grad(&snapshot, rows, ctx, &loss)
                })
                .collect::<Vec<_>>();
            let mut sum_grads: Vec<Vec<Tensor>> = groups
                .iter()
                .map(|g| g.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect();
            let mut batch_loss = 0.0;
            for (ci, part) in parts.into_iter().enumerate() {
                let (l, grads) = part.map_err(|e| non_finite(e, epoch, bi))?;
                let w = batch[ci * CHUNK..].len().min(CHUNK) as f64 / batch.len() as f64;
                batch_loss += w * l;
                for (acc, g) in sum_grads.iter_mut().zip(grads) {
                    for (a, t) in acc.iter_mut().zip(g) {
                        for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
                            *x += w * y;
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!("batch loss {batch_loss}"),
                });
            }
            total += batch_loss * batch.len() as f64;
            for ((g, st), grads) in groups.iter_mut().zip(states.iter_mut()).zip(&sum_grads) {
                adam_step(g.tensors_mut(), grads, st)?;
            }
        }
        let train_nll = total / n_train as f64;
        let val_nll = if n_val > 0 {
            evaluate(groups, n_val, cfg.batch_size, epoch, &loss)?
        } else {
            train_nll
        };
        log.push(EpochLog {
            epoch,
            train_nll,
            val_nll,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        log::info!("epoch {epoch}: train {train_nll:.4} val {val_nll:.4}");
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_nll < *b);
        if improved {
            best = Some((val_nll, epoch, groups.iter().map(|g| (**g).clone()).collect()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_val, best_epoch, params) = best.expect("at least one epoch");
    for (g, p) in groups.iter_mut().zip(&params) {
        g.assign(p)?;
    }
    Ok(TrainReport {
        log,
        best_epoch,
        best_val,
        stopped_early,
    })
}

fn non_finite(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(detail) | Error::NonFiniteGradient(detail) => Error::NonFiniteLoss { epoch, batch, detail },
        other => other,
    }
}

fn chunk_grad<F>(groups: &[&ParamSet], rows: &[usize], ctx: BatchCtx, loss: &F) -> Result<(f64, Vec<Vec<Tensor>>)>
where
    F: Fn(&mut Tape, &[Vec<NodeId>], &[usize], BatchCtx) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<Vec<NodeId>> = groups.iter().map(|g| g.bind(&mut tape, true)).collect();
    let root = loss(&mut tape, &ids, rows, ctx)?;
    let l = tape.value(root).item().unwrap_or(f64::NAN);
    if !l.is_finite() {
        return Err(Error::NonFinite(format!("loss {l}")));
    }
    let g = tape.backward(root)?;
    let mut out = Vec::with_capacity(ids.len());
    for group in &ids {
        let mut gs = Vec::with_capacity(group.len());
        for &id in group {
            let t = g.get(id).expect("leaf gradient").clone();
            if !t.is_finite() {
                return Err(Error::NonFiniteGradient("parameter gradient".into()));
            }
            gs.push(t);
        }
        out.push(gs);
    }
    Ok((l, out))
}

fn evaluate<F>(groups: &[&mut ParamSet], n_val: usize, batch: usize, epoch: usize, loss: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Vec<NodeId>], &[usize], BatchCtx) -> Result<NodeId> + Sync,
{
    let snapshot: Vec<&ParamSet> = groups.iter().map(|g| &**g).collect();
    let idx: Vec<usize> = (0..n_val).collect();
    let parts = idx
        .par_chunks(batch.max(1))
        .enumerate()
        .map(|(bi, rows)| {
            let mut tape = Tape::new();
            let ids: Vec<Vec<NodeId>> = snapshot.iter().map(|g| g.bind(&mut tape, false)).collect();
            let ctx = BatchCtx {
                val: true,
                epoch,
                batch: bi,
                chunk: 0,
            };
            let root = loss(&mut tape, &ids, rows, ctx)?;
            Ok(tape.value(root).item().unwrap_or(f64::NAN) * rows.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / n_val as f64)
}

fn gather(pairs: &[Pair], rows: &[usize]) -> Result<(Tensor, Tensor)> {
    let x = stack_rows(&rows.iter().map(|&i| pairs[i].input.as_slice()).collect::<Vec<_>>())?;
    let y = stack_rows(&rows.iter().map(|&i| pairs[i].target.as_slice()).collect::<Vec<_>>())?;
    Ok((x, y))
}

/// Trains encoder and decoder jointly on (past → future) pairs.
pub fn train_primary(model: &mut Forecaster, train: &[Pair], val: &[Pair], cfg: &TrainConfig) -> Result<TrainReport> {
    let arch = model.clone();
    let Forecaster { encoder, decoder } = model;
    fit(&mut [&mut encoder.params, &mut decoder.params], train.len(), val.len(), cfg, |tape, ids, rows, ctx| {
        let (x, y) = gather(if ctx.val { val } else { train }, rows)?;
        arch.loss(tape, &ids[0], &ids[1], x, y)
    })
}

/// Trains only the past decoder on top of `encoder`, which must come out
/// bitwise unchanged. Latents are computed once since the encoder is frozen.
pub fn train_past_decoder(
    encoder: &Encoder,
    decoder: &mut MdnDecoder,
    train: &[Pair],
    val: &[Pair],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let before = encoder.hash();
    let latents = |pairs: &[Pair]| -> Result<Vec<Vec<f64>>> {
        let chunks = pairs
            .par_chunks(256)
            .map(|c| encoder.latents(&c.iter().map(|p| p.input.as_slice()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.into_iter().flatten().collect())
    };
    let (zt, zv) = (latents(train)?, latents(val)?);
    let arch = decoder.clone();
    let report = fit(&mut [&mut decoder.params], train.len(), val.len(), cfg, |tape, ids, rows, ctx| {
        let (pairs, zs) = if ctx.val { (val, &zv) } else { (train, &zt) };
        let z = stack_rows(&rows.iter().map(|&i| zs[i].as_slice()).collect::<Vec<_>>())?;
        let y = stack_rows(&rows.iter().map(|&i| pairs[i].target.as_slice()).collect::<Vec<_>>())?;
        let z = tape.constant(z);
        let y = tape.constant(y);
        let nodes = arch.decode(tape, &ids[0], z)?;
        let per = arch.nll(tape, &nodes, y)?;
        tape.mean(per)
    })?;
    let after = encoder.hash();
    if before != after {
        return Err(Error::EncoderMutated { before, after });
    }
    Ok(report)
}

/// Trains an AE or MAE (its own encoder included). MAE masks are drawn per
/// row from seeds derived from (epoch, batch, chunk, row).
pub fn train_recon(model: &mut AutoEncoder, train: &[ReconSample], val: &[ReconSample], cfg: &TrainConfig) -> Result<TrainReport> {
    let arch = model.clone();
    let n = arch.config.encoder.n_past;
    let AutoEncoder { encoder, head, .. } = model;
    fit(&mut [&mut encoder.params, head], train.len(), val.len(), cfg, |tape, ids, rows, ctx| {
        let data = if ctx.val { val } else { train };
        let samples: Vec<&ReconSample> = rows.iter().map(|&i| &data[i]).collect();
        let masks = arch.config.masked.then(|| {
            rows.iter()
                .map(|&i| {
                    // Validation masks depend only on the row, so val loss is comparable across epochs.
                    let path = if ctx.val {
                        vec![1, i as u64]
                    } else {
                        vec![2, ctx.epoch as u64, ctx.batch as u64, i as u64]
                    };
                    random_mask(n, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &path)))
                })
                .collect::<Vec<_>>()
        });
        let batch = ReconBatch::new(&arch.config.encoder, &samples, masks.as_deref())?;
        let per = arch.row_loss(tape, &ids[0], &ids[1], &batch)?;
        tape.mean(per)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gaussian_nll_constant, EncoderConfig, MdnConfig};

    fn one_param(v: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(1.5);
        let mut st = OptimState::new(&p, AdamConfig::default());
        for _ in 0..10 {
            adam_step(&mut p, &one_param(0.0), &mut st).unwrap();
        }
        assert_eq!(p[0].item(), Some(1.5));
        // Existing moments decay geometrically.
        st.m[0] = Tensor::scalar(0.4);
        st.v[0] = Tensor::scalar(0.5);
        adam_step(&mut p, &one_param(0.0), &mut st).unwrap();
        assert!((st.m[0].item().unwrap() - 0.36).abs() < 1e-15);
        assert!((st.v[0].item().unwrap() - 0.4995).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_lr() {
        let mut p = one_param(0.0);
        let mut st = OptimState::new(&p, AdamConfig::default());
        adam_step(&mut p, &one_param(1.0), &mut st).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = -lr / (1 + eps).
        assert!((p[0].item().unwrap() + 1e-4 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr_sign() {
        for g in [-3.0, 0.02, 7.0] {
            let mut p = one_param(0.0);
            let mut st = OptimState::new(&p, AdamConfig::default());
            let mut last = 0.0;
            for _ in 0..5000 {
                let before = p[0].item().unwrap();
                adam_step(&mut p, &one_param(g), &mut st).unwrap();
                last = p[0].item().unwrap() - before;
            }
            assert!((last + 1e-4 * f64::signum(g)).abs() < 1e-9, "g={g}: {last}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = OptimState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st).is_err());
    }

    fn toy() -> (Forecaster, Vec<Pair>) {
        let ec = EncoderConfig {
            width: 16,
            latent: 8,
            ..EncoderConfig::mlp(4, 0)
        };
        let f = Forecaster {
            encoder: Encoder::new(ec, 1).unwrap(),
            decoder: MdnDecoder::new(
                MdnConfig {
                    width: 16,
                    k: 1,
                    ..MdnConfig::new(8, 2)
                },
                2,
            )
            .unwrap(),
        };
        let pair = Pair {
            input: vec![-0.3, 0.0, -0.2, 0.01, -0.1, 0.0, 0.0, 0.0],
            target: vec![1.0, 0.1, 2.0, 0.15],
        };
        (f, vec![pair])
    }

    #[test]
    fn lr_zero_changes_nothing() {
        let (mut f, data) = toy();
        let before = f.clone();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.0,
            ..TrainConfig::default()
        };
        train_primary(&mut f, &data, &data, &cfg).unwrap();
        assert_eq!(f, before);
    }

    #[test]
    fn single_sample_overfit_and_monotone_start() {
        // Unit output scale and a 0.1 m² floor keep the optimum reachable in
        // 500 steps: μ = target, var = floor.
        let (mut f, data) = toy();
        f.decoder = MdnDecoder::new(
            MdnConfig {
                width: 16,
                k: 1,
                pos_scale: 1.0,
                var_floor: 0.1,
                init_std: 0.5,
                ..MdnConfig::new(8, 2)
            },
            2,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            lr: 2e-3,
            patience: 0,
            ..TrainConfig::default()
        };
        let r = train_primary(&mut f, &data, &data, &cfg).unwrap();
        let first: Vec<f64> = r.log.iter().take(50).map(|e| e.train_nll).collect();
        assert!(first.windows(2).all(|w| w[1] < w[0]), "{first:?}");
        let optimum = gaussian_nll_constant(4) + 0.5 * 4.0 * 0.1f64.ln();
        let last = r.log.last().unwrap().train_nll;
        assert!(last - optimum < 0.1 && last >= optimum, "final {last} vs optimum {optimum}");
    }

    #[test]
    fn same_seed_same_curve() {
        let (f0, data) = toy();
        let cfg = TrainConfig {
            epochs: 5,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let (mut a, mut b) = (f0.clone(), f0);
        let ra = train_primary(&mut a, &data, &data, &cfg).unwrap();
        let rb = train_primary(&mut b, &data, &data, &cfg).unwrap();
        let ca: Vec<f64> = ra.log.iter().map(|e| e.train_nll).collect();
        let cb: Vec<f64> = rb.log.iter().map(|e| e.train_nll).collect();
        assert_eq!(ca, cb);
        assert_eq!(a, b);
    }

    #[test]
    fn past_decoder_leaves_encoder_untouched() {
        let (f, data) = toy();
        let mut dec = f.decoder.clone();
        let h = f.encoder.hash();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        train_past_decoder(&f.encoder, &mut dec, &data, &data, &cfg).unwrap();
        assert_eq!(h, f.encoder.hash());
        assert_ne!(dec, f.decoder);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn past_training_never_touches_the_encoder(seed in 0u64..1000, lr in 1e-4f64..1e-1, epochs in 1usize..4) {
            let (f, data) = toy();
            let h = f.encoder.hash();
            let mut dec = f.decoder.clone();
            let cfg = TrainConfig { epochs, lr, seed, ..TrainConfig::default() };
            train_past_decoder(&f.encoder, &mut dec, &data, &data, &cfg).unwrap();
            proptest::prop_assert_eq!(h, f.encoder.hash());
        }
    }
}
