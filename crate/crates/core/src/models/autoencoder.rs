//! Reconstruction ablations: a plain autoencoder over the full history and a
//! masked variant that hides half of the steps behind a learned token.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_layout, push_linear, stack_rows, Encoder, EncoderConfig, Init, ParamSet, ReconSample};
use crate::error::{Error, Result};
use crate::ndgrad::{NodeId, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoEncoderConfig {
    pub encoder: EncoderConfig,
    pub width: usize,
    pub depth: usize,
    pub masked: bool,
}

impl AutoEncoderConfig {
    pub fn new(encoder: EncoderConfig, masked: bool) -> Self {
        Self {
            width: encoder.width,
            depth: encoder.depth,
            encoder,
            masked,
        }
    }
}

/// Number of hidden steps for a history of `n` steps.
pub fn mask_size(n: usize) -> usize {
    n / 2
}

/// Uniformly random mask with exactly `n / 2` hidden steps.
pub fn random_mask<R: Rng>(n: usize, rng: &mut R) -> Vec<bool> {
    let mut m = vec![false; n];
    for i in sample(rng, n, mask_size(n)) {
        m[i] = true;
    }
    m
}

pub fn check_mask(mask: &[bool], n: usize) -> Result<()> {
    if mask.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: mask.len(),
        });
    }
    let got = mask.iter().filter(|&&b| b).count();
    if got != mask_size(n) {
        return Err(Error::MaskCardinality {
            expected: mask_size(n),
            got,
        });
    }
    Ok(())
}

/// Batched reconstruction inputs.
#[derive(Clone, Debug)]
pub struct ReconBatch {
    /// Encoder rows `(B, input_dim)`, unmasked.
    pub x: Tensor,
    /// Ground-truth history in meters, `(B, n, 2)`.
    pub points: Tensor,
    /// 1 on hidden steps, `(B, n, 1)`; masked model only.
    pub mask: Option<Tensor>,
}

impl ReconBatch {
    pub fn new(cfg: &EncoderConfig, samples: &[&ReconSample], masks: Option<&[Vec<bool>]>) -> Result<Self> {
        let n = cfg.n_past;
        let rows = samples
            .iter()
            .map(|s| cfg.features(&s.points, s.context.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        let x = stack_rows(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>())?;
        let pts: Vec<f64> = samples.iter().flat_map(|s| s.points.iter().flat_map(|p| [p[0], p[1]])).collect();
        let points = Tensor::new(vec![samples.len(), n, 2], pts)?;
        let mask = match masks {
            None => None,
            Some(ms) => {
                if ms.len() != samples.len() {
                    return Err(Error::LengthMismatch {
                        expected: samples.len(),
                        got: ms.len(),
                    });
                }
                let mut data = Vec::with_capacity(n * ms.len());
                for m in ms {
                    check_mask(m, n)?;
                    data.extend(m.iter().map(|&b| if b { 1.0 } else { 0.0 }));
                }
                Some(Tensor::new(vec![samples.len(), n, 1], data)?)
            }
        };
        Ok(Self { x, points, mask })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoEncoder {
    pub config: AutoEncoderConfig,
    pub encoder: Encoder,
    /// Decoder layers, then the mask token for the masked variant.
    pub head: ParamSet,
}

impl AutoEncoder {
    pub fn new(config: AutoEncoderConfig, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(config.encoder.clone(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ae);
        let mut head = ParamSet::new();
        let mut fan_in = config.encoder.latent;
        for l in 0..config.depth {
            push_linear(&mut head, &mut rng, &format!("rec.l{l}"), fan_in, config.width, Init::He);
            fan_in = config.width;
        }
        push_linear(&mut head, &mut rng, "rec.out", fan_in, 2 * config.encoder.n_past, Init::Glorot(1.0));
        if config.masked {
            head.push("rec.mask_token", Tensor::zeros(&[2]));
        }
        Ok(Self { config, encoder, head })
    }

    pub fn from_params(config: AutoEncoderConfig, encoder: ParamSet, head: ParamSet) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        check_layout(&head, &reference.head)?;
        let encoder = Encoder::from_params(config.encoder.clone(), encoder)?;
        Ok(Self { config, encoder, head })
    }

    pub fn hash(&self) -> String {
        format!("{}:{}", self.encoder.hash(), self.head.hash())
    }

    /// Per-row reconstruction loss `(B,)`: MSE over all coordinates, or over
    /// hidden steps only for the masked model.
    pub fn row_loss(&self, tape: &mut Tape, pe: &[NodeId], ph: &[NodeId], batch: &ReconBatch) -> Result<NodeId> {
        Ok(self.forward(tape, pe, ph, batch)?.1)
    }

    /// Returns `(reconstruction (B, n, 2) in meters, per-row loss (B,))`.
    fn forward(&self, tape: &mut Tape, pe: &[NodeId], ph: &[NodeId], batch: &ReconBatch) -> Result<(NodeId, NodeId)> {
        let ec = &self.config.encoder;
        let (n, b) = (ec.n_past, batch.x.shape()[0]);
        let x = tape.constant(batch.x.clone());
        let pts = tape.constant(batch.points.clone());
        let mask = match (&batch.mask, self.config.masked) {
            (Some(m), true) => Some(tape.constant(m.clone())),
            (None, false) => None,
            _ => return Err(Error::Invalid("mask must be given exactly for the masked model".into())),
        };
        let input = match mask {
            None => x,
            Some(m) => {
                let token = ph[ph.len() - 1];
                let xp = tape.slice(x, 1, 0, 2 * n)?;
                let xp = tape.reshape(xp, &[b, n, 2])?;
                let keep = tape.mul(xp, m)?;
                let keep = tape.sub(xp, keep)?;
                let fill = tape.mul(m, token)?;
                let xp = tape.add(keep, fill)?;
                let xp = tape.reshape(xp, &[b, 2 * n])?;
                if ec.ctx_dim > 0 {
                    let ctx = tape.slice(x, 1, 2 * n, 2 * n + ec.ctx_dim)?;
                    tape.concat(&[xp, ctx], 1)?
                } else {
                    xp
                }
            }
        };
        let z = self.encoder.encode(tape, pe, input)?;
        let mut h = z;
        for l in 0..self.config.depth {
            h = tape.affine(h, ph[2 * l], ph[2 * l + 1])?;
            h = tape.relu(h)?;
        }
        let o = 2 * self.config.depth;
        let out = tape.affine(h, ph[o], ph[o + 1])?;
        let out = tape.scale(out, ec.pos_scale)?;
        let out = tape.reshape(out, &[b, n, 2])?;
        let diff = tape.sub(out, pts)?;
        let sq = tape.square(diff)?;
        let sq = match mask {
            None => sq,
            Some(m) => tape.mul(sq, m)?,
        };
        let sq = tape.reshape(sq, &[b, 2 * n])?;
        let s = tape.sum_axis(sq, 1)?;
        let count = if self.config.masked { 2 * mask_size(n) } else { 2 * n };
        Ok((out, tape.scale(s, 1.0 / count as f64)?))
    }

    /// Reconstruction error of one sample (no gradients).
    pub fn recon_error(&self, s: &ReconSample, mask: Option<&[bool]>) -> Result<f64> {
        let masks = mask.map(|m| vec![m.to_vec()]);
        let batch = ReconBatch::new(&self.config.encoder, &[s], masks.as_deref())?;
        let mut tape = Tape::new();
        let pe = self.encoder.params.bind(&mut tape, false);
        let ph = self.head.bind(&mut tape, false);
        let l = self.row_loss(&mut tape, &pe, &ph, &batch)?;
        Ok(tape.value(l).data()[0])
    }

    /// Reconstruction of one sample in meters, `n x 2` flattened.
    pub fn reconstruct(&self, s: &ReconSample, mask: Option<&[bool]>) -> Result<Vec<f64>> {
        let masks = mask.map(|m| vec![m.to_vec()]);
        let batch = ReconBatch::new(&self.config.encoder, &[s], masks.as_deref())?;
        let mut tape = Tape::new();
        let pe = self.encoder.params.bind(&mut tape, false);
        let ph = self.head.bind(&mut tape, false);
        let (out, _) = self.forward(&mut tape, &pe, &ph, &batch)?;
        Ok(tape.value(out).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::Point;

    fn cfg(masked: bool) -> AutoEncoderConfig {
        let enc = EncoderConfig {
            width: 8,
            latent: 4,
            depth: 1,
            ..EncoderConfig::mlp(6, 0)
        };
        AutoEncoderConfig::new(enc, masked)
    }

    fn sample() -> ReconSample {
        let pts: Vec<Point> = (0..6).map(|i| [i as f64 - 5.0, 0.3 * (i as f64 - 5.0)]).collect();
        ReconSample {
            points: pts,
            context: None,
        }
    }

    fn zero_output(ae: &mut AutoEncoder) {
        let o = 2 * ae.config.depth;
        for i in [o, o + 1] {
            ae.head.tensors_mut()[i].data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_output_loss_is_mean_square() {
        let mut ae = AutoEncoder::new(cfg(false), 2).unwrap();
        zero_output(&mut ae);
        let s = sample();
        let m: f64 = s.points.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / 12.0;
        assert!((ae.recon_error(&s, None).unwrap() - m).abs() < 1e-12);
    }

    #[test]
    fn ae_matches_hand_mse() {
        let ae = AutoEncoder::new(cfg(false), 7).unwrap();
        let s = sample();
        let rec = ae.reconstruct(&s, None).unwrap();
        let truth: Vec<f64> = s.points.iter().flat_map(|p| [p[0], p[1]]).collect();
        let mse = rec.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 12.0;
        assert!((ae.recon_error(&s, None).unwrap() - mse).abs() < 1e-12);
        // Perfect reconstruction.
        let perfect = ReconSample {
            points: rec.chunks(2).map(|c| [c[0], c[1]]).collect(),
            context: None,
        };
        let rec2 = ae.reconstruct(&perfect, None).unwrap();
        let loss = ae.recon_error(&perfect, None).unwrap();
        let direct = rec2.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 12.0;
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn mae_matches_hand_masked_mse() {
        let ae = AutoEncoder::new(cfg(true), 7).unwrap();
        let s = sample();
        let mask = vec![true, false, true, false, false, true];
        let rec = ae.reconstruct(&s, Some(&mask)).unwrap();
        let mut acc = 0.0;
        for (i, p) in s.points.iter().enumerate() {
            if mask[i] {
                acc += (rec[2 * i] - p[0]).powi(2) + (rec[2 * i + 1] - p[1]).powi(2);
            }
        }
        assert!((ae.recon_error(&s, Some(&mask)).unwrap() - acc / 6.0).abs() < 1e-12);
    }

    #[test]
    fn mae_perfect_on_hidden_steps_is_zero() {
        let ae = AutoEncoder::new(cfg(true), 3).unwrap();
        let s = sample();
        let mask = vec![false, true, true, true, false, false];
        let rec = ae.reconstruct(&s, Some(&mask)).unwrap();
        // Replace only hidden steps by the prediction; visible inputs stay, so the
        // prediction (which sees only visible steps and the token) is unchanged.
        let mut pts = s.points.clone();
        for i in 0..6 {
            if mask[i] {
                pts[i] = [rec[2 * i], rec[2 * i + 1]];
            }
        }
        let fixed = ReconSample { points: pts, context: None };
        assert!(ae.recon_error(&fixed, Some(&mask)).unwrap().abs() < 1e-20);
    }

    #[test]
    fn mask_cardinality_enforced() {
        let ae = AutoEncoder::new(cfg(true), 3).unwrap();
        let s = sample();
        assert!(matches!(
            ae.recon_error(&s, Some(&[false; 6])),
            Err(Error::MaskCardinality { expected: 3, got: 0 })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = random_mask(7, &mut rng);
            assert_eq!(m.iter().filter(|&&b| b).count(), 3);
        }
    }
}
