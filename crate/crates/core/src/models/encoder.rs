use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_layout, push_linear, Init, ParamSet, MARK_LATENT};
use crate::error::{Error, Result};
use crate::ndgrad::{NodeId, Tape, Tensor};
use crate::traj::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderArch {
    Mlp,
    /// One self-attention block over time steps, mean-pooled.
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub arch: EncoderArch,
    pub n_past: usize,
    /// Width of the flattened context row (0 when there is none).
    pub ctx_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub latent: usize,
    /// Positions are divided by this before entering the network (meters).
    pub pos_scale: f64,
    pub ctx_scale: f64,
}

impl EncoderConfig {
    pub fn mlp(n_past: usize, ctx_dim: usize) -> Self {
        Self {
            arch: EncoderArch::Mlp,
            n_past,
            ctx_dim,
            width: 64,
            depth: 2,
            latent: 16,
            pos_scale: 10.0,
            ctx_scale: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_past < 2 || self.width == 0 || self.depth == 0 || self.latent == 0 {
            return Err(Error::Invalid(format!("degenerate encoder config {self:?}")));
        }
        if !(self.pos_scale > 0.0 && self.ctx_scale > 0.0) {
            return Err(Error::Invalid("encoder scales must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_past + self.ctx_dim
    }

    /// Network input row for already-normalized points (meters, last point at origin).
    pub fn features(&self, points: &[Point], ctx: Option<&[f64]>) -> Result<Vec<f64>> {
        if points.len() != self.n_past {
            return Err(Error::LengthMismatch {
                expected: self.n_past,
                got: points.len(),
            });
        }
        let got = ctx.map_or(0, |c| c.len());
        if got != self.ctx_dim {
            return Err(Error::Shape {
                op: "encode",
                detail: format!("context width {got}, encoder expects {}", self.ctx_dim),
            });
        }
        let mut row: Vec<f64> = points
            .iter()
            .flat_map(|p| [p[0] / self.pos_scale, p[1] / self.pos_scale])
            .collect();
        if let Some(c) = ctx {
            row.extend(c.iter().map(|v| v / self.ctx_scale));
        }
        Ok(row)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
    pub frozen: bool,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let c = &config;
        match c.arch {
            EncoderArch::Mlp => {
                let mut fan_in = c.input_dim();
                for l in 0..c.depth {
                    push_linear(&mut ps, &mut rng, &format!("enc.l{l}"), fan_in, c.width, Init::He);
                    fan_in = c.width;
                }
                push_linear(&mut ps, &mut rng, "enc.out", c.width, c.latent, Init::Glorot(1.0));
            }
            EncoderArch::Attention => {
                push_linear(&mut ps, &mut rng, "enc.embed", 2, c.width, Init::Glorot(1.0));
                let pos = Tensor::from_parts(
                    vec![c.n_past, c.width],
                    (0..c.n_past * c.width)
                        .map(|_| rand::Rng::gen_range(&mut rng, -0.1..0.1))
                        .collect(),
                );
                ps.push("enc.pos", pos);
                for name in ["enc.q", "enc.k", "enc.v"] {
                    push_linear(&mut ps, &mut rng, name, c.width, c.width, Init::Glorot(1.0));
                }
                for l in 0..c.depth {
                    push_linear(&mut ps, &mut rng, &format!("enc.ff{l}"), c.width, c.width, Init::He);
                }
                push_linear(&mut ps, &mut rng, "enc.out", c.width + c.ctx_dim, c.latent, Init::Glorot(1.0));
            }
        }
        Ok(Self {
            config,
            params: ps,
            frozen: false,
        })
    }

    /// Rebuilds from stored tensors, checking names and shapes against the config.
    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        check_layout(&params, &reference.params)?;
        Ok(Self {
            config,
            params,
            frozen: false,
        })
    }

    pub fn hash(&self) -> String {
        self.params.hash()
    }

    /// `x` is `(batch, input_dim)`; returns `z` of shape `(batch, latent)`,
    /// marked as the latent.
    pub fn encode(&self, tape: &mut Tape, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let c = &self.config;
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != c.input_dim() {
            return Err(Error::Shape {
                op: "encode",
                detail: format!("input {shape:?}, encoder expects (batch, {})", c.input_dim()),
            });
        }
        let z = match c.arch {
            EncoderArch::Mlp => {
                let mut h = x;
                for l in 0..c.depth {
                    h = tape.affine(h, p[2 * l], p[2 * l + 1])?;
                    h = tape.relu(h)?;
                }
                let o = 2 * c.depth;
                let pre = tape.affine(h, p[o], p[o + 1])?;
                tape.tanh(pre)?
            }
            EncoderArch::Attention => {
                let mut rows = Vec::with_capacity(shape[0]);
                for b in 0..shape[0] {
                    let row = tape.slice(x, 0, b, b + 1)?;
                    rows.push(self.attend_one(tape, p, row)?);
                }
                if rows.len() == 1 {
                    rows[0]
                } else {
                    tape.concat(&rows, 0)?
                }
            }
        };
        tape.mark(MARK_LATENT, z);
        Ok(z)
    }

    fn attend_one(&self, tape: &mut Tape, p: &[NodeId], row: NodeId) -> Result<NodeId> {
        let c = &self.config;
        let n = c.n_past;
        let pts = tape.slice(row, 1, 0, 2 * n)?;
        let pts = tape.reshape(pts, &[n, 2])?;
        let e = tape.affine(pts, p[0], p[1])?;
        let e = tape.add(e, p[2])?;
        let q = tape.affine(e, p[3], p[4])?;
        let k = tape.affine(e, p[5], p[6])?;
        let v = tape.affine(e, p[7], p[8])?;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, 1.0 / (c.width as f64).sqrt())?;
        let a = tape.softmax(s)?;
        let a = tape.matmul(a, v)?;
        let mut h = tape.add(e, a)?;
        for l in 0..c.depth {
            let f = tape.affine(h, p[9 + 2 * l], p[10 + 2 * l])?;
            let f = tape.relu(f)?;
            h = tape.add(h, f)?;
        }
        let pooled = tape.mean_axis(h, 0)?;
        let mut feat = tape.reshape(pooled, &[1, c.width])?;
        if c.ctx_dim > 0 {
            let ctx = tape.slice(row, 1, 2 * n, 2 * n + c.ctx_dim)?;
            feat = tape.concat(&[feat, ctx], 1)?;
        }
        let o = 9 + 2 * c.depth;
        let pre = tape.affine(feat, p[o], p[o + 1])?;
        tape.tanh(pre)
    }

    /// Latent values for a batch of input rows (no gradients).
    pub fn latents(&self, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(super::stack_rows(rows)?);
        let z = self.encode(&mut tape, &p, x)?;
        let latent = self.config.latent;
        Ok(tape.value(z).data().chunks(latent).map(<[f64]>::to_vec).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::normalize_points;

    fn cfg(arch: EncoderArch) -> EncoderConfig {
        EncoderConfig {
            arch,
            width: 8,
            latent: 4,
            ..EncoderConfig::mlp(6, 2)
        }
    }

    fn sample() -> Vec<Point> {
        (0..6).map(|i| [i as f64 * 0.7, (i as f64 * 0.4).sin()]).collect()
    }

    #[test]
    fn deterministic_latent() {
        for arch in [EncoderArch::Mlp, EncoderArch::Attention] {
            let e = Encoder::new(cfg(arch), 3).unwrap();
            let pts = normalize_points(&sample(), sample()[5]);
            let row = e.config.features(&pts, Some(&[1.0, -2.0])).unwrap();
            let a = e.latents(&[&row]).unwrap();
            let b = e.latents(&[&row]).unwrap();
            assert_eq!(a, b);
            assert_eq!(a[0].len(), 4);
            assert!(a[0].iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn zero_weights_give_zero_latent() {
        for arch in [EncoderArch::Mlp, EncoderArch::Attention] {
            let mut e = Encoder::new(cfg(arch), 3).unwrap();
            for t in e.params.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
            let row = e.config.features(&sample(), Some(&[1.0, 1.0])).unwrap();
            let z = e.latents(&[&row]).unwrap();
            assert!(z[0].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn translation_invariant_after_normalization() {
        let e = Encoder::new(cfg(EncoderArch::Mlp), 9).unwrap();
        // Dyadic coordinates keep the translation exact in floating point.
        let pts: Vec<Point> = (0..6).map(|i| [i as f64 * 0.75, (i % 3) as f64 * 0.25]).collect();
        let shifted: Vec<Point> = pts.iter().map(|p| [p[0] + 3.5, p[1] + 3.5]).collect();
        let a = e.config.features(&normalize_points(&pts, pts[5]), Some(&[0.5, 0.5])).unwrap();
        let b = e
            .config
            .features(&normalize_points(&shifted, shifted[5]), Some(&[0.5, 0.5]))
            .unwrap();
        assert_eq!(e.latents(&[&a]).unwrap(), e.latents(&[&b]).unwrap());
    }

    #[test]
    fn batched_equals_per_row() {
        for arch in [EncoderArch::Mlp, EncoderArch::Attention] {
            let e = Encoder::new(cfg(arch), 1).unwrap();
            let r1 = e.config.features(&sample(), Some(&[0.0, 1.0])).unwrap();
            let r2 = e.config.features(&sample()[..].iter().rev().cloned().collect::<Vec<_>>(), Some(&[2.0, 1.0])).unwrap();
            let both = e.latents(&[&r1, &r2]).unwrap();
            let one = e.latents(&[&r1]).unwrap();
            let two = e.latents(&[&r2]).unwrap();
            for (a, b) in both[0].iter().zip(&one[0]).chain(both[1].iter().zip(&two[0])) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let e = Encoder::new(cfg(EncoderArch::Mlp), 1).unwrap();
        assert!(matches!(e.config.features(&sample(), None), Err(Error::Shape { .. })));
        let mut tape = Tape::new();
        let p = e.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[1, 5]));
        assert!(matches!(e.encode(&mut tape, &p, x), Err(Error::Shape { op: "encode", .. })));
    }

    #[test]
    fn layout_checked_on_load() {
        let e = Encoder::new(cfg(EncoderArch::Mlp), 1).unwrap();
        let other = Encoder::new(EncoderConfig { width: 9, ..cfg(EncoderArch::Mlp) }, 1).unwrap();
        assert!(Encoder::from_params(e.config.clone(), other.params).is_err());
        assert!(Encoder::from_params(e.config.clone(), e.params.clone()).is_ok());
    }
}
