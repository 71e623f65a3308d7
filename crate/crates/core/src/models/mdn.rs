use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_layout, push_linear, Encoder, Init, ParamSet, MARK_LAST};
use crate::error::{Error, Result};
use crate::ndgrad::{NodeId, Tape, Tensor};

/// `(d/2) ln(2π)`: the NLL of a unit-variance diagonal Gaussian at its mean.
pub fn gaussian_nll_constant(d: usize) -> f64 {
    0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdnConfig {
    pub latent: usize,
    pub width: usize,
    /// Hidden ReLU layers before the head; the last one's output is `h_L`
    /// (with 0 layers the head reads the latent directly).
    pub depth: usize,
    pub k: usize,
    pub horizon: usize,
    /// Means are `pos_scale * raw`, variances `softplus(raw) * pos_scale^2 + var_floor`.
    pub pos_scale: f64,
    pub var_floor: f64,
    /// Standard deviation (meters) the variance head starts at.
    pub init_std: f64,
}

impl MdnConfig {
    pub fn new(latent: usize, horizon: usize) -> Self {
        Self {
            latent,
            width: 64,
            depth: 2,
            k: 3,
            horizon,
            pos_scale: 10.0,
            var_floor: 1e-4,
            init_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.k) {
            return Err(Error::Invalid(format!("mixture size {} outside 1..=8", self.k)));
        }
        if self.latent == 0 || self.width == 0 || self.horizon == 0 {
            return Err(Error::Invalid(format!("degenerate decoder config {self:?}")));
        }
        if !(self.pos_scale > 0.0 && self.var_floor > 0.0 && self.init_std * self.init_std > self.var_floor) {
            return Err(Error::Invalid("decoder scales must be positive, init_std^2 above the floor".into()));
        }
        Ok(())
    }

    /// Flattened target width, `horizon * 2`.
    pub fn out_dim(&self) -> usize {
        2 * self.horizon
    }

    fn head_dim(&self) -> usize {
        self.k + 2 * self.k * self.out_dim()
    }
}

/// Tape handles of one decoder pass; every tensor carries a leading batch axis.
#[derive(Clone, Copy, Debug)]
pub struct MdnNodes {
    pub h_l: NodeId,
    pub log_pi: NodeId,
    pub mu: NodeId,
    pub var: NodeId,
}

/// Mixture for one sample; `mu` and `var` are `k x (horizon*2)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnOutput {
    pub k: usize,
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl MdnOutput {
    pub fn dim(&self) -> usize {
        self.mu.len() / self.k.max(1)
    }

    pub fn from_tape(tape: &Tape, nodes: &MdnNodes, row: usize) -> Self {
        let log_pi = tape.value(nodes.log_pi);
        let k = log_pi.shape()[1];
        let kd = tape.value(nodes.mu).shape()[1];
        Self {
            k,
            pi: log_pi.data()[row * k..(row + 1) * k].iter().map(|v| v.exp()).collect(),
            mu: tape.value(nodes.mu).data()[row * kd..(row + 1) * kd].to_vec(),
            var: tape.value(nodes.var).data()[row * kd..(row + 1) * kd].to_vec(),
        }
    }
}

/// `-log Σ_k π_k N(target; μ_k, diag(var_k))`, evaluated in log space.
pub fn nll_past(out: &MdnOutput, target: &[f64]) -> Result<f64> {
    let d = out.dim();
    if target.len() != d || out.pi.len() != out.k || out.var.len() != out.mu.len() {
        return Err(Error::Shape {
            op: "nll_past",
            detail: format!("target {} vs mixture dim {d}", target.len()),
        });
    }
    let terms: Vec<f64> = (0..out.k)
        .map(|k| {
            let mu = &out.mu[k * d..(k + 1) * d];
            let var = &out.var[k * d..(k + 1) * d];
            let quad: f64 = target
                .iter()
                .zip(mu)
                .zip(var)
                .map(|((t, m), v)| (t - m) * (t - m) / v + v.ln())
                .sum();
            out.pi[k].ln() - 0.5 * quad - gaussian_nll_constant(d)
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(-(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()))
}

/// Per-row mixture NLL on the tape: `log_pi (B,K)`, `mu`/`var (B,K*D)`,
/// `target (B,D)` → `(B,)`.
pub fn mixture_nll(tape: &mut Tape, log_pi: NodeId, mu: NodeId, var: NodeId, target: NodeId) -> Result<NodeId> {
    let (b, k) = {
        let s = tape.value(log_pi).shape();
        (s[0], s[1])
    };
    let d = tape.value(target).shape()[1];
    let tiled = if k == 1 {
        target
    } else {
        tape.concat(&vec![target; k], 1)?
    };
    let diff = tape.sub(mu, tiled)?;
    let sq = tape.square(diff)?;
    let q = tape.div(sq, var)?;
    let lv = tape.log(var)?;
    let term = tape.add(q, lv)?;
    let term = tape.reshape(term, &[b, k, d])?;
    let term = tape.sum_axis(term, 2)?;
    let log_n = tape.scale(term, -0.5)?;
    let c = tape.constant(Tensor::scalar(-gaussian_nll_constant(d)));
    let log_n = tape.add(log_n, c)?;
    let joint = tape.add(log_n, log_pi)?;
    let lse = tape.logsumexp(joint)?;
    tape.scale(lse, -1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdnDecoder {
    pub config: MdnConfig,
    pub params: ParamSet,
}

impl MdnDecoder {
    pub fn new(config: MdnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let mut ps = ParamSet::new();
        let mut fan_in = c.latent;
        for l in 0..c.depth {
            push_linear(&mut ps, &mut rng, &format!("dec.l{l}"), fan_in, c.width, Init::He);
            fan_in = c.width;
        }
        let w = push_linear(&mut ps, &mut rng, "dec.head", fan_in, c.head_dim(), Init::Glorot(0.1));
        // Start the variance head at init_std.
        let y = (c.init_std * c.init_std - c.var_floor) / (c.pos_scale * c.pos_scale);
        let raw = y.exp_m1().ln();
        let kd = c.k * c.out_dim();
        for v in &mut ps.tensors_mut()[w + 1].data_mut()[c.k + kd..] {
            *v = raw;
        }
        Ok(Self { config, params: ps })
    }

    pub fn from_params(config: MdnConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        check_layout(&params, &reference.params)?;
        Ok(Self { config, params })
    }

    pub fn hash(&self) -> String {
        self.params.hash()
    }

    /// Index of the head weight; `h_L` is that layer's input.
    pub fn head_index(&self) -> usize {
        2 * self.config.depth
    }

    /// Width of `h_L`.
    pub fn h_l_width(&self) -> usize {
        if self.config.depth == 0 {
            self.config.latent
        } else {
            self.config.width
        }
    }

    /// Trunk only: `z (B, latent)` → `h_L (B, h_l_width)`, marked.
    pub fn trunk(&self, tape: &mut Tape, p: &[NodeId], z: NodeId) -> Result<NodeId> {
        let c = &self.config;
        let s = tape.value(z).shape().to_vec();
        if s.len() != 2 || s[1] != c.latent {
            return Err(Error::Shape {
                op: "decode_past",
                detail: format!("latent {s:?}, decoder expects (batch, {})", c.latent),
            });
        }
        let mut h = z;
        for l in 0..c.depth {
            h = tape.affine(h, p[2 * l], p[2 * l + 1])?;
            h = tape.relu(h)?;
        }
        tape.mark(MARK_LAST, h);
        Ok(h)
    }

    /// Head only: `h_L` → mixture parameters.
    pub fn head(&self, tape: &mut Tape, p: &[NodeId], h_l: NodeId) -> Result<MdnNodes> {
        let c = &self.config;
        let (k, kd) = (c.k, c.k * c.out_dim());
        let o = self.head_index();
        let out = tape.affine(h_l, p[o], p[o + 1])?;
        let logits = tape.slice(out, 1, 0, k)?;
        let mu_raw = tape.slice(out, 1, k, k + kd)?;
        let s_raw = tape.slice(out, 1, k + kd, k + 2 * kd)?;
        let b = tape.value(out).shape()[0];
        let lse = tape.logsumexp(logits)?;
        let lse = tape.reshape(lse, &[b, 1])?;
        let log_pi = tape.sub(logits, lse)?;
        let mu = tape.scale(mu_raw, c.pos_scale)?;
        let sp = tape.softplus(s_raw)?;
        let var = tape.scale(sp, c.pos_scale * c.pos_scale)?;
        let floor = tape.constant(Tensor::scalar(c.var_floor));
        let var = tape.add(var, floor)?;
        Ok(MdnNodes { h_l, log_pi, mu, var })
    }

    pub fn decode(&self, tape: &mut Tape, p: &[NodeId], z: NodeId) -> Result<MdnNodes> {
        let h = self.trunk(tape, p, z)?;
        self.head(tape, p, h)
    }

    /// Per-row NLL `(B,)` against `target (B, horizon*2)`.
    pub fn nll(&self, tape: &mut Tape, nodes: &MdnNodes, target: NodeId) -> Result<NodeId> {
        let s = tape.value(target).shape().to_vec();
        if s.len() != 2 || s[1] != self.config.out_dim() {
            return Err(Error::Shape {
                op: "nll_past",
                detail: format!("target {s:?}, decoder emits (batch, {})", self.config.out_dim()),
            });
        }
        mixture_nll(tape, nodes.log_pi, nodes.mu, nodes.var, target)
    }
}

/// Primary forecaster: encoder plus mixture decoder over the true future.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecaster {
    pub encoder: Encoder,
    pub decoder: MdnDecoder,
}

impl Forecaster {
    /// Mean NLL over the batch, with `(encoder, decoder)` parameter handles.
    pub fn loss(&self, tape: &mut Tape, pe: &[NodeId], pd: &[NodeId], x: Tensor, y: Tensor) -> Result<NodeId> {
        let x = tape.constant(x);
        let y = tape.constant(y);
        let z = self.encoder.encode(tape, pe, x)?;
        let nodes = self.decoder.decode(tape, pd, z)?;
        let per = self.decoder.nll(tape, &nodes, y)?;
        tape.mean(per)
    }
}
