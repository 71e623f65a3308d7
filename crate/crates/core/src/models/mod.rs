//! Encoder, mixture-density decoders and the reconstruction ablation models.

mod autoencoder;
mod checkpoint;
mod encoder;
mod features;
pub mod gradcheck;
mod mdn;

pub use autoencoder::{check_mask, mask_size, random_mask, AutoEncoder, AutoEncoderConfig, ReconBatch};
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use encoder::{Encoder, EncoderArch, EncoderConfig};
pub use features::{forecast_pair, normalize_points, past_pair, recon_sample, Pair, ReconSample};
pub use mdn::{gaussian_nll_constant, mixture_nll, nll_past, Forecaster, MdnConfig, MdnDecoder, MdnNodes, MdnOutput};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndgrad::{NodeId, Tape, Tensor};

pub const MARK_LATENT: &str = "z_latent";
pub const MARK_LAST: &str = "h_L";

/// Ordered, named parameter tensors of one model.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<NodeId> {
        self.tensors.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        crate::io::hex(&h.finalize())
    }

    /// Replaces values with `other`'s, requiring identical names and shapes.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names
            || self.tensors.iter().zip(&other.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint("parameter layout mismatch".into()));
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// He-uniform, for layers followed by ReLU.
    He,
    /// Glorot-uniform scaled by a gain.
    Glorot(f64),
}

/// Adds an `in x out` affine layer `name.w`/`name.b`; returns the weight index.
pub(crate) fn push_linear<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, fan_in: usize, fan_out: usize, init: Init) -> usize {
    let bound = match init {
        Init::He => (6.0 / fan_in as f64).sqrt(),
        Init::Glorot(g) => g * (6.0 / (fan_in + fan_out) as f64).sqrt(),
    };
    let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    let wi = ps.push(format!("{name}.w"), Tensor::from_parts(vec![fan_in, fan_out], w));
    ps.push(format!("{name}.b"), Tensor::zeros(&[fan_out]));
    wi
}

pub(crate) fn check_layout(ps: &ParamSet, expected: &ParamSet) -> Result<()> {
    if ps.names() != expected.names() {
        return Err(Error::Checkpoint(format!(
            "tensor names {:?} do not match architecture {:?}",
            ps.names(),
            expected.names()
        )));
    }
    for (n, (a, b)) in ps.names().iter().zip(ps.tensors().iter().zip(expected.tensors())) {
        if a.shape() != b.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {n}: shape {:?}, architecture wants {:?}",
                a.shape(),
                b.shape()
            )));
        }
    }
    Ok(())
}

/// Stacks equal-length feature rows into a `(rows, cols)` tensor.
pub fn stack_rows(rows: &[&[f64]]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape {
            op: "stack",
            detail: "rows of unequal width".into(),
        });
    }
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::new(vec![rows.len(), cols], data)
}
