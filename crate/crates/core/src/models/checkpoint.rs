//! JSON checkpoints: architecture config plus named tensors stored as
//! base64 little-endian f64, so a round trip is bitwise exact.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AutoEncoder, AutoEncoderConfig, EncoderConfig, Forecaster, MdnConfig, MdnDecoder, ParamSet};
use crate::error::{Error, Result};
use crate::models::Encoder;
use crate::ndgrad::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Base64 of the little-endian f64 bytes.
    pub data: String,
}

impl TensorRecord {
    fn encode(name: &str, t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", self.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!("tensor {}: truncated data", self.name)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(self.shape.clone(), data).map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", self.name)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub groups: BTreeMap<String, Vec<TensorRecord>>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            config,
            groups: BTreeMap::new(),
        }
    }

    pub fn with_group(mut self, name: &str, ps: &ParamSet) -> Self {
        let recs = ps
            .names()
            .iter()
            .zip(ps.tensors())
            .map(|(n, t)| TensorRecord::encode(n, t))
            .collect();
        self.groups.insert(name.to_string(), recs);
        self
    }

    pub fn group(&self, name: &str) -> Result<ParamSet> {
        let recs = self
            .groups
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor group `{name}`")))?;
        let mut ps = ParamSet::new();
        for r in recs {
            ps.push(r.name.clone(), r.decode()?);
        }
        Ok(ps)
    }

    pub fn config_field<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .config
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("config lacks `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("config `{key}`: {e}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Self = serde_json::from_slice(&bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

impl Forecaster {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "forecaster",
            serde_json::json!({ "encoder": self.encoder.config, "decoder": self.decoder.config }),
        )
        .with_group("encoder", &self.encoder.params)
        .with_group("decoder", &self.decoder.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("forecaster")?;
        let ec: EncoderConfig = ck.config_field("encoder")?;
        let dc: MdnConfig = ck.config_field("decoder")?;
        Ok(Self {
            encoder: Encoder::from_params(ec, ck.group("encoder")?)?,
            decoder: MdnDecoder::from_params(dc, ck.group("decoder")?)?,
        })
    }
}

impl MdnDecoder {
    /// Past decoder checkpoint; records which encoder it was trained on.
    pub fn to_checkpoint(&self, encoder_hash: &str, extra: serde_json::Value) -> Checkpoint {
        Checkpoint::new(
            "past_decoder",
            serde_json::json!({ "decoder": self.config, "encoder_hash": encoder_hash, "extra": extra }),
        )
        .with_group("decoder", &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("past_decoder")?;
        let dc: MdnConfig = ck.config_field("decoder")?;
        MdnDecoder::from_params(dc, ck.group("decoder")?)
    }
}

impl AutoEncoder {
    pub fn kind(&self) -> &'static str {
        if self.config.masked {
            "mae"
        } else {
            "ae"
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.kind(), serde_json::json!({ "model": self.config }))
            .with_group("encoder", &self.encoder.params)
            .with_group("head", &self.head)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: AutoEncoderConfig = ck.config_field("model")?;
        ck.expect_kind(if cfg.masked { "mae" } else { "ae" })?;
        AutoEncoder::from_params(cfg, ck.group("encoder")?, ck.group("head")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forecaster() -> Forecaster {
        let ec = EncoderConfig {
            width: 8,
            latent: 4,
            ..EncoderConfig::mlp(5, 4)
        };
        Forecaster {
            encoder: Encoder::new(ec, 1).unwrap(),
            decoder: MdnDecoder::new(MdnConfig { width: 8, ..MdnConfig::new(4, 3) }, 2).unwrap(),
        }
    }

    #[test]
    fn forecaster_round_trip_is_bitwise() {
        let f = forecaster();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        f.to_checkpoint().save(&path).unwrap();
        let g = Forecaster::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(f.encoder.hash(), g.encoder.hash());
        assert_eq!(f.decoder.hash(), g.decoder.hash());
        for (a, b) in f.encoder.params.tensors().iter().zip(g.encoder.params.tensors()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn autoencoder_round_trip() {
        let ec = EncoderConfig {
            width: 6,
            latent: 3,
            ..EncoderConfig::mlp(4, 0)
        };
        for masked in [false, true] {
            let ae = AutoEncoder::new(AutoEncoderConfig::new(ec.clone(), masked), 4).unwrap();
            let back = AutoEncoder::from_checkpoint(&ae.to_checkpoint()).unwrap();
            assert_eq!(ae, back);
        }
    }

    #[test]
    fn wrong_kind_and_version_rejected() {
        let f = forecaster();
        let ck = f.decoder.to_checkpoint(&f.encoder.hash(), serde_json::Value::Null);
        assert!(Forecaster::from_checkpoint(&ck).is_err());
        assert_eq!(MdnDecoder::from_checkpoint(&ck).unwrap(), f.decoder);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("old.json");
        let mut old = f.to_checkpoint();
        old.version = 99;
        old.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn tampered_shape_rejected() {
        let f = forecaster();
        let mut ck = f.to_checkpoint();
        ck.groups.get_mut("decoder").unwrap()[0].shape = vec![4, 7];
        assert!(Forecaster::from_checkpoint(&ck).is_err());
    }
}
