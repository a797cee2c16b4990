//! Versioned JSON checkpoints.
//!
//! Layout (all keys required unless noted):
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "networks": [ { "name": str,
//!                   "layers": [ { "inputs": n, "outputs": m, "activation": "relu"|"sigmoid"|"identity" } ],
//!                   "params": [f64] } ],
//!   "config": <training config echo, any JSON>,
//!   "stats_hash": str,
//!   "stats": { "mu_r", "sigma_r", "mu_dbar", "sigma_dbar" } | null,
//!   "step": u64,
//!   "optimizer": <optimizer state, any JSON> | null,
//!   "params_sha256": str
//! }
//! ```
//!
//! `params` of each network hold, per layer, the row-major weight matrix then
//! the bias. `params_sha256` covers the little-endian bytes of every
//! parameter in network order; floats are printed with round-trip precision,
//! so a load reproduces the parameters bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DenseNet, LayerSpec};
use crate::error::{Error, Result};
use crate::normalization::NormStats;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

impl NetRecord {
    pub fn from_net(name: &str, net: &DenseNet) -> Self {
        Self {
            name: name.to_string(),
            layers: net.layers().to_vec(),
            params: net.params().to_vec(),
        }
    }

    pub fn to_net(&self) -> Result<DenseNet> {
        let mut net = DenseNet::zeros(self.layers.clone())?;
        if net.num_params() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "network '{}' declares {} parameters but stores {}",
                self.name,
                net.num_params(),
                self.params.len()
            )));
        }
        net.set_params(self.params.clone())?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub networks: Vec<NetRecord>,
    pub config: serde_json::Value,
    pub stats_hash: String,
    pub stats: Option<NormStats>,
    pub step: u64,
    pub optimizer: Option<serde_json::Value>,
    pub params_sha256: String,
}

impl Checkpoint {
    pub fn new(
        networks: Vec<NetRecord>,
        config: serde_json::Value,
        stats_hash: String,
        stats: Option<NormStats>,
        step: u64,
    ) -> Self {
        let params_sha256 = params_digest(&networks);
        Self {
            format_version: CHECKPOINT_VERSION,
            networks,
            config,
            stats_hash,
            stats,
            step,
            optimizer: None,
            params_sha256,
        }
    }

    pub fn network(&self, name: &str) -> Result<DenseNet> {
        self.networks
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing network '{name}'")))?
            .to_net()
    }

    pub fn has_network(&self, name: &str) -> bool {
        self.networks.iter().any(|n| n.name == name)
    }

    /// Refuse to pair this checkpoint with stats it was not trained on.
    pub fn check_stats_hash(&self, stats_hash: &str) -> Result<()> {
        if self.stats_hash != stats_hash {
            return Err(Error::HashMismatch {
                expected: self.stats_hash.clone(),
                found: stats_hash.to_string(),
            });
        }
        Ok(())
    }

    /// Content hash of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        crate::dataset::sha256_hex(self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        for record in &self.networks {
            record.to_net()?;
        }
        let digest = params_digest(&self.networks);
        if digest != self.params_sha256 {
            return Err(Error::Checkpoint("parameter checksum mismatch".into()));
        }
        Ok(())
    }

    /// Write via a temporary file and rename, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

fn params_digest(networks: &[NetRecord]) -> String {
    let mut hasher = Sha256::new();
    for n in networks {
        hasher.update(n.name.as_bytes());
        for p in &n.params {
            hasher.update(p.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng;

    fn sample() -> (DenseNet, Checkpoint) {
        let mut r = rng::from_seed(9);
        let net = DenseNet::mlp(&[3, 7, 2], Activation::Relu, Activation::Sigmoid)
            .unwrap()
            .initialized(&mut r);
        let ckpt = Checkpoint::new(
            vec![NetRecord::from_net("g", &net)],
            serde_json::json!({"lr": 1e-4}),
            "h".into(),
            None,
            5,
        );
        (net, ckpt)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (net, ckpt) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let net2 = back.network("g").unwrap();
        for (a, b) in net.params().iter().zip(net2.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let x = [0.1, -0.7, 2.0];
        assert_eq!(net.forward(&x).unwrap(), net2.forward(&x).unwrap());
        assert_eq!(back.step, 5);
    }

    #[test]
    fn truncated_file_fails() {
        let (_, ckpt) = sample();
        let text = ckpt.to_json();
        assert!(Checkpoint::from_json(&text[..text.len() / 2]).is_err());
    }

    #[test]
    fn version_and_shape_mismatches_fail() {
        let (_, mut ckpt) = sample();
        ckpt.format_version = 99;
        assert!(matches!(Checkpoint::from_json(&ckpt.to_json()), Err(Error::Checkpoint(_))));

        let (_, mut ckpt) = sample();
        ckpt.networks[0].params.pop();
        assert!(Checkpoint::from_json(&ckpt.to_json()).is_err());

        let (_, mut ckpt) = sample();
        ckpt.networks[0].params[0] += 1.0;
        assert!(Checkpoint::from_json(&ckpt.to_json()).is_err());
    }

    #[test]
    fn stats_hash_mismatch_is_refused() {
        let (_, ckpt) = sample();
        assert!(ckpt.check_stats_hash("h").is_ok());
        let err = ckpt.check_stats_hash("other").unwrap_err();
        assert!(err.to_string().contains("hash mismatch"));
    }
}
