use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::model::DEFAULT_Z_DIM;
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: BaselineKind,
    pub n_generators: usize,
    pub z_dim: usize,
    pub lambda_traj: f64,
    pub lambda_cl: f64,
    /// Likelihood bandwidth in m².
    pub sigma: f64,
    /// Candidates per sample for the best-of-many term.
    pub q: usize,
    /// Noise draws per generator for the PM-Net posterior.
    pub l: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Samples per independently differentiated work unit. Results depend on
    /// this value but not on the thread count.
    pub chunk_size: usize,
    /// Leading fraction of records used for training; the rest is held out.
    pub train_fraction: f64,
    pub adam: AdamConfig,
    /// Dataset directory.
    pub data: Option<PathBuf>,
    /// Run directory for checkpoint, logs and manifest.
    pub out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: BaselineKind::MgGan,
            n_generators: 5,
            z_dim: DEFAULT_Z_DIM,
            lambda_traj: 1.0,
            lambda_cl: 1.0,
            sigma: 1.0,
            q: 20,
            l: 1,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            chunk_size: 32,
            train_fraction: 0.9,
            adam: AdamConfig::default(),
            data: None,
            out: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad =
            |field: &str, why: &str| Err(Error::invalid(format!("config field `{field}`: {why}")));
        if !(self.lambda_traj >= 0.0 && self.lambda_traj.is_finite()) {
            return bad("lambda_traj", "must be finite and ≥ 0");
        }
        if !(self.lambda_cl >= 0.0 && self.lambda_cl.is_finite()) {
            return bad("lambda_cl", "must be finite and ≥ 0");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma", "must be finite and > 0");
        }
        if self.q == 0 {
            return bad("q", "must be ≥ 1");
        }
        if self.l == 0 {
            return bad("l", "must be ≥ 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be ≥ 1");
        }
        if self.chunk_size == 0 {
            return bad("chunk_size", "must be ≥ 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction", "must be in (0, 1]");
        }
        if !(self.adam.lr > 0.0)
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
        {
            return bad("adam", "needs lr > 0 and betas in [0, 1)");
        }
        Ok(())
    }

    /// Parses a JSON config; unknown fields are rejected by name.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(err) => Error::Format {
                what: "training config",
                path: path.to_path_buf(),
                reason: err.to_string(),
            },
            other => other,
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.lambda_traj, c.lambda_cl, c.sigma, c.q, c.l),
            (1.0, 1.0, 1.0, 20, 1)
        );
        let back = TrainConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = TrainConfig::from_json(r#"{"model": "gan_l2", "epochs": 3}"#).unwrap();
        assert_eq!(c.model, BaselineKind::GanL2);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.q, 20);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let err = TrainConfig::from_json(r#"{"lamda_traj": 1}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("lamda_traj"), "{err}");
        assert!(TrainConfig::from_json(r#"{"sigma": 0}"#)
            .unwrap_err()
            .to_string()
            .contains("sigma"));
        assert!(TrainConfig::from_json(r#"{"q": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"lambda_cl": -1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"model": "wgan"}"#).is_err());
    }
}
