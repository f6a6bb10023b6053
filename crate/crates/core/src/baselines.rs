//! Comparison models as configurations of the shared model and trainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PiMode};
use crate::nn::PROB_EPS;
use crate::train::TrainConfig;

/// Size of the InfoGAN categorical code.
pub const INFOGAN_CODE_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Gan,
    GanL2,
    Infogan,
    Mgan,
    MgGan,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        Self::Gan,
        Self::GanL2,
        Self::Infogan,
        Self::Mgan,
        Self::MgGan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gan => "gan",
            Self::GanL2 => "gan_l2",
            Self::Infogan => "infogan",
            Self::Mgan => "mgan",
            Self::MgGan => "mg_gan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown model kind `{s}` (expected gan|gan_l2|infogan|mgan|mg_gan)"
                ))
            })
    }
}

/// Effective training config and model wiring for `kind`, starting from
/// `base`. Knobs fixed by the kind override the base values.
pub fn build_baseline(
    kind: BaselineKind,
    base: &TrainConfig,
) -> Result<(TrainConfig, ModelConfig)> {
    let mut cfg = base.clone();
    cfg.model = kind;
    let mut model = ModelConfig {
        n_generators: 1,
        z_dim: base.z_dim,
        code_dim: 0,
        pi_mode: PiMode::Uniform,
    };
    match kind {
        BaselineKind::Gan => {
            cfg.lambda_traj = 0.0;
            cfg.lambda_cl = 0.0;
        }
        BaselineKind::GanL2 => {
            cfg.lambda_traj = 1.0;
            cfg.lambda_cl = 0.0;
        }
        BaselineKind::Infogan => {
            cfg.lambda_traj = 1.0;
            cfg.lambda_cl = 1.0;
            model.code_dim = INFOGAN_CODE_DIM;
        }
        BaselineKind::Mgan | BaselineKind::MgGan => {
            if base.n_generators < 2 {
                return Err(Error::invalid(format!(
                    "{} needs n_generators ≥ 2, got {}",
                    kind.name(),
                    base.n_generators
                )));
            }
            model.n_generators = base.n_generators;
            if kind == BaselineKind::Mgan {
                cfg.lambda_traj = 1.0;
            } else {
                model.pi_mode = PiMode::Learned;
            }
        }
    }
    cfg.n_generators = model.n_generators;
    cfg.validate()?;
    model.validate()?;
    Ok((cfg, model))
}

/// Mean cross entropy between the code head's distributions and the drawn
/// codes.
pub fn infogan_code_loss(probs: &[Vec<f64>], codes: &[usize]) -> Result<f64> {
    if probs.len() != codes.len() || probs.is_empty() {
        return Err(Error::invalid("one code per head output is required"));
    }
    let mut total = 0.0;
    for (p, &c) in probs.iter().zip(codes) {
        let pc = p
            .get(c)
            .ok_or_else(|| Error::invalid(format!("code {c} out of range")))?;
        total -= pc.clamp(PROB_EPS, 1.0).ln();
    }
    Ok(total / probs.len() as f64)
}
