//! The MG-GAN network: shared encoder, generator bank, PM-Net and critic.

mod checkpoint;
mod input;
mod nets;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, MANIFEST_FILE, PARAMS_FILE,
};
pub use input::{
    bearing, future_tensor, samples_from_dataset, EncoderBatch, Neighbor, PatchCache, SceneSample,
    ATT_CELLS, OBS_STEPS,
};
pub use nets::*;

pub const MAX_GENERATORS: usize = 8;
pub const DEFAULT_Z_DIM: usize = 8;

/// How the distribution over generators is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiMode {
    /// Predicted per sample by PM-Net.
    Learned,
    /// Fixed uniform; no PM-Net parameters exist.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_generators: usize,
    pub z_dim: usize,
    /// Size of the categorical code appended to `z` (0 for none).
    pub code_dim: usize,
    pub pi_mode: PiMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_generators: 5,
            z_dim: DEFAULT_Z_DIM,
            code_dim: 0,
            pi_mode: PiMode::Learned,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_generators == 0 || self.n_generators > MAX_GENERATORS {
            return Err(Error::invalid(format!(
                "n_generators must be in 1..={MAX_GENERATORS}, got {}",
                self.n_generators
            )));
        }
        if self.pi_mode == PiMode::Learned && self.n_generators < 2 {
            return Err(Error::invalid(
                "a learned generator distribution needs at least 2 generators",
            ));
        }
        if self.code_dim > 0 && self.n_generators != 1 {
            return Err(Error::invalid(
                "a categorical code is only supported with a single generator",
            ));
        }
        Ok(())
    }

    /// Width of the generator noise input (`z` plus one-hot code).
    pub fn noise_dim(&self) -> usize {
        self.z_dim + self.code_dim
    }

    /// Classes the critic's classifier head distinguishes: the code when
    /// present, otherwise the generator index.
    pub fn n_classes(&self) -> usize {
        if self.code_dim > 0 {
            self.code_dim
        } else {
            self.n_generators
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub generators: Vec<Generator>,
    pub pm: Option<PmNet>,
    pub critic: Critic,
}

pub const ENCODER_PREFIX: &str = "gen.enc.";
pub const PM_PREFIX: &str = "pm.";
pub const CRITIC_SHARED_PREFIXES: [&str; 3] = ["critic.enc.", "critic.traj1.", "critic.traj2."];
pub const DISCRIMINATOR_PREFIX: &str = "critic.d.";
pub const CLASSIFIER_PREFIX: &str = "critic.c.";

pub fn generator_prefix(g: usize) -> String {
    format!("gen.g{g}.")
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, "gen.enc", &mut rng)?;
        let generators = (0..config.n_generators)
            .map(|g| {
                Generator::new(
                    &mut store,
                    &format!("gen.g{g}"),
                    config.noise_dim(),
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let pm = match config.pi_mode {
            PiMode::Learned => Some(PmNet::new(&mut store, "pm", config.n_generators, &mut rng)?),
            PiMode::Uniform => None,
        };
        let critic = Critic::new(&mut store, "critic", config.n_classes(), &mut rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            generators,
            pm,
            critic,
        })
    }

    pub fn params_with_prefixes(&self, prefixes: &[&str]) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = prefixes
            .iter()
            .flat_map(|p| self.store.with_prefix(p))
            .collect();
        ids.sort();
        ids
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.store.with_prefix(ENCODER_PREFIX)
    }

    pub fn generator_params(&self, g: usize) -> Vec<ParamId> {
        self.store.with_prefix(&generator_prefix(g))
    }

    pub fn pm_params(&self) -> Vec<ParamId> {
        self.store.with_prefix(PM_PREFIX)
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        let mut p = CRITIC_SHARED_PREFIXES.to_vec();
        p.push(DISCRIMINATOR_PREFIX);
        self.params_with_prefixes(&p)
    }

    pub fn classifier_params(&self) -> Vec<ParamId> {
        let mut p = CRITIC_SHARED_PREFIXES.to_vec();
        p.push(CLASSIFIER_PREFIX);
        self.params_with_prefixes(&p)
    }

    pub fn has_classifier(&self) -> bool {
        self.critic.classifier.is_some()
    }

    /// `π [n, n_G]` from conditions `c [n, 96]`.
    pub fn pi(&self, g: &mut Graph, c: Var, train: bool) -> Result<Var> {
        match &self.pm {
            Some(pm) => pm.forward(g, &self.store, c, train),
            None => {
                let n = g.shape(c)[0];
                let k = self.config.n_generators;
                Ok(g.constant(Tensor::full(&[n, k], 1.0 / k as f64)))
            }
        }
    }

    /// Decodes one trajectory per entry of `gens`: row `r` uses generator
    /// `gens[r]`, condition row `rows[r]` of `c` and noise row `r` of `z`.
    /// Rows are grouped per generator so each decoder runs batched.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        c: Var,
        last_disp: Var,
        rows: &[usize],
        gens: &[usize],
        z: &Tensor,
        train: bool,
    ) -> Result<Var> {
        if rows.len() != gens.len() || z.rows() != rows.len() || z.cols() != self.config.noise_dim()
        {
            return Err(Error::shape(
                "decode",
                &[rows.len(), self.config.noise_dim()],
                z.shape(),
            ));
        }
        if rows.is_empty() {
            return Err(Error::invalid("nothing to decode"));
        }
        if let Some(&bad) = gens.iter().find(|&&k| k >= self.config.n_generators) {
            return Err(Error::invalid(format!(
                "generator index {bad} out of range 0..{}",
                self.config.n_generators
            )));
        }
        let mut outs = Vec::new();
        let mut order = Vec::with_capacity(rows.len());
        for k in 0..self.config.n_generators {
            let sel: Vec<usize> = (0..rows.len()).filter(|&r| gens[r] == k).collect();
            if sel.is_empty() {
                continue;
            }
            let cond_rows: Vec<usize> = sel.iter().map(|&r| rows[r]).collect();
            let cg = g.gather_rows(c, &cond_rows)?;
            let lg = g.gather_rows(last_disp, &cond_rows)?;
            let zg: Vec<f64> = sel.iter().flat_map(|&r| z.row_slice(r).to_vec()).collect();
            let zg = g.constant(Tensor::new(&[sel.len(), z.cols()], zg)?);
            outs.push(self.generators[k].decode(g, &self.store, cg, zg, lg, train)?);
            order.extend(sel);
        }
        let stacked = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_rows(&outs)?
        };
        let mut inverse = vec![0; order.len()];
        for (pos, &r) in order.iter().enumerate() {
            inverse[r] = pos;
        }
        if inverse.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(stacked);
        }
        g.gather_rows(stacked, &inverse)
    }
}
