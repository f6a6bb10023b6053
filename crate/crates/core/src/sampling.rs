//! Inference-time generator allocation (Random / Expectation) and batched
//! prediction.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderBatch, Model, SceneSample};
use crate::nn::{Graph, Tensor};
use crate::par::Exec;
use crate::sim::{Vec2, PRED_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Expectation,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "expectation" => Ok(Self::Expectation),
            other => Err(Error::invalid(format!(
                "unknown strategy `{other}` (expected random|expectation)"
            ))),
        }
    }
}

/// Inverse-CDF draw from `pi` for a uniform `u ∈ [0, 1)`. Zero-probability
/// entries are never returned.
pub fn categorical(pi: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (g, &p) in pi.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = g;
        if u < acc {
            return g;
        }
    }
    last
}

/// `k` i.i.d. generator indices from `pi`.
pub fn sample_random<R: Rng + ?Sized>(pi: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    (0..k).map(|_| categorical(pi, rng.random())).collect()
}

/// Per-generator counts `round(k·π_g)` (half away from zero), corrected so
/// they sum to `k`: a surplus or deficit is applied to the highest-π
/// generator, cascading to the next-highest when a count would go negative.
pub fn sample_expectation(pi: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || pi.is_empty() {
        return Err(Error::invalid(
            "expectation sampling needs k ≥ 1 and a non-empty π",
        ));
    }
    let mut counts: Vec<i64> = pi
        .iter()
        .map(|&p| (k as f64 * p).round().max(0.0) as i64)
        .collect();
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]));
    let diff = k as i64 - counts.iter().sum::<i64>();
    if diff >= 0 {
        counts[order[0]] += diff;
    } else {
        let mut deficit = -diff;
        for &g in &order {
            let take = deficit.min(counts[g]);
            counts[g] -= take;
            deficit -= take;
            if deficit == 0 {
                break;
            }
        }
    }
    Ok(counts.into_iter().map(|c| c as usize).collect())
}

/// Generator index per prediction slot, in generator order.
pub fn expand_counts(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
        .collect()
}

/// `k` predicted futures for one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// World-frame positions, 12 per trajectory.
    pub trajectories: Vec<Vec<Vec2>>,
    pub generator_ids: Vec<usize>,
    /// `π_g` of the producing generator at generation time.
    pub pi_values: Vec<f64>,
    /// Seed of the noise stream behind each trajectory.
    pub noise_seeds: Vec<u64>,
    /// The full distribution over generators for this observation.
    pub pi: Vec<f64>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Draws the noise input for one trajectory from its own seed. InfoGAN-style
/// codes are drawn uniformly after `z`.
fn noise_row(model: &Model, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = &model.config;
    let mut z: Vec<f64> = (0..cfg.z_dim).map(|_| rng.sample(StandardNormal)).collect();
    if cfg.code_dim > 0 {
        let code = rng.random_range(0..cfg.code_dim);
        z.extend((0..cfg.code_dim).map(|c| if c == code { 1.0 } else { 0.0 }));
    }
    z
}

/// Samples `[start, end)` of a larger job: sample `i` draws from stream `i`
/// of `seed`, so results do not depend on chunking or thread count.
fn predict_chunk(
    model: &Model,
    samples: &[&SceneSample],
    start: usize,
    k: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<Vec<PredictionSet>> {
    let n = samples.len();
    let batch = EncoderBatch::new(samples)?;
    let mut g = Graph::new();
    let enc = model.encoder.forward(&mut g, &model.store, &batch, false)?;
    let pi = model.pi(&mut g, enc.c, false)?;
    let pi = g.value(pi).clone();
    let mut rows = Vec::with_capacity(n * k);
    let mut gens = Vec::with_capacity(n * k);
    let mut seeds = Vec::with_capacity(n * k);
    let mut z = Vec::with_capacity(n * k * model.config.noise_dim());
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((start + i) as u64);
        let pi_i = pi.row_slice(i);
        let ids = match strategy {
            Strategy::Random => sample_random(pi_i, k, &mut rng),
            Strategy::Expectation => expand_counts(&sample_expectation(pi_i, k)?),
        };
        for id in ids {
            let s: u64 = rng.random();
            rows.push(i);
            gens.push(id);
            seeds.push(s);
            z.extend(noise_row(model, s));
        }
    }
    let z = Tensor::new(&[n * k, model.config.noise_dim()], z)?;
    let last = g.constant(batch.last_disp.clone());
    let out = model.decode(&mut g, enc.c, last, &rows, &gens, &z, false)?;
    let out = g.value(out);
    if !out.is_finite() {
        return Err(Error::NonFinite("predicted trajectory".into()));
    }
    Ok((0..n)
        .map(|i| {
            let s = samples[i];
            let range = i * k..(i + 1) * k;
            PredictionSet {
                trajectories: range
                    .clone()
                    .map(|r| {
                        let row = out.row_slice(r);
                        (0..PRED_LEN)
                            .map(|t| s.anchor + Vec2::new(row[2 * t], row[2 * t + 1]))
                            .collect()
                    })
                    .collect(),
                generator_ids: gens[range.clone()].to_vec(),
                pi_values: gens[range.clone()]
                    .iter()
                    .map(|&id| pi.row_slice(i)[id])
                    .collect(),
                noise_seeds: seeds[range].to_vec(),
                pi: pi.row_slice(i).to_vec(),
            }
        })
        .collect())
}

pub const PREDICT_CHUNK: usize = 32;

/// `k` predictions for every sample. Encodes and computes `π` once per
/// sample, then decodes each trajectory with fresh noise.
pub fn predict(
    model: &Model,
    samples: &[SceneSample],
    k: usize,
    strategy: Strategy,
    seed: u64,
    exec: Exec,
) -> Result<Vec<PredictionSet>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let refs: Vec<&SceneSample> = samples.iter().collect();
    let chunks: Vec<&[&SceneSample]> = refs.chunks(PREDICT_CHUNK).collect();
    let parts = exec.map(&chunks, |c, chunk| {
        predict_chunk(model, chunk, c * PREDICT_CHUNK, k, strategy, seed)
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// CSV with header `sample_id,generator_id,pi,t,x,y`; one row per predicted
/// position, `t` counting future steps from 0.
pub fn write_predictions_csv(path: &Path, sets: &[PredictionSet]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "sample_id,generator_id,pi,t,x,y")?;
    for (i, s) in sets.iter().enumerate() {
        for (traj, (&gid, &p)) in s
            .trajectories
            .iter()
            .zip(s.generator_ids.iter().zip(&s.pi_values))
        {
            for (t, pt) in traj.iter().enumerate() {
                writeln!(out, "{i},{gid},{p:.6},{t},{:.6},{:.6}", pt.x, pt.y)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectation_examples() {
        assert_eq!(
            sample_expectation(&[0.5, 0.3, 0.2], 10).unwrap(),
            vec![5, 3, 2]
        );
        assert_eq!(sample_expectation(&[0.55, 0.45], 2).unwrap(), vec![1, 1]);
        assert_eq!(
            sample_expectation(&[0.5, 0.25, 0.25], 2).unwrap(),
            vec![0, 1, 1]
        );
        assert!(sample_expectation(&[1.0], 0).is_err());
    }

    #[test]
    fn expectation_cascades_deficit() {
        // Ten halves all round up to 1; the top count alone cannot absorb −5.
        let pi = [0.1; 10];
        let c = sample_expectation(&pi, 5).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 5);
        assert_eq!(c, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn random_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_random(&[0.0, 1.0, 0.0], 50, &mut rng)
            .iter()
            .all(|&g| g == 1));
        let ids = sample_random(&[0.5, 0.5], 10_000, &mut rng);
        let ones = ids.iter().filter(|&&g| g == 1).count() as f64;
        assert!((ones - 5000.0).abs() < 3.0 * 50.0);
        let a = sample_random(&[0.2, 0.8], 100, &mut ChaCha8Rng::seed_from_u64(4));
        let b = sample_random(&[0.2, 0.8], 100, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn categorical_skips_zero_mass() {
        assert_eq!(categorical(&[0.0, 1.0], 0.0), 1);
        assert_eq!(categorical(&[0.5, 0.5, 0.0], 0.999_999_999_999), 1);
    }
}
