//! Finite-difference checks of the composite training objectives with
//! respect to model parameters.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{future_tensor, EncoderBatch, Model, ModelConfig, PiMode, SceneSample};
use crate::nn::{Graph, ParamId, Tensor, Var, FD_STEP, PATCH_SIZE};
use crate::sim::{Vec2, OBS_LEN, PRED_LEN};
use crate::train::trainer::{
    classifier_graph, discriminator_graph, generator_graph, pm_graph, GeneratorPlan,
};

/// Max relative error `|g_ad − g_fd| / max(1, |g_fd|)` over `per_param`
/// random entries of each parameter in `ids`.
pub fn param_grad_check<F>(
    model: &Model,
    ids: &[ParamId],
    per_param: usize,
    seed: u64,
    f: F,
) -> Result<f64>
where
    F: Fn(&Model) -> Result<(Graph, Var)>,
{
    let (g, root) = f(model)?;
    let grads = g.param_grads(&g.backward(root)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = model.clone();
    let mut worst: f64 = 0.0;
    for &id in ids {
        let len = model.store.get(id).len();
        for _ in 0..per_param.min(len) {
            let j = rng.random_range(0..len);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[j]);
            let orig = model.store.get(id).data()[j];
            work.store.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let (gu, ru) = f(&work)?;
            work.store.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let (gd, rd) = f(&work)?;
            work.store.get_mut(id).data_mut()[j] = orig;
            let fd = (gu.scalar(ru) - gd.scalar(rd)) / (2.0 * FD_STEP);
            worst = worst.max((analytic - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn random_path<R: Rng>(rng: &mut R, start: Vec2, len: usize) -> Vec<Vec2> {
    let mut p = start;
    let dir = Vec2::from_angle(rng.random_range(-3.0..3.0));
    (0..len)
        .map(|_| {
            p += dir * rng.random_range(0.3..0.6)
                + Vec2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            p
        })
        .collect()
}

/// Small random scenes with neighbours and a shared obstacle patch.
pub fn synthetic_samples(n: usize, seed: u64) -> Result<Vec<SceneSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = PATCH_SIZE * PATCH_SIZE;
    let patch = Arc::new(Tensor::new(
        &[PATCH_SIZE, PATCH_SIZE, 1],
        (0..cells)
            .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
            .collect(),
    )?);
    (0..n)
        .map(|i| {
            let full = random_path(&mut rng, Vec2::new(10.0, 10.0), OBS_LEN + PRED_LEN);
            let nbs: Vec<Vec<Vec2>> = (0..i % 3)
                .map(|_| {
                    let x = rng.random_range(8.0..12.0);
                    random_path(&mut rng, Vec2::new(x, 10.0), OBS_LEN)
                })
                .collect();
            let refs: Vec<&[Vec2]> = nbs.iter().map(|v| v.as_slice()).collect();
            SceneSample::new(&full[..OBS_LEN], &refs, patch.clone())?.with_future(&full[OBS_LEN..])
        })
        .collect()
}

fn noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        &[rows, cols],
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .expect("sized")
}

/// Worst relative error of the discriminator, classifier, generator and
/// PM-Net objectives against central differences.
pub fn composite_suite(per_param: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let cfg = ModelConfig {
        n_generators: 2,
        z_dim: 4,
        code_dim: 0,
        pi_mode: PiMode::Learned,
    };
    let model = Model::new(cfg, seed)?;
    let samples = synthetic_samples(4, seed ^ 0x5eed)?;
    let refs: Vec<&SceneSample> = samples.iter().collect();
    let enc = EncoderBatch::new(&refs)?;
    let y = future_tensor(&refs)?;
    let n = refs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fake = noise(&mut rng, n, 2 * PRED_LEN);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let plan = GeneratorPlan {
        first_gens: labels.clone(),
        first_z: noise(&mut rng, n, cfg.noise_dim()),
        best: Some((
            (0..n).map(|i| (i + 1) % 2).collect(),
            noise(&mut rng, n, cfg.noise_dim()),
        )),
        labels: labels.clone(),
    };
    let c = noise(&mut rng, n, crate::model::COND);
    let mut post = Vec::new();
    for _ in 0..n {
        let a: f64 = rng.random_range(0.05..0.95);
        post.extend([a, 1.0 - a]);
    }
    let post = Tensor::new(&[n, 2], post)?;
    let norm = n as f64;

    let mut gen_ids = model.encoder_params();
    for k in 0..cfg.n_generators {
        gen_ids.extend(model.generator_params(k));
    }
    Ok(vec![
        (
            "discriminator",
            param_grad_check(
                &model,
                &model.discriminator_params(),
                per_param,
                seed,
                |m| discriminator_graph(m, &enc, &y, &fake, norm),
            )?,
        ),
        (
            "classifier",
            param_grad_check(&model, &model.classifier_params(), per_param, seed, |m| {
                classifier_graph(m, &enc, &fake, &labels, norm)
            })?,
        ),
        (
            "generator",
            param_grad_check(&model, &gen_ids, per_param, seed, |m| {
                generator_graph(m, &enc, &y, &plan, 1.0, 1.0, norm).map(|(g, v, _)| (g, v))
            })?,
        ),
        (
            "pm_net",
            param_grad_check(&model, &model.pm_params(), per_param, seed, |m| {
                pm_graph(m, &c, &post, norm)
            })?,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_objectives_pass() {
        for (name, err) in composite_suite(3, 5).unwrap() {
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}
