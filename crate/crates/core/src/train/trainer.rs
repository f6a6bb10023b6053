//! Alternating discriminator, classifier, generator and PM-Net updates.
//!
//! All randomness for a batch is drawn up front on the calling thread from a
//! single seeded stream. Each step splits the batch into fixed-size chunks,
//! differentiates them independently (possibly in parallel) and sums the
//! gradients in chunk order, so results do not depend on the thread count.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::build_baseline;
use crate::error::{Error, Result};
use crate::model::{future_tensor, EncoderBatch, Model, ModelConfig, SceneSample};
use crate::nn::{AdamState, Grads, Graph, Tensor, Var};
use crate::par::Exec;
use crate::sampling::categorical;
use crate::train::losses::{mean_step_l2, pm_log_likelihood, pm_posterior_from_log};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_cl: f64,
    pub g_bom: f64,
    pub pm_loss: f64,
}

pub fn write_log_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,d_loss,g_adv,g_cl,g_bom,pm_loss")?;
    for l in logs {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            l.epoch, l.d_loss, l.g_adv, l.g_cl, l.g_bom, l.pm_loss
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Per-network optimizer states.
#[derive(Debug, Clone)]
struct Optimizers {
    d: AdamState,
    c: Option<AdamState>,
    enc: AdamState,
    gens: Vec<AdamState>,
    pm: Option<AdamState>,
}

impl Optimizers {
    fn new(model: &Model, cfg: &TrainConfig) -> Self {
        let a = cfg.adam;
        let s = &model.store;
        Self {
            d: AdamState::new(a, s, &model.discriminator_params()),
            c: model
                .has_classifier()
                .then(|| AdamState::new(a, s, &model.classifier_params())),
            enc: AdamState::new(a, s, &model.encoder_params()),
            gens: (0..model.config.n_generators)
                .map(|g| AdamState::new(a, s, &model.generator_params(g)))
                .collect(),
            pm: model
                .pm
                .as_ref()
                .map(|_| AdamState::new(a, s, &model.pm_params())),
        }
    }
}

/// Noise rows and their categorical codes (all zero without a code).
#[derive(Debug, Clone)]
pub struct Noise {
    pub z: Tensor,
    pub codes: Vec<usize>,
}

impl Noise {
    fn draw<R: Rng>(rng: &mut R, cfg: &ModelConfig, rows: usize) -> Self {
        let width = cfg.noise_dim();
        let mut z = Vec::with_capacity(rows * width);
        let mut codes = Vec::with_capacity(rows);
        for _ in 0..rows {
            z.extend((0..cfg.z_dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let code = if cfg.code_dim > 0 {
                rng.random_range(0..cfg.code_dim)
            } else {
                0
            };
            z.extend((0..cfg.code_dim).map(|c| if c == code { 1.0 } else { 0.0 }));
            codes.push(code);
        }
        Self {
            z: Tensor::new(&[rows, width], z).expect("sized"),
            codes,
        }
    }

    fn rows(&self, idx: impl Iterator<Item = usize>) -> Tensor {
        let w = self.z.cols();
        let data: Vec<f64> = idx.flat_map(|r| self.z.row_slice(r).to_vec()).collect();
        let n = data.len() / w.max(1);
        Tensor::new(&[n, w], data).expect("sized")
    }
}

/// Everything random a batch consumes, drawn in a fixed order.
#[derive(Debug, Clone)]
pub struct BatchDraws {
    pub d_u: Vec<f64>,
    pub d_noise: Noise,
    /// `n · q` candidate draws, sample-major.
    pub g_u: Vec<f64>,
    pub g_noise: Noise,
    /// `n · n_G · l` posterior draws, sample-major then generator-major.
    pub pm_noise: Noise,
}

struct Chunk {
    start: usize,
    enc: EncoderBatch,
    y: Tensor,
}

/// A prepared batch: encoder inputs per chunk plus its random draws.
pub struct Batch {
    n: usize,
    chunks: Vec<Chunk>,
    pub draws: BatchDraws,
    /// Fakes and their class labels from the discriminator step, reused by
    /// the classifier step.
    fakes: Vec<(Tensor, Vec<usize>)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Per-sample means of the quantities of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeneratorStats {
    pub adv: f64,
    pub cl: f64,
    pub bom: f64,
}

fn check_finite(step: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{step} loss")))
    }
}

fn backward_grads(g: &Graph, loss: Var) -> Result<Grads> {
    Ok(g.param_grads(&g.backward(loss)?))
}

/// Discriminator loss over real futures `y` and `fake` trajectories, both
/// `[n, 24]`, summed and scaled by `1 / norm`.
pub fn discriminator_graph(
    model: &Model,
    enc: &EncoderBatch,
    y: &Tensor,
    fake: &Tensor,
    norm: f64,
) -> Result<(Graph, Var)> {
    let n = enc.n;
    let mut g = Graph::new();
    let critic = &model.critic;
    let cond = critic.enc.forward(&mut g, &model.store, enc, true)?.c;
    let real = g.constant(y.clone());
    let fk = g.constant(fake.clone());
    let traj = g.concat_rows(&[real, fk])?;
    let owner: Vec<usize> = (0..n).chain(0..n).collect();
    let feat = critic.features(&mut g, &model.store, cond, &owner, traj, true)?;
    let d = critic.discriminate(&mut g, &model.store, feat, true)?;
    let dr = g.gather_rows(d, &(0..n).collect::<Vec<_>>())?;
    let df = g.gather_rows(d, &(n..2 * n).collect::<Vec<_>>())?;
    let lr = g.log_prob(dr);
    let not_fake = g.affine(df, -1.0, 1.0);
    let lf = g.log_prob(not_fake);
    let (sr, sf) = (g.sum(lr), g.sum(lf));
    let tot = g.add(sr, sf)?;
    let loss = g.scale(tot, -1.0 / norm);
    Ok((g, loss))
}

/// Classifier cross entropy of `fake [n, 24]` against `labels`.
pub fn classifier_graph(
    model: &Model,
    enc: &EncoderBatch,
    fake: &Tensor,
    labels: &[usize],
    norm: f64,
) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let critic = &model.critic;
    let cond = critic.enc.forward(&mut g, &model.store, enc, true)?.c;
    let fk = g.constant(fake.clone());
    let rows: Vec<usize> = (0..enc.n).collect();
    let feat = critic.features(&mut g, &model.store, cond, &rows, fk, true)?;
    let probs = critic
        .classify(&mut g, &model.store, feat, true)?
        .ok_or_else(|| Error::invalid("model has no classifier"))?;
    let lp = g.log_prob(probs);
    let picked = g.pick_cols(lp, labels)?;
    let s = g.sum(picked);
    let loss = g.scale(s, -1.0 / norm);
    Ok((g, loss))
}

/// Which candidates the generator step decodes on the tape.
#[derive(Debug, Clone)]
pub struct GeneratorPlan {
    /// Generator and noise row of the candidate that receives the
    /// adversarial and classification terms, per sample.
    pub first_gens: Vec<usize>,
    pub first_z: Tensor,
    /// Best-of-many winner per sample; `None` reuses the first candidate.
    pub best: Option<(Vec<usize>, Tensor)>,
    /// Class label of the first candidate.
    pub labels: Vec<usize>,
}

/// Generator objective for one chunk. Also returns the per-sample sums of
/// the adversarial, classification and best-of-many terms, each over `norm`.
pub fn generator_graph(
    model: &Model,
    enc: &EncoderBatch,
    y: &Tensor,
    plan: &GeneratorPlan,
    lambda_traj: f64,
    lambda_cl: f64,
    norm: f64,
) -> Result<(Graph, Var, [f64; 3])> {
    let n = enc.n;
    let store = &model.store;
    let mut g = Graph::new();
    let e = model.encoder.forward(&mut g, store, enc, true)?;
    let idx: Vec<usize> = (0..n).collect();
    let (rows, gens, z) = match &plan.best {
        Some((bg, bz)) => {
            let mut z = bz.data().to_vec();
            z.extend_from_slice(plan.first_z.data());
            let gens: Vec<usize> = bg.iter().chain(&plan.first_gens).copied().collect();
            (
                idx.iter().chain(&idx).copied().collect::<Vec<_>>(),
                gens,
                Tensor::new(&[2 * n, bz.cols()], z)?,
            )
        }
        None => (idx.clone(), plan.first_gens.clone(), plan.first_z.clone()),
    };
    let last = g.constant(enc.last_disp.clone());
    let out = model.decode(&mut g, e.c, last, &rows, &gens, &z, true)?;
    let (best_out, first) = if plan.best.is_some() {
        (
            g.gather_rows(out, &idx)?,
            g.gather_rows(out, &(n..2 * n).collect::<Vec<_>>())?,
        )
    } else {
        (out, out)
    };

    let mut terms = Vec::new();
    let mut stats = [0.0; 3];
    if lambda_traj > 0.0 {
        let yv = g.constant(y.clone());
        let l2 = g.stepwise_l2(best_out, yv)?;
        let sum = g.sum(l2);
        stats[2] = g.scalar(sum) / norm;
        terms.push(g.scale(sum, lambda_traj / norm));
    }
    let critic = &model.critic;
    let cond = critic.enc.forward(&mut g, store, enc, false)?.c;
    let feat = critic.features(&mut g, store, cond, &idx, first, false)?;
    let d = critic.discriminate(&mut g, store, feat, false)?;
    let ld = g.log_prob(d);
    let sd = g.sum(ld);
    stats[0] = -g.scalar(sd) / norm;
    terms.push(g.scale(sd, -1.0 / norm));
    if lambda_cl > 0.0 {
        if let Some(probs) = critic.classify(&mut g, store, feat, false)? {
            let lp = g.log_prob(probs);
            let picked = g.pick_cols(lp, &plan.labels)?;
            let sc = g.sum(picked);
            stats[1] = -g.scalar(sc) / norm;
            terms.push(g.scale(sc, -lambda_cl / norm));
        }
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = g.add(loss, t)?;
    }
    Ok((g, loss, stats))
}

/// PM-Net cross entropy against `posterior [n, n_G]` for conditions `c`.
pub fn pm_graph(model: &Model, c: &Tensor, posterior: &Tensor, norm: f64) -> Result<(Graph, Var)> {
    let pm = model
        .pm
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no PM-Net"))?;
    let mut g = Graph::new();
    let c = g.constant(c.clone());
    let pi = pm.forward(&mut g, &model.store, c, true)?;
    let lp = g.log_prob(pi);
    let post = g.constant(posterior.clone());
    let weighted = g.mul(lp, post)?;
    let sum = g.sum(weighted);
    let loss = g.scale(sum, -1.0 / norm);
    Ok((g, loss))
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    samples: Vec<SceneSample>,
    opt: Optimizers,
    rng: ChaCha8Rng,
    exec: Exec,
    epoch: usize,
}

impl Trainer {
    /// Builds the model for `config.model` and the trainer around it.
    pub fn new(config: &TrainConfig, samples: Vec<SceneSample>, exec: Exec) -> Result<Self> {
        let (cfg, model_cfg) = build_baseline(config.model, config)?;
        let model = Model::new(model_cfg, cfg.seed)?;
        Self::with_model(model, cfg, samples, exec)
    }

    pub fn with_model(
        model: Model,
        config: TrainConfig,
        samples: Vec<SceneSample>,
        exec: Exec,
    ) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::invalid("training needs at least one sample"));
        }
        if samples.iter().any(|s| s.future.is_none()) {
            return Err(Error::invalid(
                "every training sample needs a ground-truth future",
            ));
        }
        let opt = Optimizers::new(&model, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            model,
            config,
            samples,
            opt,
            rng,
            exec,
            epoch: 0,
        })
    }

    pub fn samples(&self) -> &[SceneSample] {
        &self.samples
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn draw(&mut self, n: usize) -> BatchDraws {
        let cfg = self.model.config;
        let q = self.config.q;
        let rng = &mut self.rng;
        let d_u = (0..n).map(|_| rng.random()).collect();
        let d_noise = Noise::draw(rng, &cfg, n);
        let g_u = (0..n * q).map(|_| rng.random()).collect();
        let g_noise = Noise::draw(rng, &cfg, n * q);
        let pm_rows = if self.model.pm.is_some() {
            n * cfg.n_generators * self.config.l
        } else {
            0
        };
        let pm_noise = Noise::draw(rng, &cfg, pm_rows);
        BatchDraws {
            d_u,
            d_noise,
            g_u,
            g_noise,
            pm_noise,
        }
    }

    /// Assembles encoder inputs for the samples at `indices` and draws the
    /// batch's randomness.
    pub fn prepare_batch(&mut self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let draws = self.draw(indices.len());
        let cs = self.config.chunk_size;
        let parts: Vec<&[usize]> = indices.chunks(cs).collect();
        let samples = &self.samples;
        let chunks = self
            .exec
            .map(&parts, |k, part| -> Result<Chunk> {
                let refs: Vec<&SceneSample> = part.iter().map(|&i| &samples[i]).collect();
                Ok(Chunk {
                    start: k * cs,
                    enc: EncoderBatch::new(&refs)?,
                    y: future_tensor(&refs)?,
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            n: indices.len(),
            chunks,
            draws,
            fakes: Vec::new(),
        })
    }

    /// Runs `f` over chunks and sums gradients and statistics in chunk order.
    fn over_chunks<const K: usize, X: Send, F>(
        &self,
        batch: &Batch,
        f: F,
    ) -> Result<(Grads, [f64; K], Vec<X>)>
    where
        F: Fn(&Model, usize, &Chunk) -> Result<(Grads, [f64; K], X)> + Sync,
    {
        let model = &self.model;
        let results = self.exec.map(&batch.chunks, |k, c| f(model, k, c));
        let mut grads = Grads::new();
        let mut stats = [0.0; K];
        let mut extra = Vec::with_capacity(results.len());
        for r in results {
            let (g, s, x) = r?;
            grads.merge(&g);
            for (a, b) in stats.iter_mut().zip(s) {
                *a += b;
            }
            extra.push(x);
        }
        Ok((grads, stats, extra))
    }

    /// Discriminator update on real futures against fakes from the current
    /// (frozen) generator side. Returns the loss.
    pub fn step_discriminator(&mut self, batch: &mut Batch) -> Result<f64> {
        let big_n = batch.n as f64;
        let draws = &batch.draws;
        let (grads, [loss], fakes) = self.over_chunks(batch, |model, _, chunk| {
            let n = chunk.enc.n;
            let s = chunk.start;
            let mut g = Graph::new();
            let enc = model
                .encoder
                .forward(&mut g, &model.store, &chunk.enc, false)?;
            let pi = model.pi(&mut g, enc.c, false)?;
            let pi = g.value(pi).clone();
            let gens: Vec<usize> = (0..n)
                .map(|i| categorical(pi.row_slice(i), draws.d_u[s + i]))
                .collect();
            let z = draws.d_noise.rows(s..s + n);
            let last = g.constant(chunk.enc.last_disp.clone());
            let rows: Vec<usize> = (0..n).collect();
            let fake = model.decode(&mut g, enc.c, last, &rows, &gens, &z, false)?;
            let fake = g.value(fake).clone();
            let labels = if model.config.code_dim > 0 {
                draws.d_noise.codes[s..s + n].to_vec()
            } else {
                gens
            };

            let (g, loss) = discriminator_graph(model, &chunk.enc, &chunk.y, &fake, big_n)?;
            let value = check_finite("discriminator", g.scalar(loss))?;
            Ok((backward_grads(&g, loss)?, [value], (fake, labels)))
        })?;
        self.opt.d.step(&mut self.model.store, &grads)?;
        batch.fakes = fakes;
        Ok(loss)
    }

    /// Classifier update on the fakes of the preceding discriminator step.
    /// Returns `None` when the model has no classifier.
    pub fn step_classifier(&mut self, batch: &Batch) -> Result<Option<f64>> {
        if !self.model.has_classifier() {
            return Ok(None);
        }
        if batch.fakes.len() != batch.chunks.len() {
            return Err(Error::invalid(
                "classifier step needs the discriminator step's fakes",
            ));
        }
        let big_n = batch.n as f64;
        let (grads, [loss], _) = self.over_chunks(batch, |model, k, chunk| {
            let (fake, labels) = &batch.fakes[k];
            let (g, loss) = classifier_graph(model, &chunk.enc, fake, labels, big_n)?;
            let value = check_finite("classifier", g.scalar(loss))?;
            Ok((backward_grads(&g, loss)?, [value], ()))
        })?;
        self.opt
            .c
            .as_mut()
            .expect("classifier optimizer")
            .step(&mut self.model.store, &grads)?;
        Ok(Some(loss))
    }

    /// Encoder and generator update: adversarial and classification terms on
    /// one candidate per sample, best-of-many over `q` candidates.
    pub fn step_generator(&mut self, batch: &Batch) -> Result<GeneratorStats> {
        let big_n = batch.n as f64;
        let q = self.config.q;
        let (lambda_traj, lambda_cl) = (self.config.lambda_traj, self.config.lambda_cl);
        let draws = &batch.draws;
        let (grads, [adv, cl, bom], _) = self.over_chunks(batch, |model, _, chunk| {
            let n = chunk.enc.n;
            let s = chunk.start;
            let cval = {
                let mut h = Graph::new();
                let e = model
                    .encoder
                    .forward(&mut h, &model.store, &chunk.enc, false)?;
                h.value(e.c).clone()
            };
            let pi = {
                let mut h = Graph::new();
                let c = h.constant(cval.clone());
                let p = model.pi(&mut h, c, false)?;
                h.value(p).clone()
            };
            let gens: Vec<usize> = (0..n * q)
                .map(|r| categorical(pi.row_slice(r / q), draws.g_u[s * q + r]))
                .collect();
            let use_bom = lambda_traj > 0.0;

            // Score all candidates off the tape; only the winners are taped.
            let best: Vec<usize> = if use_bom && q > 1 {
                let mut h = Graph::new();
                let c = h.constant(cval);
                let last = h.constant(chunk.enc.last_disp.clone());
                let rows: Vec<usize> = (0..n * q).map(|r| r / q).collect();
                let z = draws.g_noise.rows(s * q..(s + n) * q);
                let out = model.decode(&mut h, c, last, &rows, &gens, &z, false)?;
                let out = h.value(out);
                (0..n)
                    .map(|i| {
                        let y = chunk.y.row_slice(i);
                        let mut bj = (f64::INFINITY, 0);
                        for j in 0..q {
                            let d = mean_step_l2(out.row_slice(i * q + j), y);
                            if d < bj.0 {
                                bj = (d, j);
                            }
                        }
                        bj.1
                    })
                    .collect()
            } else {
                vec![0; n]
            };

            let first: Vec<usize> = (0..n).map(|i| i * q).collect();
            let plan = GeneratorPlan {
                first_gens: first.iter().map(|&r| gens[r]).collect(),
                first_z: draws.g_noise.rows(first.iter().map(|&r| s * q + r)),
                best: (use_bom && q > 1).then(|| {
                    let win: Vec<usize> = (0..n).map(|i| i * q + best[i]).collect();
                    (
                        win.iter().map(|&r| gens[r]).collect(),
                        draws.g_noise.rows(win.iter().map(|&r| s * q + r)),
                    )
                }),
                labels: if model.config.code_dim > 0 {
                    first
                        .iter()
                        .map(|&r| draws.g_noise.codes[s * q + r])
                        .collect()
                } else {
                    first.iter().map(|&r| gens[r]).collect()
                },
            };
            let (g, loss, stats) = generator_graph(
                model,
                &chunk.enc,
                &chunk.y,
                &plan,
                lambda_traj,
                lambda_cl,
                big_n,
            )?;
            check_finite("generator", g.scalar(loss))?;
            Ok((backward_grads(&g, loss)?, stats, ()))
        })?;
        self.opt.enc.step(&mut self.model.store, &grads)?;
        for (k, opt) in self.opt.gens.iter_mut().enumerate() {
            if self
                .model
                .generator_params(k)
                .iter()
                .any(|&id| grads.get(id).is_some())
            {
                opt.step(&mut self.model.store, &grads)?;
            }
        }
        Ok(GeneratorStats { adv, cl, bom })
    }

    /// PM-Net update towards the posterior over generators given the
    /// ground truth. Returns `None` when `π` is not learned.
    pub fn step_pm(&mut self, batch: &Batch) -> Result<Option<f64>> {
        if self.model.pm.is_none() {
            return Ok(None);
        }
        let big_n = batch.n as f64;
        let n_g = self.model.config.n_generators;
        let (l, sigma) = (self.config.l, self.config.sigma);
        let draws = &batch.draws;
        let (grads, [loss], _) = self.over_chunks(batch, |model, _, chunk| {
            let n = chunk.enc.n;
            let s = chunk.start;
            let store = &model.store;
            let mut h = Graph::new();
            let enc = model.encoder.forward(&mut h, store, &chunk.enc, false)?;
            let per = n_g * l;
            let rows: Vec<usize> = (0..n * per).map(|r| r / per).collect();
            let gens: Vec<usize> = (0..n * per).map(|r| (r % per) / l).collect();
            let z = draws.pm_noise.rows(s * per..(s + n) * per);
            let last = h.constant(chunk.enc.last_disp.clone());
            let out = model.decode(&mut h, enc.c, last, &rows, &gens, &z, false)?;
            let out = h.value(out);
            let mut post = Vec::with_capacity(n * n_g);
            for i in 0..n {
                let samples: Vec<Vec<Vec<f64>>> = (0..n_g)
                    .map(|gi| {
                        (0..l)
                            .map(|k| out.row_slice(i * per + gi * l + k).to_vec())
                            .collect()
                    })
                    .collect();
                let ll = pm_log_likelihood(chunk.y.row_slice(i), &samples, sigma)?;
                post.extend(pm_posterior_from_log(&ll)?);
            }

            let (g, loss) = pm_graph(model, h.value(enc.c), &Tensor::new(&[n, n_g], post)?, big_n)?;
            let value = check_finite("pm-net", g.scalar(loss))?;
            Ok((backward_grads(&g, loss)?, [value], ()))
        })?;
        self.opt
            .pm
            .as_mut()
            .expect("pm optimizer")
            .step(&mut self.model.store, &grads)?;
        Ok(Some(loss))
    }

    /// One full D, C, G, PM round on the samples at `indices`.
    pub fn train_batch(&mut self, indices: &[usize]) -> Result<EpochLog> {
        let mut batch = self.prepare_batch(indices)?;
        let d_loss = self.step_discriminator(&mut batch)?;
        self.step_classifier(&batch)?;
        let gs = self.step_generator(&batch)?;
        let pm_loss = self.step_pm(&batch)?.unwrap_or(0.0);
        Ok(EpochLog {
            epoch: self.epoch,
            d_loss,
            g_adv: gs.adv,
            g_cl: gs.cl,
            g_bom: gs.bom,
            pm_loss,
        })
    }

    /// One pass over the shuffled training samples.
    pub fn train_epoch(&mut self) -> Result<EpochLog> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut acc = EpochLog {
            epoch: self.epoch + 1,
            ..Default::default()
        };
        let total = order.len() as f64;
        for b in order.chunks(self.config.batch_size) {
            let log = self.train_batch(b).map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} (epoch {})", self.epoch + 1))
                }
                other => other,
            })?;
            let w = b.len() as f64 / total;
            acc.d_loss += w * log.d_loss;
            acc.g_adv += w * log.g_adv;
            acc.g_cl += w * log.g_cl;
            acc.g_bom += w * log.g_bom;
            acc.pm_loss += w * log.pm_loss;
        }
        self.epoch += 1;
        Ok(acc)
    }

    /// Runs the configured epoch budget, reporting each epoch to `on_epoch`.
    pub fn train(&mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::with_capacity(self.config.epochs);
        while self.epoch < self.config.epochs {
            let log = self.train_epoch()?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}
