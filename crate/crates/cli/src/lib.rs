//! Commands behind the `mgtraj` binary: dataset generation, training,
//! evaluation and the gradient suite. Each command writes an
//! `experiment.json` manifest next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mgtraj::metrics::{evaluate, MetricsReport, DEFAULT_K};
use mgtraj::model::{load_checkpoint, samples_from_dataset, save_checkpoint};
use mgtraj::par::Exec;
use mgtraj::sampling::{predict, write_predictions_csv, Strategy};
use mgtraj::sim::io::{read_dataset, write_dataset};
use mgtraj::sim::{build_junction_scene, make_circle_toy, simulate_dataset, Dataset, SceneKind};
use mgtraj::train::{write_log_csv, TrainConfig, Trainer};

pub mod plot;

pub const MANIFEST: &str = "experiment.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOG_CSV: &str = "log.csv";
pub const RESOLVED_CONFIG: &str = "config.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const FAN_SVG: &str = "fan.svg";
pub const PI_SVG: &str = "pi_hist.svg";

/// Corridor width of the generated junction scenes (m).
pub const CORRIDOR_WIDTH: f64 = 4.0;
const MAX_AGENTS: usize = 2;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Maps an error chain to the exit-code contract: numeric failures give 3,
/// everything else (bad flags, configs, paths, formats) gives 2.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numeric = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<mgtraj::Error>(),
            Some(mgtraj::Error::NonFinite(_))
        ) || e.downcast_ref::<NumericFailure>().is_some()
    });
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericFailure(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub dataset_path: PathBuf,
    pub dataset_hash: String,
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_hash: Option<String>,
    pub tool_version: String,
}

impl ExperimentManifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// SHA-256 over the regular files of `dir` (names and contents, sorted by
/// name, subdirectories skipped).
pub fn hash_dir(dir: &Path) -> anyhow::Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST))
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(fs::read(&p)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn hash_json<T: Serialize>(v: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("serializable")))
}

fn tool_version() -> String {
    format!("mgtraj {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneArg {
    Junction2,
    Junction3,
    Corridor,
    Circle,
}

impl SceneArg {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "junction2" => Self::Junction2,
            "junction3" => Self::Junction3,
            "corridor" => Self::Corridor,
            "circle" => Self::Circle,
            other => anyhow::bail!(
                "unknown scene `{other}` (expected junction2|junction3|corridor|circle)"
            ),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDataArgs {
    pub scene: SceneArg,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Builds the dataset a `gen-data` call would write, without touching disk.
pub fn build_dataset(scene: SceneArg, n: usize, seed: u64, exec: Exec) -> anyhow::Result<Dataset> {
    anyhow::ensure!(n > 0, "--n must be at least 1");
    let kind = match scene {
        SceneArg::Circle => return Ok(make_circle_toy(n, seed)?),
        SceneArg::Junction2 => SceneKind::TwoWay,
        SceneArg::Junction3 => SceneKind::ThreeWay,
        SceneArg::Corridor => SceneKind::Corridor,
    };
    let scene = build_junction_scene(kind, CORRIDOR_WIDTH, seed)?;
    Ok(simulate_dataset(&scene, n, MAX_AGENTS, seed, exec)?)
}

pub fn gen_data(args: &GenDataArgs, exec: Exec) -> anyhow::Result<ExperimentManifest> {
    let ds = build_dataset(args.scene, args.n, args.seed, exec)?;
    if ds.log.discarded > 0 {
        info!(
            "kept {} records, discarded {} that missed their goal",
            ds.len(),
            ds.log.discarded
        );
    }
    write_dataset(&args.out, &ds)
        .with_context(|| format!("writing dataset to {}", args.out.display()))?;
    let manifest = ExperimentManifest {
        command: "gen-data".into(),
        config_hash: hash_json(args),
        seed: args.seed,
        dataset_path: args.out.clone(),
        dataset_hash: hash_dir(&args.out)?,
        checkpoint_path: None,
        checkpoint_hash: None,
        tool_version: tool_version(),
    };
    manifest.write(&args.out)?;
    Ok(manifest)
}

/// Top-level overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub n_generators: Option<usize>,
    pub q: Option<usize>,
}

pub fn load_train_config(path: &Path, o: &TrainOverrides) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::load(path)?;
    if let Some(d) = &o.data {
        cfg.data = Some(d.clone());
    }
    if let Some(d) = &o.out {
        cfg.out = Some(d.clone());
    }
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.n_generators {
        cfg.n_generators = v;
    }
    if let Some(v) = o.q {
        cfg.q = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub dataset: Dataset,
    pub manifest: ExperimentManifest,
    pub out: PathBuf,
}

/// Trains per `cfg` and writes checkpoint, loss log, resolved config and
/// manifest into `cfg.out`.
pub fn train(cfg: &TrainConfig, exec: Exec) -> anyhow::Result<TrainOutcome> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| mgtraj::Error::InvalidArgument("config field `data`: missing".into()))?;
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| mgtraj::Error::InvalidArgument("config field `out`: missing".into()))?;
    let dataset =
        read_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let (train_idx, _) = dataset.split_indices(cfg.train_fraction);
    anyhow::ensure!(
        !train_idx.is_empty(),
        "dataset {} has no training records",
        data.display()
    );
    let samples = samples_from_dataset(&dataset, &train_idx)?;
    let mut trainer = Trainer::new(cfg, samples, exec)?;
    let logs = trainer.train(|l| {
        info!(
            "epoch {} d={:.4} adv={:.4} cl={:.4} bom={:.4} pm={:.4}",
            l.epoch, l.d_loss, l.g_adv, l.g_cl, l.g_bom, l.pm_loss
        )
    })?;
    fs::create_dir_all(out)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    save_checkpoint(&ckpt, &trainer.model, cfg.model.name(), &cfg.hash())?;
    write_log_csv(&out.join(LOG_CSV), &logs)?;
    fs::write(
        out.join(RESOLVED_CONFIG),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    let manifest = ExperimentManifest {
        command: "train".into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        dataset_path: data.clone(),
        dataset_hash: hash_dir(data)?,
        checkpoint_path: Some(ckpt.clone()),
        checkpoint_hash: Some(hash_dir(&ckpt)?),
        tool_version: tool_version(),
    };
    manifest.write(out)?;
    Ok(TrainOutcome {
        trainer,
        dataset,
        manifest,
        out: out.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub k: usize,
    pub strategy: Strategy,
    /// Defaults to the radius stored with the dataset (2 m for junctions).
    pub r_max: Option<f64>,
    pub seed: u64,
    /// Leading fraction treated as training data; the rest is evaluated.
    pub train_fraction: f64,
    /// Caps the number of evaluated records.
    pub limit: Option<usize>,
    /// Expected generator count; must match the checkpoint when given.
    pub n_generators: Option<usize>,
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn new(ckpt: PathBuf, data: PathBuf) -> Self {
        Self {
            ckpt,
            data,
            k: DEFAULT_K,
            strategy: Strategy::Expectation,
            r_max: None,
            seed: 0,
            train_fraction: 0.9,
            limit: None,
            n_generators: None,
            out: None,
        }
    }
}

/// Accepts a run directory (holding `checkpoint/`) or a checkpoint directory.
fn checkpoint_dir(p: &Path) -> PathBuf {
    if p.join(CHECKPOINT_DIR).join(mgtraj::model::MANIFEST_FILE).is_file() {
        p.join(CHECKPOINT_DIR)
    } else {
        p.to_path_buf()
    }
}

pub fn eval(args: &EvalArgs, exec: Exec) -> anyhow::Result<MetricsReport> {
    anyhow::ensure!(args.k > 0, "--k must be at least 1");
    anyhow::ensure!(
        args.train_fraction >= 0.0 && args.train_fraction < 1.0,
        "--train-fraction must be in [0, 1)"
    );
    let ckpt = checkpoint_dir(&args.ckpt);
    let (model, manifest) =
        load_checkpoint(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    if let Some(n) = args.n_generators {
        anyhow::ensure!(
            n == manifest.n_generators,
            "config asks for {n} generators but the checkpoint has {}",
            manifest.n_generators
        );
    }
    let ds = read_dataset(&args.data)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    let (_, mut idx) = ds.split_indices(args.train_fraction);
    if let Some(n) = args.limit {
        idx.truncate(n);
    }
    anyhow::ensure!(!idx.is_empty(), "no records to evaluate");
    let r_max = args.r_max.unwrap_or(ds.r_max);
    anyhow::ensure!(r_max > 0.0, "--r-max must be positive");
    let samples = samples_from_dataset(&ds, &idx)?;
    let preds = predict(&model, &samples, args.k, args.strategy, args.seed, exec)?;
    let report = evaluate(&ds, &idx, &preds, r_max)?;

    let out = args.out.clone().unwrap_or_else(|| args.ckpt.join("eval"));
    fs::create_dir_all(&out)?;
    report.write_json(&out.join(METRICS_JSON))?;
    write_predictions_csv(&out.join(PREDICTIONS_CSV), &preds)?;
    fs::write(
        out.join(FAN_SVG),
        plot::fan_svg(&ds, idx[0], &preds[0], manifest.n_generators),
    )?;
    fs::write(
        out.join(PI_SVG),
        plot::pi_histogram_svg(&preds, manifest.n_generators),
    )?;
    ExperimentManifest {
        command: "eval".into(),
        config_hash: hash_json(&(args, r_max)),
        seed: args.seed,
        dataset_path: args.data.clone(),
        dataset_hash: hash_dir(&args.data)?,
        checkpoint_path: Some(ckpt.clone()),
        checkpoint_hash: Some(hash_dir(&ckpt)?),
        tool_version: tool_version(),
    }
    .write(&out)?;
    Ok(report)
}

/// Result rows of the finite-difference suite.
pub struct GradCheckReport {
    pub primitives: Vec<(String, f64)>,
    pub composites: Vec<(String, f64)>,
}

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.primitives.iter().all(|(_, e)| *e < PRIMITIVE_TOL)
            && self.composites.iter().all(|(_, e)| *e < COMPOSITE_TOL)
    }
}

pub fn grad_check(seed: u64) -> anyhow::Result<GradCheckReport> {
    let primitives = mgtraj::nn::primitive_suite(3, seed)?
        .into_iter()
        .map(|(n, e)| (n.to_string(), e))
        .collect();
    let composites = mgtraj::train::checks::composite_suite(6, seed)?
        .into_iter()
        .map(|(n, e)| (n.to_string(), e))
        .collect();
    Ok(GradCheckReport {
        primitives,
        composites,
    })
}
