//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `MGTRAJ_ACCEPTANCE=quick` skips the training criteria (5 to 8).
//! `MGTRAJ_ACCEPTANCE_STRICT=1` turns any FAIL into a non-zero exit; by
//! default the binary reports and exits 0 so that a red training result
//! stays visible without hiding the other test targets.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mgtraj::baselines::BaselineKind;
use mgtraj::metrics::{count_modes_of, evaluate, manifold_score, precision, recall, MetricsReport};
use mgtraj::model::samples_from_dataset;
use mgtraj::par::Exec;
use mgtraj::sampling::{predict, sample_expectation, Strategy};
use mgtraj::sim::{
    build_junction_scene, circle_starts, make_circle_toy, simulate_dataset, Dataset, SceneKind,
    Vec2, OBS_LEN, PRED_LEN,
};
use mgtraj::train::{pm_posterior, TrainConfig, Trainer};
use mgtraj_cli::{
    eval, gen_data, grad_check, load_train_config, train, EvalArgs, GenDataArgs, SceneArg,
    TrainOverrides,
};

/// Junction training epochs per run. Nine runs share the budget.
const JUNCTION_EPOCHS: usize = 8;
const CIRCLE_EPOCHS: usize = 20;
const BASELINE_CIRCLE_EPOCHS: usize = 12;
const DATA_SEED: u64 = 7;
/// Held-out records scored per junction run.
const EVAL_RECORDS: usize = 300;

struct Outcome {
    id: usize,
    pass: Option<bool>,
    detail: String,
}

fn outcome(id: usize, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        pass: Some(pass),
        detail,
    }
}

fn skipped(id: usize) -> Outcome {
    Outcome {
        id,
        pass: None,
        detail: "skipped (quick mode)".into(),
    }
}

fn report(o: &Outcome) {
    let tag = match o.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("criterion {:>2}: {tag}  {}", o.id, o.detail);
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let r = grad_check(0).expect("gradient suite runs");
    let worst = |v: &[(String, f64)]| v.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let took = t.elapsed();
    outcome(
        1,
        r.passed() && took < Duration::from_secs(120),
        format!(
            "gradient checks: primitive max {:.2e}, composite max {:.2e}, {}",
            worst(&r.primitives),
            worst(&r.composites),
            secs(took)
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..9);
        let lik: Vec<f64> = (0..n)
            .map(|_| (-rng.random_range(0.0..30.0f64)).exp())
            .collect();
        let post = pm_posterior(&lik).unwrap();
        let total: f64 = lik.iter().sum();
        for (p, l) in post.iter().zip(&lik) {
            worst = worst.max((p - l / total).abs());
        }
    }
    let e = (-1.0f64).exp();
    let ex = pm_posterior(&[1.0, e]).unwrap();
    let example = (ex[0] - 1.0 / (1.0 + e)).abs() < 1e-12
        && (ex[1] - e / (1.0 + e)).abs() < 1e-12
        && (ex[0] - 0.7311).abs() < 5e-5
        && (ex[1] - 0.2689).abs() < 5e-5;
    outcome(
        2,
        worst < 1e-12 && example,
        format!("posterior vs Bayes on 1000 cases: max error {worst:.1e}; [1, e^-1] -> [{:.4}, {:.4}]", ex[0], ex[1]),
    )
}

fn random_set(rng: &mut ChaCha8Rng) -> Vec<Vec<Vec2>> {
    let n = rng.random_range(1..12);
    (0..n)
        .map(|_| {
            let base = Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            (0..PRED_LEN)
                .map(|_| base + Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect()
}

/// Per-timestep membership: a point may be covered by a different trajectory
/// at every step.
fn brute_score(phi: &[Vec2], set: &[Vec<Vec2>], r_max: f64) -> bool {
    let t_max = phi.len() as f64;
    (0..phi.len()).all(|t| {
        set.iter().any(|s| {
            let d = ((phi[t].x - s[t].x).powi(2) + (phi[t].y - s[t].y).powi(2)).sqrt();
            d <= r_max * (t + 1) as f64 / t_max
        })
    })
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..200 {
        let (a, b) = (random_set(&mut rng), random_set(&mut rng));
        let r = rng.random_range(0.3..3.0);
        let count = |x: &[Vec<Vec2>], y: &[Vec<Vec2>]| {
            x.iter().filter(|p| brute_score(p, y, r)).count() as f64 / x.len() as f64
        };
        if precision(&a, &b, r).unwrap() != count(&a, &b) || recall(&a, &b, r).unwrap() != count(&b, &a) {
            mismatches += 1;
        }
    }
    let phi: Vec<Vec2> = (0..PRED_LEN).map(|t| Vec2::new(t as f64, 0.0)).collect();
    let shift = |d: f64| -> Vec<Vec<Vec2>> { vec![phi.iter().map(|p| *p + Vec2::new(0.0, d)).collect()] };
    let examples = manifold_score(&phi, std::slice::from_ref(&phi), 2.0) == 1
        && manifold_score(&phi, &shift(3.0), 2.0) == 0
        && manifold_score(&phi, &shift(1.0), 2.0) == 0
        && manifold_score(&phi, &shift(1.0), 13.0) == 1;
    outcome(
        3,
        mismatches == 0 && examples,
        format!("precision/recall vs brute force: {mismatches}/200 mismatches; score examples hold: {examples}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..9);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / s).collect();
        let k = rng.random_range(1..=1000);
        if sample_expectation(&pi, k).unwrap().iter().sum::<usize>() != k {
            bad += 1;
        }
    }
    let examples = sample_expectation(&[0.5, 0.3, 0.2], 10).unwrap() == [5, 3, 2]
        && sample_expectation(&[0.55, 0.45], 2).unwrap() == [1, 1]
        && sample_expectation(&[0.5, 0.25, 0.25], 2).unwrap() == [0, 1, 1];
    outcome(
        4,
        bad == 0 && examples,
        format!("counts sum to k: {bad}/10000 failures; worked examples reproduce: {examples}"),
    )
}

fn junction_dataset(kind: SceneKind) -> Dataset {
    let scene = build_junction_scene(kind, 4.0, DATA_SEED).unwrap();
    simulate_dataset(&scene, 5000, 2, DATA_SEED, Exec::default()).unwrap()
}

struct Run {
    report: MetricsReport,
    took: Duration,
}

fn train_and_score(ds: &Dataset, cfg: &TrainConfig, test_limit: usize) -> (Run, Vec<usize>, Vec<mgtraj::sampling::PredictionSet>) {
    let t = Instant::now();
    let (tr, te) = ds.split_indices(cfg.train_fraction);
    let te: Vec<usize> = te.into_iter().take(test_limit).collect();
    let samples = samples_from_dataset(ds, &tr).unwrap();
    let test = samples_from_dataset(ds, &te).unwrap();
    let mut trainer = Trainer::new(cfg, samples, Exec::default()).unwrap();
    trainer.train(|_| {}).unwrap();
    let preds = predict(&trainer.model, &test, 20, Strategy::Expectation, 1, Exec::default()).unwrap();
    let report = evaluate(ds, &te, &preds, ds.r_max).unwrap();
    (
        Run {
            report,
            took: t.elapsed(),
        },
        te,
        preds,
    )
}

fn junction_run(ds: &Dataset, model: BaselineKind, n_generators: usize, q: usize) -> Run {
    let cfg = TrainConfig {
        model,
        n_generators,
        q,
        epochs: JUNCTION_EPOCHS,
        seed: 1,
        ..Default::default()
    };
    let (run, _, _) = train_and_score(ds, &cfg, EVAL_RECORDS);
    eprintln!(
        "  {} n_G={n_generators} q={q}: ADE {:.3} FDE {:.3} P {:.3} R {:.3} ({})",
        model.name(),
        run.report.ade,
        run.report.fde,
        run.report.precision,
        run.report.recall,
        secs(run.took)
    );
    run
}

fn training_criteria() -> Vec<Outcome> {
    let ds = junction_dataset(SceneKind::ThreeWay);
    let full = junction_run(&ds, BaselineKind::MgGan, 5, 20);
    let l2 = junction_run(&ds, BaselineKind::GanL2, 1, 20);
    let (f, b) = (&full.report, &l2.report);
    let c5 = outcome(
        5,
        f.precision >= 0.65
            && f.recall >= 0.85
            && f.precision - b.precision >= 0.20
            && (f.recall - b.recall).abs() <= 0.10
            && full.took + l2.took <= Duration::from_secs(1800),
        format!(
            "junction: mg_gan P {:.3} R {:.3} ADE {:.3}; gan_l2 P {:.3} R {:.3} ADE {:.3}; precision gap {:+.3}; {}",
            f.precision,
            f.recall,
            f.ade,
            b.precision,
            b.recall,
            b.ade,
            f.precision - b.precision,
            secs(full.took + l2.took)
        ),
    );

    let q1 = junction_run(&ds, BaselineKind::MgGan, 5, 1);
    let ratio = q1.report.ade / f.ade;
    let c6 = outcome(
        6,
        ratio >= 3.0,
        format!("ADE q=1 {:.3} vs q=20 {:.3}: ratio {ratio:.2}", q1.report.ade, f.ade),
    );

    let mut ades = Vec::new();
    for n_g in 2..=8 {
        let ade = if n_g == 5 {
            f.ade
        } else {
            junction_run(&ds, BaselineKind::MgGan, n_g, 20).report.ade
        };
        ades.push((n_g, ade));
    }
    let best = ades.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
    let worst_dev = ades.iter().map(|a| a.1 / best - 1.0).fold(0.0, f64::max);
    let listing: Vec<String> = ades.iter().map(|(g, a)| format!("{g}:{a:.3}")).collect();
    let c8 = outcome(
        8,
        worst_dev <= 0.25,
        format!("ADE over n_G [{}]: worst deviation {:.1}% from best", listing.join(" "), worst_dev * 100.0),
    );

    let c7 = circle_criterion();
    vec![c5, c6, c7, c8]
}

fn nearest_start(p: Vec2, starts: &[Vec2]) -> usize {
    (0..starts.len())
        .min_by(|&a, &b| p.dist(starts[a]).total_cmp(&p.dist(starts[b])))
        .unwrap()
}

fn circle_criterion() -> Outcome {
    let t = Instant::now();
    let ds = make_circle_toy(1800, DATA_SEED).unwrap();
    let starts = circle_starts();
    let cfg = |model, n_generators, epochs| TrainConfig {
        model,
        n_generators,
        epochs,
        seed: 1,
        ..Default::default()
    };
    let (mg, te, preds) = train_and_score(&ds, &cfg(BaselineKind::MgGan, 3, CIRCLE_EPOCHS), usize::MAX);
    let mut per_start = Vec::new();
    for s in 0..starts.len() {
        let pick: Vec<usize> = (0..te.len())
            .filter(|&i| nearest_start(ds.records[te[i]].positions[0], &starts) == s)
            .collect();
        let idx: Vec<usize> = pick.iter().map(|&i| te[i]).collect();
        let p: Vec<_> = pick.iter().map(|&i| preds[i].clone()).collect();
        per_start.push(evaluate(&ds, &idx, &p, ds.r_max).map(|r| r.recall).unwrap_or(0.0));
    }
    let (gan, _, _) = train_and_score(&ds, &cfg(BaselineKind::Gan, 1, BASELINE_CIRCLE_EPOCHS), usize::MAX);
    let (info, _, _) = train_and_score(&ds, &cfg(BaselineKind::Infogan, 3, BASELINE_CIRCLE_EPOCHS), usize::MAX);
    let p = mg.report.precision;
    let min_recall = per_start.iter().copied().fold(1.0, f64::min);
    let took = t.elapsed();
    let recalls: Vec<String> = per_start.iter().map(|r| format!("{r:.2}")).collect();
    outcome(
        7,
        min_recall >= 0.9
            && p >= 0.8
            && gan.report.precision < p
            && info.report.precision < p
            && took <= Duration::from_secs(600),
        format!(
            "circle (R_max {:.2}): mg_gan P {p:.3}, recall per start [{}]; gan P {:.3}; infogan P {:.3}; {}",
            ds.r_max,
            recalls.join(" "),
            gan.report.precision,
            info.report.precision,
            secs(took)
        ),
    )
}

/// Mode count of the GT sets whose observation ends within `radius` of
/// `centre`, weighted by membership. Members share a quantized observation,
/// so each set is counted once, aligned to its first member.
fn mean_modes(ds: &Dataset, centre: Option<Vec2>, radius: f64) -> (f64, usize) {
    let mut total = 0.0;
    let mut n = 0;
    for members in ds.gt.groups().values() {
        let first = members[0];
        if let Some(c) = centre {
            if ds.records[first].positions[OBS_LEN - 1].dist(c) > radius {
                continue;
            }
        }
        let modes = count_modes_of(&ds.gt.aligned_futures(&ds.records, first), ds.r_max).average;
        total += modes * members.len() as f64;
        n += members.len();
    }
    (total / n.max(1) as f64, n)
}

fn criterion_9() -> Outcome {
    let scene = build_junction_scene(SceneKind::ThreeWay, 4.0, DATA_SEED).unwrap();
    let ds = junction_dataset(SceneKind::ThreeWay);
    let (j, nj) = mean_modes(&ds, Some(scene.junction), 2.0);
    let corridor = junction_dataset(SceneKind::Corridor);
    let (c, nc) = mean_modes(&corridor, None, 0.0);
    outcome(
        9,
        (2.0..=3.5).contains(&j) && (1.0..=1.5).contains(&c),
        format!("mode count: junction near split {j:.2} over {nj} records; corridor {c:.2} over {nc} records"),
    )
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Runs `step` twice into the same directory and compares every file.
fn twice(dir: &Path, mut step: impl FnMut()) -> bool {
    step();
    let first = read_tree(dir);
    let keep = dir.with_extension("first");
    fs::rename(dir, &keep).unwrap();
    step();
    let same = !first.is_empty() && first == read_tree(dir);
    fs::remove_dir_all(&keep).unwrap();
    same
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let run = root.join("run");
    let out = root.join("eval");
    let exec = Exec::default();
    let gen = twice(&data, || {
        gen_data(
            &GenDataArgs {
                scene: SceneArg::Junction3,
                n: 300,
                seed: 3,
                out: data.clone(),
            },
            exec,
        )
        .unwrap();
    });
    let cfg_path = root.join("cfg.json");
    fs::write(&cfg_path, r#"{"epochs": 1, "batch_size": 32, "q": 4}"#).unwrap();
    let cfg = load_train_config(
        &cfg_path,
        &TrainOverrides {
            data: Some(data.clone()),
            out: Some(run.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let trained = twice(&run, || {
        train(&cfg, exec).unwrap();
    });
    let evaluated = twice(&out, || {
        eval(
            &EvalArgs {
                limit: Some(10),
                out: Some(out.clone()),
                ..EvalArgs::new(run.clone(), data.clone())
            },
            exec,
        )
        .unwrap();
    });
    outcome(
        10,
        gen && trained && evaluated,
        format!("byte-identical reruns: gen-data {gen}, train {trained}, eval {evaluated}"),
    )
}

fn main() {
    // Under `cargo test` the harness passes filter arguments; list mode gets
    // an empty answer so tooling that enumerates tests does not run the suite.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let quick = std::env::var("MGTRAJ_ACCEPTANCE").is_ok_and(|v| v == "quick");
    let strict = std::env::var("MGTRAJ_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let t = Instant::now();
    let mut results = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4()];
    if quick {
        results.extend([5, 6, 7, 8].map(skipped));
    } else {
        results.extend(training_criteria());
    }
    results.push(criterion_9());
    results.push(criterion_10());
    results.sort_by_key(|o| o.id);
    println!("\nacceptance ({}):", secs(t.elapsed()));
    for o in &results {
        report(o);
    }
    let failed = results.iter().filter(|o| o.pass == Some(false)).count();
    println!("{failed} failed");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
