use std::time::Instant;

use mgtraj::baselines::BaselineKind;
use mgtraj::metrics::evaluate;
use mgtraj::model::samples_from_dataset;
use mgtraj::par::Exec;
use mgtraj::sampling::{predict, Strategy};
use mgtraj::sim::{build_junction_scene, make_circle_toy, simulate_dataset, SceneKind};
use mgtraj::train::{TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = BaselineKind::parse(&args[1]).unwrap();
    let epochs: usize = args[2].parse().unwrap();
    let data = &args[3];
    let extra = args.get(4).cloned().unwrap_or_default();
    let mut cfg = TrainConfig {
        model: kind,
        epochs,
        ..Default::default()
    };
    for kv in extra.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').unwrap();
        match k {
            "q" => cfg.q = v.parse().unwrap(),
            "ng" => cfg.n_generators = v.parse().unwrap(),
            "bs" => cfg.batch_size = v.parse().unwrap(),
            "lr" => cfg.adam.lr = v.parse().unwrap(),
            "seed" => cfg.seed = v.parse().unwrap(),
            "lcl" => cfg.lambda_cl = v.parse().unwrap(),
            _ => panic!("{k}"),
        }
    }
    let ds = if data == "circle" {
        make_circle_toy(1800, 7).unwrap()
    } else {
        let scene = build_junction_scene(SceneKind::ThreeWay, 4.0, 7).unwrap();
        simulate_dataset(&scene, 5000, 2, 7, Exec::default()).unwrap()
    };
    let (tr, te) = ds.split_indices(0.9);
    let te: Vec<usize> = te.into_iter().take(300).collect();
    let samples = samples_from_dataset(&ds, &tr).unwrap();
    let test = samples_from_dataset(&ds, &te).unwrap();
    let mut trainer = Trainer::new(&cfg, samples, Exec::default()).unwrap();
    let t = Instant::now();
    for e in 0..epochs {
        let log = trainer.train_epoch().unwrap();
        if (e + 1) % 2 == 0 || e + 1 == epochs {
            let preds = predict(
                &trainer.model,
                &test,
                20,
                Strategy::Expectation,
                1,
                Exec::default(),
            )
            .unwrap();
            let rep = evaluate(&ds, &te, &preds, ds.r_max).unwrap();
            let mut pis = vec![0.0; trainer.model.config.n_generators];
            for p in &preds {
                for (a, b) in pis.iter_mut().zip(&p.pi) {
                    *a += b / preds.len() as f64;
                }
            }
            println!(
                "ep {} {:.0}s d={:.3} adv={:.3} cl={:.3} bom={:.3} pm={:.3} | ade {:.3} fde {:.3} P {:.3} R {:.3} pi {:?}",
                e + 1, t.elapsed().as_secs_f64(), log.d_loss, log.g_adv, log.g_cl, log.g_bom, log.pm_loss,
                rep.ade, rep.fde, rep.precision, rep.recall, pis.iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>()
            );
        }
    }
}
