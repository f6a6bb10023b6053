use mgtraj::baselines::{build_baseline, BaselineKind};
use mgtraj::model::{load_checkpoint, save_checkpoint, EncoderBatch, Model, ModelConfig, PiMode, SceneSample, ATT_CELLS};
use mgtraj::nn::{Graph, Tensor};
use mgtraj::par::Exec;
use mgtraj::sampling::{predict, Strategy};
use mgtraj::sim::Vec2;
use mgtraj::train::checks::synthetic_samples;
use mgtraj::train::TrainConfig;

fn model(n_generators: usize, seed: u64) -> Model {
    let cfg = ModelConfig { n_generators, z_dim: 8, code_dim: 0, pi_mode: PiMode::Learned };
    Model::new(cfg, seed).unwrap()
}

fn pi_of(m: &Model, samples: &[SceneSample]) -> Tensor {
    let refs: Vec<&SceneSample> = samples.iter().collect();
    let batch = EncoderBatch::new(&refs).unwrap();
    let mut g = Graph::new();
    let enc = m.encoder.forward(&mut g, &m.store, &batch, false).unwrap();
    let pi = m.pi(&mut g, enc.c, false).unwrap();
    g.value(pi).clone()
}

#[test]
fn zero_parameters_give_total_uniform_outputs() {
    let mut m = model(3, 1);
    m.store.zero_all();
    let samples = synthetic_samples(5, 2).unwrap();
    let pi = pi_of(&m, &samples);
    assert!(pi.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    let preds = predict(&m, &samples, 6, Strategy::Random, 3, Exec::Sequential).unwrap();
    for (p, s) in preds.iter().zip(&samples) {
        assert_eq!(p.len(), 6);
        assert!(p.trajectories.iter().flatten().all(|q| *q == s.anchor));
    }
    // A zeroed critic is maximally uncertain.
    let refs: Vec<&SceneSample> = samples.iter().collect();
    let batch = EncoderBatch::new(&refs).unwrap();
    let mut g = Graph::new();
    let cond = m.critic.enc.forward(&mut g, &m.store, &batch, false).unwrap().c;
    let traj = g.constant(Tensor::full(&[5, 24], 0.7));
    let rows: Vec<usize> = (0..5).collect();
    let feat = m.critic.features(&mut g, &m.store, cond, &rows, traj, false).unwrap();
    let d = m.critic.discriminate(&mut g, &m.store, feat, false).unwrap();
    assert!(g.value(d).data().iter().all(|&v| v == 0.5));
}

#[test]
fn predictions_translate_with_the_scene() {
    let m = model(2, 4);
    let samples = synthetic_samples(4, 9).unwrap();
    let delta = Vec2::new(13.5, -7.25);
    let moved: Vec<SceneSample> = samples.iter().map(|s| s.translated(delta)).collect();
    let a = predict(&m, &samples, 5, Strategy::Random, 11, Exec::Sequential).unwrap();
    let b = predict(&m, &moved, 5, Strategy::Random, 11, Exec::Sequential).unwrap();
    for (pa, pb) in a.iter().zip(&b) {
        assert_eq!(pa.generator_ids, pb.generator_ids);
        for (ta, tb) in pa.trajectories.iter().zip(&pb.trajectories) {
            for (x, y) in ta.iter().zip(tb) {
                assert!((*x + delta).dist(*y) < 1e-9);
            }
        }
    }
}

#[test]
fn attention_weights_are_distributions() {
    let m = model(2, 5);
    let samples = synthetic_samples(3, 1).unwrap();
    let refs: Vec<&SceneSample> = samples.iter().collect();
    let batch = EncoderBatch::new(&refs).unwrap();
    let mut g = Graph::new();
    let enc = m.encoder.forward(&mut g, &m.store, &batch, false).unwrap();
    let att = g.value(enc.attention);
    assert_eq!(att.shape(), [3 * ATT_CELLS, 1]);
    for i in 0..3 {
        let w = &att.data()[i * ATT_CELLS..(i + 1) * ATT_CELLS];
        assert!(w.iter().all(|&v| v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    // Without a scoring signal attention is uniform over cells.
    let mut flat = m.clone();
    for id in flat.store.with_prefix("gen.enc.att.score") {
        flat.store.get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let enc = flat.encoder.forward(&mut g, &flat.store, &batch, false).unwrap();
    assert!(g.value(enc.attention).data().iter().all(|&v| (v - 1.0 / ATT_CELLS as f64).abs() < 1e-15));
}

#[test]
fn pi_is_a_simplex() {
    for seed in 0..5 {
        let m = model(2 + seed as usize, seed);
        let pi = pi_of(&m, &synthetic_samples(6, seed + 100).unwrap());
        for r in 0..pi.rows() {
            let row = pi.row_slice(r);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn mixed_generator_decoding_matches_per_row_decoding() {
    let m = model(3, 8);
    let samples = synthetic_samples(3, 4).unwrap();
    let refs: Vec<&SceneSample> = samples.iter().collect();
    let batch = EncoderBatch::new(&refs).unwrap();
    let rows = [2, 0, 1, 0, 2];
    let gens = [1, 2, 0, 0, 1];
    let z = Tensor::new(&[5, 8], (0..40).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
    let mut g = Graph::new();
    let enc = m.encoder.forward(&mut g, &m.store, &batch, false).unwrap();
    let last = g.constant(batch.last_disp.clone());
    let all = m.decode(&mut g, enc.c, last, &rows, &gens, &z, false).unwrap();
    let all = g.value(all).clone();
    for r in 0..5 {
        let zr = Tensor::new(&[1, 8], z.row_slice(r).to_vec()).unwrap();
        let one = m.decode(&mut g, enc.c, last, &[rows[r]], &[gens[r]], &zr, false).unwrap();
        assert_eq!(g.value(one).data(), all.row_slice(r));
    }
    assert!(m.decode(&mut g, enc.c, last, &[0], &[3], &Tensor::zeros(&[1, 8]), false).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(3, 21);
    let saved = save_checkpoint(dir.path(), &m, "mg_gan", "abc").unwrap();
    let (back, manifest) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(manifest, saved);
    assert_eq!(back.config, m.config);
    for id in m.store.ids() {
        let d = m.store.get(id).max_abs_diff(back.store.get(back.store.id(m.store.name(id)).unwrap()));
        assert!(d < 1e-6, "{}", m.store.name(id));
    }
    // Reloaded parameters are already f32-exact, so a second save is byte-identical.
    let dir2 = tempfile::tempdir().unwrap();
    save_checkpoint(dir2.path(), &back, "mg_gan", "abc").unwrap();
    for f in [mgtraj::model::PARAMS_FILE, mgtraj::model::MANIFEST_FILE] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap());
    }
    let samples = synthetic_samples(3, 2).unwrap();
    let a = predict(&m, &samples, 4, Strategy::Expectation, 1, Exec::Sequential).unwrap();
    let b = predict(&back, &samples, 4, Strategy::Expectation, 1, Exec::Sequential).unwrap();
    for (pa, pb) in a.iter().zip(&b) {
        for (ta, tb) in pa.trajectories.iter().zip(&pb.trajectories) {
            assert!(ta.iter().zip(tb).all(|(x, y)| x.dist(*y) < 1e-3));
        }
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &model(2, 0), "mg_gan", "h").unwrap();
    let p = dir.path().join(mgtraj::model::PARAMS_FILE);
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
    std::fs::write(dir.path().join(mgtraj::model::MANIFEST_FILE), "{").unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn baselines_share_the_encoder_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let mut shapes = Vec::new();
    for kind in BaselineKind::ALL {
        let (cfg, mcfg) = build_baseline(kind, &TrainConfig::default()).unwrap();
        let m = Model::new(mcfg, 0).unwrap();
        let out = dir.path().join(kind.name());
        let manifest = save_checkpoint(&out, &m, kind.name(), &cfg.hash()).unwrap();
        let enc: Vec<(String, Vec<usize>)> = manifest
            .tensors
            .iter()
            .filter(|t| t.name.starts_with("gen.enc."))
            .map(|t| (t.name.clone(), t.shape.clone()))
            .collect();
        assert!(!enc.is_empty());
        shapes.push(enc);
    }
    assert!(shapes.windows(2).all(|w| w[0] == w[1]));
}
