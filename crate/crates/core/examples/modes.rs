//! Ground-truth mode counts of the junction and corridor scenes for a set of
//! spawn bands, e.g. `modes 4.2-4.8 4.6-5.2`.

use mgtraj::metrics::count_modes_of;
use mgtraj::par::Exec;
use mgtraj::sim::{build_junction_scene, simulate_dataset, Dataset, SceneKind, OBS_LEN};

fn gt_modes(ds: &Dataset) -> (f64, f64, Vec<f64>) {
    let (mut total, mut multi, mut n) = (0.0, 0, 0);
    let mut steps = [0.0; 12];
    for members in ds.gt.groups().values() {
        let mc = count_modes_of(&ds.gt.aligned_futures(&ds.records, members[0]), ds.r_max);
        let w = members.len() as f64;
        total += mc.average * w;
        for (s, v) in steps.iter_mut().zip(&mc.per_step) {
            *s += *v as f64 * w;
        }
        let mut routes: Vec<usize> = members.iter().map(|&m| ds.records[m].route).collect();
        routes.sort();
        routes.dedup();
        multi += if routes.len() > 1 { members.len() } else { 0 };
        n += members.len();
    }
    let n = n as f64;
    (total / n, multi as f64 / n, steps.iter().map(|s| s / n).collect())
}

fn main() {
    for band in std::env::args().skip(1) {
        let (near, far) = band.split_once('-').expect("band as near-far");
        let (near, far): (f64, f64) = (near.parse().unwrap(), far.parse().unwrap());
        for seed in [7, 11] {
            let mut scene = build_junction_scene(SceneKind::ThreeWay, 4.0, seed).unwrap();
            let c = scene.junction;
            for r in &mut scene.routes {
                r.spawn.min.y = c.y - far;
                r.spawn.max.y = c.y - near;
            }
            let ds = simulate_dataset(&scene, 5000, 2, seed, Exec::default()).unwrap();
            let gap: f64 = ds.records.iter().map(|r| r.positions[OBS_LEN - 1].dist(c)).sum::<f64>() / ds.len() as f64;
            let (m, multi, steps) = gt_modes(&ds);
            let steps: Vec<String> = steps.iter().map(|v| format!("{v:.1}")).collect();
            println!("{band} seed {seed}: modes {m:.2} multi-route {multi:.2} obs-end {gap:.2} m | {}", steps.join(" "));
        }
    }
}
