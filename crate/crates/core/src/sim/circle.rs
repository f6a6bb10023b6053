//! Toy dataset: pedestrians start on a circle, walk towards its centre and
//! fan out into one of three directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::sim::{
    Dataset, DatasetKind, GroundTruthSet, OccupancyGrid, SimLog, TrajectoryRecord, Vec2,
    COORD_DECIMALS, DEFAULT_RESOLUTION, OBS_LEN, SEQ_LEN,
};

pub const CIRCLE_RADIUS: f64 = 4.0;
pub const CIRCLE_STARTS: usize = 6;
/// Final heading change of each mode relative to the inbound direction.
pub const FAN_ANGLES_DEG: [f64; 3] = [-60.0, 0.0, 60.0];
pub const CIRCLE_STEP: f64 = 0.25;
/// Future steps over which the heading turns to its final value.
const TURN_STEPS: usize = 4;
const POSITION_JITTER: f64 = 0.01;
const SPEED_JITTER: f64 = 0.02;
const WORLD: f64 = 16.0;

pub fn circle_center() -> Vec2 {
    Vec2::new(WORLD / 2.0, WORLD / 2.0)
}

pub fn circle_starts() -> Vec<Vec2> {
    (0..CIRCLE_STARTS)
        .map(|k| {
            circle_center()
                + Vec2::from_angle(2.0 * std::f64::consts::PI * k as f64 / CIRCLE_STARTS as f64)
                    * CIRCLE_RADIUS
        })
        .collect()
}

/// Noise-free path of `mode` from start `start`.
pub fn circle_path(start: usize, mode: usize, step: f64) -> Vec<Vec2> {
    let s = circle_starts()[start];
    let inbound = (circle_center() - s).normalized();
    let turn = FAN_ANGLES_DEG[mode].to_radians();
    let mut out = Vec::with_capacity(SEQ_LEN);
    let mut p = s;
    out.push(p);
    for t in 1..SEQ_LEN {
        let heading = if t < OBS_LEN {
            inbound
        } else {
            let j = (t - OBS_LEN + 1).min(TURN_STEPS);
            inbound.rotated(turn * j as f64 / TURN_STEPS as f64)
        };
        p += heading * step;
        out.push(p);
    }
    out
}

/// `n` records with starts assigned round-robin and modes drawn uniformly.
pub fn make_circle_toy(n: usize, seed: u64) -> Result<Dataset> {
    let grid = OccupancyGrid::from_fn(WORLD, WORLD, DEFAULT_RESOLUTION, |_| true)?;
    let jitter = Normal::new(0.0, POSITION_JITTER).expect("valid normal");
    let speed = Normal::new(1.0, SPEED_JITTER).expect("valid normal");
    let mut records = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let start = i % CIRCLE_STARTS;
        let mode = rng.random_range(0..FAN_ANGLES_DEG.len());
        let step = CIRCLE_STEP * speed.sample(&mut rng);
        let positions = circle_path(start, mode, step)
            .into_iter()
            .map(|p| {
                (p + Vec2::new(jitter.sample(&mut rng), jitter.sample(&mut rng)))
                    .rounded(COORD_DECIMALS)
            })
            .collect();
        records.push(TrajectoryRecord {
            scene_id: i as u32,
            ped_id: 0,
            positions,
            neighbors: vec![Vec::new(); SEQ_LEN],
            route: mode,
        });
        keys.push(format!("start{start}"));
    }
    Dataset::new(
        DatasetKind::Circle,
        grid,
        records,
        GroundTruthSet::from_keys(keys),
        SimLog {
            episodes: n,
            ..Default::default()
        },
        FAN_ANGLES_DEG.len(),
        0.2 * CIRCLE_RADIUS,
        seed,
    )
}
