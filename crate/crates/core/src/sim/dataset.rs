use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::sim::{
    social_force_step, Agent, OccupancyGrid, Scene, SceneKind, SocialForceParams, Vec2,
};

pub const OBS_LEN: usize = 8;
pub const PRED_LEN: usize = 12;
pub const SEQ_LEN: usize = OBS_LEN + PRED_LEN;
/// Seconds between recorded frames.
pub const FRAME_DT: f64 = 0.4;
pub const SIM_DT: f64 = 0.1;
pub const SUBSAMPLE: usize = 4;
/// Positions are stored with this many decimals, matching the CSV format.
pub const COORD_DECIMALS: i32 = 6;
pub const DEFAULT_N_TRAJECTORIES: usize = 5000;

const KEY_CELL: f64 = 0.5;
const KEY_HEADING_BUCKETS: i64 = 12;
const EPISODE_BUDGET_S: f64 = 60.0;
const TWO_AGENT_PROB: f64 = 0.35;
const MIN_SPAWN_GAP: f64 = 1.0;

/// One pedestrian over 8 observed + 12 future frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub scene_id: u32,
    pub ped_id: u32,
    pub positions: Vec<Vec2>,
    /// Ids (within the same scene) of other pedestrians present at each frame.
    pub neighbors: Vec<Vec<u32>>,
    /// Route family (mode) index.
    pub route: usize,
}

impl TrajectoryRecord {
    pub fn obs(&self) -> &[Vec2] {
        &self.positions[..OBS_LEN]
    }

    pub fn future(&self) -> &[Vec2] {
        &self.positions[OBS_LEN..]
    }
}

pub fn split_obs_future(positions: &[Vec2]) -> Result<(&[Vec2], &[Vec2])> {
    if positions.len() != SEQ_LEN {
        return Err(Error::invalid(format!(
            "record has {} steps, expected {SEQ_LEN}",
            positions.len()
        )));
    }
    Ok(positions.split_at(OBS_LEN))
}

/// Quantised observation key: last observed position on a 0.5 m lattice and
/// heading in 30° buckets (`h-` when stationary).
pub fn observation_key(obs: &[Vec2]) -> String {
    let p = obs[obs.len() - 1];
    let d = p - obs[obs.len() - 2];
    let qx = (p.x / KEY_CELL).floor() as i64;
    let qy = (p.y / KEY_CELL).floor() as i64;
    if d.norm() < 1e-6 {
        return format!("x{qx}_y{qy}_h-");
    }
    let width = 2.0 * std::f64::consts::PI / KEY_HEADING_BUCKETS as f64;
    let b = ((d.angle() + std::f64::consts::PI) / width).floor() as i64 % KEY_HEADING_BUCKETS;
    format!("x{qx}_y{qy}_h{b}")
}

/// Records grouped by observation key: the empirical conditional support of
/// the future given an observation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthSet {
    keys: Vec<String>,
    groups: BTreeMap<String, Vec<usize>>,
}

impl GroundTruthSet {
    pub fn from_keys(keys: Vec<String>) -> Self {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            groups.entry(k.clone()).or_default().push(i);
        }
        Self { keys, groups }
    }

    pub fn key(&self, record: usize) -> &str {
        &self.keys[record]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.groups
    }

    /// Record indices sharing `record`'s observation key (including itself).
    pub fn members(&self, record: usize) -> &[usize] {
        &self.groups[&self.keys[record]]
    }

    /// Futures of every member of `record`'s group, translated so that each
    /// member's last observed position coincides with `record`'s.
    pub fn aligned_futures(&self, records: &[TrajectoryRecord], record: usize) -> Vec<Vec<Vec2>> {
        let anchor = records[record].positions[OBS_LEN - 1];
        self.members(record)
            .iter()
            .map(|&m| {
                let shift = anchor - records[m].positions[OBS_LEN - 1];
                records[m].future().iter().map(|&p| p + shift).collect()
            })
            .collect()
    }

    /// The subset of `self` restricted to the given record indices (in order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::from_keys(indices.iter().map(|&i| self.keys[i].clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimLog {
    pub episodes: usize,
    /// Records dropped because an agent missed its goal or broke an invariant.
    pub discarded: usize,
    pub projections: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Junction(SceneKind),
    Circle,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Junction(k) => k.name(),
            Self::Circle => "circle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub grid: OccupancyGrid,
    pub records: Vec<TrajectoryRecord>,
    pub gt: GroundTruthSet,
    pub log: SimLog,
    /// Number of route families the generator draws from.
    pub n_modes: usize,
    /// Natural acceptance radius for the manifold metrics (meters).
    pub r_max: f64,
    pub seed: u64,
    scene_index: HashMap<(u32, u32), usize>,
}

impl Dataset {
    pub fn new(
        kind: DatasetKind,
        grid: OccupancyGrid,
        records: Vec<TrajectoryRecord>,
        gt: GroundTruthSet,
        log: SimLog,
        n_modes: usize,
        r_max: f64,
        seed: u64,
    ) -> Result<Self> {
        if gt.keys().len() != records.len() {
            return Err(Error::invalid("ground-truth keys do not match records"));
        }
        let mut scene_index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.positions.len() != SEQ_LEN || r.neighbors.len() != SEQ_LEN {
                return Err(Error::invalid(format!(
                    "record {i} does not have {SEQ_LEN} steps"
                )));
            }
            if scene_index.insert((r.scene_id, r.ped_id), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate record scene {} ped {}",
                    r.scene_id, r.ped_id
                )));
            }
        }
        Ok(Self {
            kind,
            grid,
            records,
            gt,
            log,
            n_modes,
            r_max,
            seed,
            scene_index,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of the record of pedestrian `ped` in scene `scene`, if kept.
    pub fn find(&self, scene: u32, ped: u32) -> Option<usize> {
        self.scene_index.get(&(scene, ped)).copied()
    }

    /// Neighbour records present at the last observed frame of `record`.
    pub fn neighbors_of(&self, record: usize) -> Vec<usize> {
        let r = &self.records[record];
        r.neighbors[OBS_LEN - 1]
            .iter()
            .filter_map(|&id| self.find(r.scene_id, id))
            .collect()
    }

    /// First `train_fraction` of the records for training, the rest held out.
    pub fn split_indices(&self, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let n_train = ((self.len() as f64) * train_fraction).round() as usize;
        let n_train = n_train.min(self.len());
        ((0..n_train).collect(), (n_train..self.len()).collect())
    }
}

/// Walkability and step-length checks every stored record must satisfy.
pub fn record_is_valid(grid: &OccupancyGrid, positions: &[Vec2], preferred_speed: f64) -> bool {
    positions
        .iter()
        .all(|&p| p.is_finite() && grid.is_walkable(p))
        && positions
            .windows(2)
            .all(|w| w[0].dist(w[1]) <= 2.0 * preferred_speed * FRAME_DT)
}

struct Episode {
    records: Vec<(TrajectoryRecord, f64)>,
    discarded: usize,
    projections: usize,
}

fn sample_route<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn simulate_episode(scene: &Scene, max_agents: usize, seed: u64, episode: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    let params = SocialForceParams::default();
    let speed = Normal::new(1.3, 0.05).expect("valid normal");
    let probs = scene.route_probabilities();

    let want = if max_agents >= 2 && rng.random_bool(TWO_AGENT_PROB) {
        2
    } else {
        1
    };
    let mut agents: Vec<Agent> = Vec::new();
    let mut routes = Vec::new();
    for _ in 0..want {
        let route = sample_route(&mut rng, &probs);
        let r = &scene.routes[route];
        let mut placed = None;
        for _ in 0..100 {
            let p = r.spawn.sample(&mut rng);
            if scene.grid.is_walkable(p)
                && agents.iter().all(|a| a.position.dist(p) >= MIN_SPAWN_GAP)
            {
                placed = Some(p);
                break;
            }
        }
        let pref: f64 = speed.sample(&mut rng);
        let pref = pref.clamp(1.15, 1.45);
        if let Some(p) = placed {
            agents.push(Agent::new(p, pref, r.waypoints.clone(), r.goal_radius));
            routes.push(route);
        }
    }

    let n = agents.len();
    let mut tracks: Vec<Vec<Vec2>> = agents.iter().map(|a| vec![a.position]).collect();
    let mut projections = 0;
    let budget = (EPISODE_BUDGET_S / SIM_DT).round() as usize;
    let mut step = 0;
    while step < budget && (agents.iter().any(|a| !a.arrived) || tracks[0].len() < SEQ_LEN) {
        projections += social_force_step(&mut agents, &scene.grid, &params, SIM_DT)?.projections;
        step += 1;
        if step % SUBSAMPLE == 0 && tracks[0].len() < SEQ_LEN {
            for (t, a) in tracks.iter_mut().zip(&agents) {
                t.push(a.position);
            }
        }
    }

    let all_arrived = agents.iter().all(|a| a.arrived);
    let mut records = Vec::new();
    let mut ok = all_arrived && tracks[0].len() == SEQ_LEN;
    if ok {
        for (i, t) in tracks.iter().enumerate() {
            let positions: Vec<Vec2> = t.iter().map(|p| p.rounded(COORD_DECIMALS)).collect();
            if !record_is_valid(&scene.grid, &positions, agents[i].preferred_speed) {
                ok = false;
                break;
            }
            let others: Vec<u32> = (0..n as u32).filter(|&j| j != i as u32).collect();
            records.push((
                TrajectoryRecord {
                    scene_id: episode as u32,
                    ped_id: i as u32,
                    positions,
                    neighbors: vec![others; SEQ_LEN],
                    route: routes[i],
                },
                agents[i].preferred_speed,
            ));
        }
    }
    if !ok {
        return Ok(Episode {
            records: Vec::new(),
            discarded: n,
            projections,
        });
    }
    Ok(Episode {
        records,
        discarded: 0,
        projections,
    })
}

/// Simulates episodes of at most `max_agents` concurrent pedestrians until
/// `n` records are collected. Episode `e` draws from its own stream of the
/// seeded generator, so the result is independent of `exec`.
pub fn simulate_dataset(
    scene: &Scene,
    n: usize,
    max_agents: usize,
    seed: u64,
    exec: Exec,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n_trajectories must be positive"));
    }
    if !(1..=2).contains(&max_agents) {
        return Err(Error::invalid(format!(
            "max concurrent agents must be 1 or 2, got {max_agents}"
        )));
    }
    scene.validate()?;
    let mut records: Vec<TrajectoryRecord> = Vec::with_capacity(n);
    let mut log = SimLog::default();
    let mut next_episode = 0u64;
    while records.len() < n {
        let block = (n - records.len()).max(16);
        let episodes = exec.map_range(block, |k| {
            simulate_episode(scene, max_agents, seed, next_episode + k as u64)
        });
        next_episode += block as u64;
        for ep in episodes {
            let room = n - records.len();
            if room == 0 {
                break;
            }
            let ep = ep?;
            log.episodes += 1;
            log.discarded += ep.discarded;
            log.projections += ep.projections;
            let kept: Vec<TrajectoryRecord> =
                ep.records.into_iter().take(room).map(|(r, _)| r).collect();
            let ids: Vec<u32> = kept.iter().map(|r| r.ped_id).collect();
            for mut r in kept {
                for frame in &mut r.neighbors {
                    frame.retain(|id| ids.contains(id));
                }
                records.push(r);
            }
        }
    }
    let keys = records.iter().map(|r| observation_key(r.obs())).collect();
    Dataset::new(
        DatasetKind::Junction(scene.kind),
        scene.grid.clone(),
        records,
        GroundTruthSet::from_keys(keys),
        log,
        scene.routes.len(),
        2.0,
        seed,
    )
}
