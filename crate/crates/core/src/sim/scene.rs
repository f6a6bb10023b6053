use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{OccupancyGrid, Vec2, DEFAULT_RESOLUTION};

const WORLD_SIZE: f64 = 64.0;
const ARM_LENGTH: f64 = 25.0;
/// Spawn band along the south arm, measured back from the junction centre.
/// The observation window ends about a meter short of the centre, before
/// the route shows, so the futures split right after it.
const SPAWN_NEAR: f64 = 4.2;
const SPAWN_FAR: f64 = 4.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// T-junction: straight on or turn right.
    TwoWay,
    /// Crossroads: straight, left or right.
    ThreeWay,
    /// A single straight corridor (one route).
    Corridor,
}

impl SceneKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two_way" => Ok(Self::TwoWay),
            "three_way" => Ok(Self::ThreeWay),
            "corridor" => Ok(Self::Corridor),
            other => Err(Error::invalid(format!("unknown scene kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoWay => "two_way",
            Self::ThreeWay => "three_way",
            Self::Corridor => "corridor",
        }
    }
}

/// Axis-aligned rectangle in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: Vec2,
    pub max: Vec2,
}

impl Region {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec2 {
        Vec2::new(
            rng.random_range(self.min.x..=self.max.x),
            rng.random_range(self.min.y..=self.max.y),
        )
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub name: String,
    pub spawn: Region,
    pub waypoints: Vec<Vec2>,
    /// Radius of the terminal goal region around the last waypoint.
    pub goal_radius: f64,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub kind: SceneKind,
    pub grid: OccupancyGrid,
    pub routes: Vec<Route>,
    pub junction: Vec2,
}

impl Scene {
    pub fn route_probabilities(&self) -> Vec<f64> {
        self.routes.iter().map(|r| r.probability).collect()
    }

    /// Checks that route probabilities sum to one per spawn region and
    /// that every waypoint is walkable.
    pub fn validate(&self) -> Result<()> {
        let mut seen: Vec<(Region, f64)> = Vec::new();
        for r in &self.routes {
            match seen.iter_mut().find(|(s, _)| *s == r.spawn) {
                Some((_, p)) => *p += r.probability,
                None => seen.push((r.spawn, r.probability)),
            }
            for w in &r.waypoints {
                if !self.grid.is_walkable(*w) {
                    return Err(Error::invalid(format!(
                        "route `{}` waypoint ({}, {}) is blocked",
                        r.name, w.x, w.y
                    )));
                }
            }
        }
        for (_, p) in seen {
            if (p - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("route probabilities sum to {p}")));
            }
        }
        Ok(())
    }
}

/// Builds a parametric junction. The seed jitters the junction centre by up
/// to half a cell so that different seeds give distinct rasterisations.
pub fn build_junction_scene(kind: SceneKind, corridor_width: f64, seed: u64) -> Result<Scene> {
    let res = DEFAULT_RESOLUTION;
    if !(corridor_width >= 2.0 * res) || corridor_width > 20.0 {
        return Err(Error::invalid(format!(
            "corridor width {corridor_width} m must be between two cells ({} m) and 20 m",
            2.0 * res
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = 0.5 * res;
    let c = Vec2::new(
        WORLD_SIZE / 2.0 + rng.random_range(-jitter..=jitter),
        WORLD_SIZE / 2.0 + rng.random_range(-jitter..=jitter),
    );
    let half = corridor_width / 2.0;
    let (north, east, west) = match kind {
        SceneKind::ThreeWay => (true, true, true),
        SceneKind::TwoWay => (true, true, false),
        SceneKind::Corridor => (true, false, false),
    };
    let grid = OccupancyGrid::from_fn(WORLD_SIZE, WORLD_SIZE, res, |p| {
        let in_vertical = (p.x - c.x).abs() <= half;
        let in_horizontal = (p.y - c.y).abs() <= half;
        (in_vertical && (p.y <= c.y + half || north))
            || (in_horizontal && ((east && p.x >= c.x - half) || (west && p.x <= c.x + half)))
    })?;

    let margin = (corridor_width / 4.0).min(0.8);
    let spawn = Region {
        min: Vec2::new(c.x - half + margin, c.y - SPAWN_FAR),
        max: Vec2::new(c.x + half - margin, c.y - SPAWN_NEAR),
    };
    let mut targets = vec![("straight", c + Vec2::new(0.0, ARM_LENGTH))];
    if east {
        targets.push(("right", c + Vec2::new(ARM_LENGTH, 0.0)));
    }
    if west {
        targets.push(("left", c - Vec2::new(ARM_LENGTH, 0.0)));
    }
    let p = 1.0 / targets.len() as f64;
    let routes = targets
        .into_iter()
        .map(|(name, end)| Route {
            name: name.to_string(),
            spawn,
            waypoints: vec![c, end],
            goal_radius: 1.0,
            probability: p,
        })
        .collect();
    let scene = Scene {
        kind,
        grid,
        routes,
        junction: c,
    };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_counts() {
        let s = build_junction_scene(SceneKind::ThreeWay, 4.0, 0).unwrap();
        assert_eq!(s.route_probabilities(), vec![1.0 / 3.0; 3]);
        let s = build_junction_scene(SceneKind::TwoWay, 4.0, 0).unwrap();
        assert_eq!(s.route_probabilities(), vec![0.5; 2]);
        let s = build_junction_scene(SceneKind::Corridor, 4.0, 0).unwrap();
        assert_eq!(s.route_probabilities(), vec![1.0]);
    }

    #[test]
    fn waypoints_walkable_over_seeds() {
        for seed in 0..100 {
            for kind in [SceneKind::TwoWay, SceneKind::ThreeWay] {
                let s = build_junction_scene(kind, 1.4, seed).unwrap();
                for r in &s.routes {
                    for w in &r.waypoints {
                        assert!(s.grid.is_walkable(*w), "seed {seed}");
                    }
                    assert!(s.grid.is_walkable(r.spawn.min) && s.grid.is_walkable(r.spawn.max));
                }
            }
        }
    }

    #[test]
    fn narrow_corridor_rejected() {
        assert!(build_junction_scene(SceneKind::ThreeWay, 1.0, 0).is_err());
        assert!(build_junction_scene(SceneKind::ThreeWay, f64::NAN, 0).is_err());
    }

    #[test]
    fn kind_round_trip() {
        for k in [SceneKind::TwoWay, SceneKind::ThreeWay, SceneKind::Corridor] {
            assert_eq!(SceneKind::parse(k.name()).unwrap(), k);
        }
        assert!(SceneKind::parse("four_way").is_err());
    }
}
