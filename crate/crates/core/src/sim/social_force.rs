use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{OccupancyGrid, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialForceParams {
    /// Relaxation time of the goal force (s).
    pub tau: f64,
    pub ped_strength: f64,
    pub ped_range: f64,
    pub ped_radius: f64,
    pub obstacle_strength: f64,
    pub obstacle_range: f64,
    /// Distance at which the obstacle force equals its strength.
    pub obstacle_radius: f64,
    /// Blocked cells further away than this exert no force.
    pub obstacle_cutoff: f64,
    pub max_speed_factor: f64,
    pub waypoint_radius: f64,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        Self {
            tau: 0.5,
            ped_strength: 2.0,
            ped_range: 0.3,
            ped_radius: 0.6,
            obstacle_strength: 5.0,
            obstacle_range: 0.1,
            obstacle_radius: 0.3,
            obstacle_cutoff: 2.0,
            max_speed_factor: 1.3,
            waypoint_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub position: Vec2,
    pub velocity: Vec2,
    pub preferred_speed: f64,
    pub waypoints: Vec<Vec2>,
    pub next_waypoint: usize,
    /// Radius around the final waypoint that counts as arrival.
    pub goal_radius: f64,
    pub arrived: bool,
}

impl Agent {
    pub fn new(
        position: Vec2,
        preferred_speed: f64,
        waypoints: Vec<Vec2>,
        goal_radius: f64,
    ) -> Self {
        let velocity = (waypoints[0] - position).normalized() * preferred_speed;
        Self {
            position,
            velocity,
            preferred_speed,
            waypoints,
            next_waypoint: 0,
            goal_radius,
            arrived: false,
        }
    }

    pub fn goal(&self) -> Vec2 {
        self.waypoints[self.next_waypoint]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Forces {
    pub goal: Vec2,
    pub social: Vec2,
    pub obstacle: Vec2,
}

impl Forces {
    pub fn total(&self) -> Vec2 {
        self.goal + self.social + self.obstacle
    }
}

/// Per-agent force decomposition at the current state. Arrived agents have
/// left the scene and neither feel nor exert forces.
pub fn forces(agents: &[Agent], grid: &OccupancyGrid, p: &SocialForceParams) -> Vec<Forces> {
    agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if a.arrived {
                return Forces::default();
            }
            let e = (a.goal() - a.position).normalized();
            let goal = (e * a.preferred_speed - a.velocity) * (1.0 / p.tau);
            let mut social = Vec2::ZERO;
            for (j, b) in agents.iter().enumerate() {
                if j == i || b.arrived {
                    continue;
                }
                let diff = a.position - b.position;
                let d = diff.norm();
                if !(1e-9..=10.0).contains(&d) {
                    continue;
                }
                social +=
                    diff * (1.0 / d) * (p.ped_strength * ((p.ped_radius - d) / p.ped_range).exp());
            }
            let obstacle = match grid.nearest_blocked(a.position, p.obstacle_cutoff) {
                Some(q) => {
                    let diff = a.position - q;
                    let d = diff.norm().max(1e-6);
                    diff * (1.0 / d)
                        * (p.obstacle_strength * ((p.obstacle_radius - d) / p.obstacle_range).exp())
                }
                None => Vec2::ZERO,
            };
            Forces {
                goal,
                social,
                obstacle,
            }
        })
        .collect()
}

/// Outcome of one integration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepLog {
    /// Agents pushed onto a blocked cell and projected back.
    pub projections: usize,
}

/// One synchronous semi-implicit Euler step: forces from the current state,
/// velocity update and clamp, then position update with the new velocity.
pub fn social_force_step(
    agents: &mut [Agent],
    grid: &OccupancyGrid,
    p: &SocialForceParams,
    dt: f64,
) -> Result<StepLog> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let f = forces(agents, grid, p);
    let mut log = StepLog::default();
    for (a, f) in agents.iter_mut().zip(f) {
        if a.arrived {
            continue;
        }
        let mut v = a.velocity + f.total() * dt;
        let vmax = p.max_speed_factor * a.preferred_speed;
        let speed = v.norm();
        if speed > vmax {
            v = v * (vmax / speed);
        }
        let mut pos = a.position + v * dt;
        if !grid.is_walkable(pos) {
            pos = grid
                .nearest_walkable_point(pos)
                .ok_or_else(|| Error::invalid("no walkable cell to project onto"))?;
            log.projections += 1;
        }
        if !pos.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite("social force state".into()));
        }
        a.position = pos;
        a.velocity = v;
        let last = a.waypoints.len() - 1;
        if a.next_waypoint < last && a.position.dist(a.goal()) < p.waypoint_radius {
            a.next_waypoint += 1;
        } else if a.next_waypoint == last && a.position.dist(a.goal()) < a.goal_radius {
            a.arrived = true;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open() -> OccupancyGrid {
        OccupancyGrid::from_fn(60.0, 60.0, 0.7, |_| true).unwrap()
    }

    #[test]
    fn goal_force_converges_monotonically() {
        let g = open();
        let p = SocialForceParams::default();
        let mut a = vec![Agent::new(
            Vec2::new(5.0, 30.0),
            1.3,
            vec![Vec2::new(50.0, 30.0)],
            1.0,
        )];
        a[0].velocity = Vec2::ZERO;
        let mut prev = 0.0;
        for _ in 0..50 {
            social_force_step(&mut a, &g, &p, 0.1).unwrap();
            let v = a[0].velocity;
            assert!(v.x > prev && v.x <= 1.3 + 1e-12);
            assert!(v.y.abs() < 1e-12);
            prev = v.x;
        }
        assert!((prev - 1.3).abs() < 1e-3);
    }

    #[test]
    fn head_on_agents_separate_laterally() {
        let g = open();
        let p = SocialForceParams::default();
        let mut a = vec![
            Agent::new(Vec2::new(20.0, 30.0), 1.3, vec![Vec2::new(45.0, 30.0)], 1.0),
            Agent::new(
                Vec2::new(30.0, 30.01),
                1.3,
                vec![Vec2::new(5.0, 30.01)],
                1.0,
            ),
        ];
        let mut prev_lat = (a[0].position.y - a[1].position.y).abs();
        let mut engaged = 0;
        for _ in 0..60 {
            let before = a[0].position.dist(a[1].position);
            social_force_step(&mut a, &g, &p, 0.1).unwrap();
            let lat = (a[0].position.y - a[1].position.y).abs();
            let ahead = a[1].position.x > a[0].position.x;
            if before < p.ped_radius + 4.0 * p.ped_range && ahead {
                assert!(lat > prev_lat, "lateral {lat} <= {prev_lat}");
                engaged += 1;
            }
            prev_lat = lat;
        }
        assert!(engaged > 0);
    }

    #[test]
    fn wall_pushes_away() {
        let g = open();
        let p = SocialForceParams::default();
        // West border wall occupies x < 0.7.
        let a = vec![Agent::new(
            Vec2::new(1.0, 30.0),
            1.3,
            vec![Vec2::new(1.0, 50.0)],
            1.0,
        )];
        let f = forces(&a, &g, &p);
        assert!(f[0].obstacle.x > 0.0);
        assert!(f[0].obstacle.y.abs() < 1e-12);
    }

    #[test]
    fn projection_is_flagged() {
        let g = open();
        let p = SocialForceParams {
            obstacle_strength: 0.0,
            ..Default::default()
        };
        let mut a = vec![Agent::new(
            Vec2::new(0.75, 30.0),
            1.3,
            vec![Vec2::new(-5.0, 30.0)],
            1.0,
        )];
        let log = social_force_step(&mut a, &g, &p, 0.1).unwrap();
        assert_eq!(log.projections, 1);
        assert!(g.is_walkable(a[0].position));
        assert!(social_force_step(&mut a, &g, &p, 0.0).is_err());
    }

    #[test]
    fn waypoints_advance_then_arrive() {
        let g = open();
        let p = SocialForceParams::default();
        let mut a = vec![Agent::new(
            Vec2::new(10.0, 10.0),
            1.3,
            vec![Vec2::new(14.0, 10.0), Vec2::new(14.0, 20.0)],
            1.0,
        )];
        for _ in 0..300 {
            social_force_step(&mut a, &g, &p, 0.1).unwrap();
        }
        assert!(a[0].arrived);
        assert_eq!(a[0].next_waypoint, 1);
    }
}
