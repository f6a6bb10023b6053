//! Synthetic pedestrian data: occupancy grids, parametric junction scenes,
//! a social-force simulator and the circle toy set.

mod circle;
mod dataset;
mod geom;
mod grid;
pub mod io;
mod scene;
mod social_force;

pub use circle::{
    circle_center, circle_path, circle_starts, make_circle_toy, CIRCLE_RADIUS, CIRCLE_STARTS,
    CIRCLE_STEP, FAN_ANGLES_DEG,
};
pub use dataset::{
    observation_key, record_is_valid, simulate_dataset, split_obs_future, Dataset, DatasetKind,
    GroundTruthSet, SimLog, TrajectoryRecord, COORD_DECIMALS, DEFAULT_N_TRAJECTORIES, FRAME_DT,
    OBS_LEN, PRED_LEN, SEQ_LEN, SIM_DT, SUBSAMPLE,
};
pub use geom::Vec2;
pub use grid::{OccupancyGrid, DEFAULT_RESOLUTION};
pub use scene::{build_junction_scene, Region, Route, Scene, SceneKind};
pub use social_force::{forces, social_force_step, Agent, Forces, SocialForceParams, StepLog};
