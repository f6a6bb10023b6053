//! Multi-generator trajectory GAN with a learned categorical distribution
//! over generators, the social-force synthetic data it is evaluated on, and
//! manifold precision/recall metrics.

pub mod baselines;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod sampling;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
