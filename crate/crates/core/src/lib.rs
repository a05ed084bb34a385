//! Multi-robot mapless navigation on a desk: a deterministic 2D lidar
//! simulator, a PPO trainer with a two-stage curriculum, evaluation and
//! replay tooling, and a TCP inference service for trained policies.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod net;
pub mod ppo;
pub mod rng;
pub mod scenarios;
pub mod server;
pub mod sim;

pub use error::{CheckpointError, ConfigError, NetError, ReplayError, ScenarioError, SimError, TrainError};
