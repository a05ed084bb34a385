//! The training configuration: one file holds every hyperparameter,
//! scenario allocation, stage schedule, and seed. Unknown keys are rejected,
//! the effective merged config is persisted next to each run's outputs, and
//! its canonical TOML string is what checkpoint digests are computed over.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::ConfigError;
use crate::mdp::RewardConfig;
use crate::net::{ConvSpec, NetConfig};
use crate::ppo::PpoConfig;
use crate::scenarios::{ScenarioCatalog, ScenarioId, ScenarioSpec, StageId, StageSpec};
use crate::sim::LidarSpec;

pub const DESK_PROFILE: &str = include_str!("../../../configs/desk.toml");
pub const PAPER_PROFILE: &str = include_str!("../../../configs/paper.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Control period, seconds.
    pub dt: f64,
    pub robot_radius: f64,
    /// Episode timeout in ticks.
    pub horizon: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub fc1: usize,
    pub fc2: usize,
}

impl NetSection {
    pub fn to_net_config(&self, n_beams: usize) -> NetConfig {
        NetConfig {
            n_beams,
            conv1: ConvSpec {
                filters: self.conv1_filters,
                kernel: self.conv1_kernel,
                stride: self.conv1_stride,
            },
            conv2: ConvSpec {
                filters: self.conv2_filters,
                kernel: self.conv2_kernel,
                stride: self.conv2_stride,
            },
            fc1: self.fc1,
            fc2: self.fc2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Collect rollouts across worlds on multiple threads. Off means
    /// single-execution-unit mode; both produce identical batches.
    pub parallel_worlds: bool,
    /// Save a checkpoint every this many iterations (0 = only at stage
    /// boundaries and the end).
    pub checkpoint_interval: u64,
    /// Stage one ends when the moving-average success rate over the last
    /// `stage1_window` iterations reaches this threshold...
    pub stage1_success_threshold: f64,
    pub stage1_window: usize,
    /// ...or unconditionally after this many stage-one iterations.
    pub max_stage1_iterations: u64,
    /// Total training iterations across both stages.
    pub total_iterations: u64,
    /// false = scratch mode: stage-two worlds from iteration 0 (the
    /// ablation arm).
    pub curriculum: bool,
    /// End the run at the stage-one boundary.
    pub stop_after_stage1: bool,
    /// Path to a scenario catalog TOML; empty string uses the embedded one.
    pub scenario_catalog: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldAlloc {
    pub scenario: String,
    pub robots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub worlds: Vec<WorldAlloc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: String,
    pub master_seed: u64,
    pub out_dir: String,
    pub lidar: LidarSpec,
    pub sim: SimSection,
    pub reward: RewardConfig,
    pub net: NetSection,
    pub ppo: PpoConfig,
    pub train: TrainSection,
    pub stage_one: StageSection,
    pub stage_two: StageSection,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self::from_toml(DESK_PROFILE).expect("embedded desk profile is valid")
    }

    pub fn paper() -> Self {
        Self::from_toml(PAPER_PROFILE).expect("embedded paper profile is valid")
    }

    pub fn from_profile(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(ConfigError::Invalid(format!(
                "unknown profile '{other}' (expected desk or paper)"
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Canonical serialization; checkpoint digests hash these bytes.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> [u8; 32] {
        digest_of(&self.to_toml_string())
    }

    pub fn net_config(&self) -> NetConfig {
        self.net.to_net_config(self.lidar.n_beams)
    }

    pub fn catalog(&self) -> Result<ScenarioCatalog, ConfigError> {
        if self.train.scenario_catalog.is_empty() {
            Ok(ScenarioCatalog::embedded())
        } else {
            ScenarioCatalog::load(Path::new(&self.train.scenario_catalog))
                .map_err(|e| ConfigError::Invalid(e.to_string()))
        }
    }

    fn stage_section(&self, stage: StageId) -> &StageSection {
        match stage {
            StageId::One => &self.stage_one,
            StageId::Two => &self.stage_two,
        }
    }

    /// Materialize the scenario specs for a stage.
    pub fn stage_spec(
        &self,
        stage: StageId,
        catalog: &ScenarioCatalog,
    ) -> Result<StageSpec, ConfigError> {
        let section = self.stage_section(stage);
        let mut scenarios: Vec<ScenarioSpec> = Vec::new();
        for alloc in &section.worlds {
            let id = ScenarioId::parse(&alloc.scenario)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            scenarios.push(catalog.spec(id, alloc.robots, self.sim.robot_radius, self.sim.dt));
        }
        Ok(StageSpec::new(stage, scenarios))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.lidar
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.net_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ppo.validate().map_err(ConfigError::Invalid)?;
        if self.sim.dt <= 0.0 {
            return Err(ConfigError::Invalid("sim.dt must be > 0".into()));
        }
        if self.sim.robot_radius <= 0.0 {
            return Err(ConfigError::Invalid("sim.robot_radius must be > 0".into()));
        }
        if self.sim.horizon == 0 {
            return Err(ConfigError::Invalid("sim.horizon must be > 0".into()));
        }
        if self.reward.arrival_threshold <= 0.0 || self.reward.w_threshold <= 0.0 {
            return Err(ConfigError::Invalid(
                "reward thresholds must be positive".into(),
            ));
        }
        if self.stage_one.worlds.is_empty() || self.stage_two.worlds.is_empty() {
            return Err(ConfigError::Invalid(
                "both stages need at least one world".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.train.stage1_success_threshold) {
            return Err(ConfigError::Invalid(
                "train.stage1_success_threshold must be in [0, 1]".into(),
            ));
        }
        for (name, section) in [("stage_one", &self.stage_one), ("stage_two", &self.stage_two)] {
            for alloc in &section.worlds {
                ScenarioId::parse(&alloc.scenario)
                    .map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
                if alloc.robots == 0 {
                    return Err(ConfigError::Invalid(format!(
                        "{name}: robot count must be >= 1"
                    )));
                }
            }
        }
        if self.profile == "paper" {
            self.validate_paper_stages()?;
        }
        Ok(())
    }

    /// The paper-fidelity stage invariants: 20 robots on obstacle-free
    /// random worlds in stage one, 58 robots across the full set in stage
    /// two. Desk-scale configs relax these on purpose.
    fn validate_paper_stages(&self) -> Result<(), ConfigError> {
        let one: usize = self.stage_one.worlds.iter().map(|w| w.robots).sum();
        if one != 20 {
            return Err(ConfigError::Invalid(format!(
                "paper profile: stage one must total 20 robots, got {one}"
            )));
        }
        if self
            .stage_one
            .worlds
            .iter()
            .any(|w| w.scenario != "random_empty")
        {
            return Err(ConfigError::Invalid(
                "paper profile: stage one allows only random_empty worlds".into(),
            ));
        }
        let two: usize = self.stage_two.worlds.iter().map(|w| w.robots).sum();
        if two != 58 {
            return Err(ConfigError::Invalid(format!(
                "paper profile: stage two must total 58 robots, got {two}"
            )));
        }
        Ok(())
    }
}

pub fn digest_of(text: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_parse_and_validate() {
        let desk = TrainConfig::desk();
        assert_eq!(desk.lidar.n_beams, 128);
        let paper = TrainConfig::paper();
        assert_eq!(paper.lidar.n_beams, 512);
        assert_eq!(paper.lidar.max_range, 4.0);
        assert_eq!(paper.reward.r_arrival, 15.0);
        assert_eq!(paper.reward.omega_g, 2.5);
        assert_eq!(paper.reward.r_collision, -15.0);
        assert_eq!(paper.reward.omega_w, -0.1);
        let one: usize = paper.stage_one.worlds.iter().map(|w| w.robots).sum();
        let two: usize = paper.stage_two.worlds.iter().map(|w| w.robots).sum();
        assert_eq!(one, 20);
        assert_eq!(two, 58);
    }

    #[test]
    fn toml_roundtrip_is_stable() {
        let cfg = TrainConfig::desk();
        let s1 = cfg.to_toml_string();
        let back = TrainConfig::from_toml(&s1).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string(), s1);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = String::from(DESK_PROFILE);
        text.push_str("\nnot_a_key = 3\n");
        assert!(matches!(
            TrainConfig::from_toml(&text),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn paper_stage_invariants_enforced() {
        let mut cfg = TrainConfig::paper();
        cfg.stage_one.worlds[0].robots = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::paper();
        cfg.stage_two.worlds[0].robots += 1;
        assert!(cfg.validate().is_err());
        // Desk-scale overrides are allowed for non-paper profiles.
        let mut cfg = TrainConfig::desk();
        cfg.stage_one.worlds[0].robots = 4;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn stage_specs_materialize() {
        let cfg = TrainConfig::paper();
        let catalog = cfg.catalog().unwrap();
        let one = cfg.stage_spec(StageId::One, &catalog).unwrap();
        assert_eq!(one.total_robots, 20);
        let two = cfg.stage_spec(StageId::Two, &catalog).unwrap();
        assert_eq!(two.total_robots, 58);
        assert_eq!(two.scenarios.len(), 7);
    }
}
