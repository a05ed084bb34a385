//! The training loop: rollout collection, normalizer maintenance, PPO
//! updates, the stage-one to stage-two curriculum switch, the reward curve,
//! and periodic checkpoints.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::adam::AdamState;
use super::checkpoint::save_checkpoint;
use super::rollout::{collect_rollouts, CollectContext, EnvRuntime, GaussianActor};
use super::update::ppo_update;
use super::{compute_gae, PpoConfig};
use crate::config::TrainConfig;
use crate::error::TrainError;
use crate::mdp::RunningNormalizer;
use crate::net::{init_params, NetConfig, PolicyParams, ValueParams};
use crate::rng::{derive_stream, world_stream, STREAM_UPDATE};
use crate::scenarios::{build_world_with_rng, StageId};

/// One reward-curve row; the CSV mirrors these fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: u64,
    pub wall_seconds: f64,
    pub mean_episode_reward: f64,
    pub success_rate: f64,
    pub collision_rate: f64,
}

pub const CURVE_HEADER: &str =
    "iteration,wall_seconds,mean_episode_reward,success_rate,collision_rate";

impl CurveRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration,
            self.wall_seconds,
            self.mean_episode_reward,
            self.success_rate,
            self.collision_rate
        )
    }
}

/// The complete mutable state of a training run. Serialized in full by the
/// checkpoint module, so a resumed run continues the original trajectory
/// bit-exactly.
pub struct TrainState {
    pub cfg: TrainConfig,
    pub cfg_toml: String,
    pub net: NetConfig,
    pub policy: PolicyParams,
    pub value: ValueParams,
    pub adam_policy: AdamState,
    pub adam_value: AdamState,
    pub normalizer: RunningNormalizer,
    pub update_rng: ChaCha8Rng,
    pub envs: Vec<EnvRuntime>,
    pub stage: StageId,
    pub iteration: u64,
    pub iters_in_stage: u64,
    pub wall_seconds: f64,
    pub success_window: Vec<f64>,
    pub curve: Vec<CurveRow>,
}

impl TrainState {
    /// Fresh state at iteration zero of the schedule's first stage.
    pub fn init(cfg: &TrainConfig) -> Result<Self, TrainError> {
        let net = cfg.net_config();
        net.validate()?;
        let (policy, value) = init_params(&net, cfg.master_seed);
        let adam_policy = AdamState::new(&policy.store);
        let adam_value = AdamState::new(&value.store);
        let stage = if cfg.train.curriculum {
            StageId::One
        } else {
            StageId::Two
        };
        let envs = build_stage_envs(cfg, stage)?;
        Ok(TrainState {
            cfg_toml: cfg.to_toml_string(),
            net,
            normalizer: RunningNormalizer::new(3 * cfg.lidar.n_beams + 4),
            update_rng: derive_stream(cfg.master_seed, STREAM_UPDATE),
            policy,
            value,
            adam_policy,
            adam_value,
            envs,
            stage,
            iteration: 0,
            iters_in_stage: 0,
            wall_seconds: 0.0,
            success_window: Vec::new(),
            curve: Vec::new(),
            cfg: cfg.clone(),
        })
    }

    /// Run one iteration: collect, fold normalizer statistics, compute GAE,
    /// update. Returns the curve row it appended.
    pub fn iterate(&mut self) -> Result<CurveRow, TrainError> {
        let started = Instant::now();
        let ppo_cfg: PpoConfig = self.cfg.ppo;

        let actor = GaussianActor {
            policy: &self.policy,
            value: &self.value,
            net: &self.net,
        };
        let ctx = CollectContext {
            lidar: &self.cfg.lidar,
            reward: &self.cfg.reward,
            horizon: self.cfg.sim.horizon,
            normalizer: &self.normalizer,
            parallel: self.cfg.train.parallel_worlds,
        };
        let (mut batch, stats, acc) = collect_rollouts(&mut self.envs, &actor, &ppo_cfg, &ctx)?;

        self.normalizer.merge(&acc);
        compute_gae(&mut batch, &ppo_cfg);
        ppo_update(
            &mut self.policy,
            &mut self.value,
            &mut self.adam_policy,
            &mut self.adam_value,
            &self.net,
            &batch,
            &ppo_cfg,
            &mut self.update_rng,
            self.iteration,
        )?;

        self.wall_seconds += started.elapsed().as_secs_f64();
        let row = CurveRow {
            iteration: self.iteration,
            wall_seconds: self.wall_seconds,
            mean_episode_reward: stats.mean_episode_reward(),
            success_rate: stats.success_rate(),
            collision_rate: stats.rate(crate::mdp::Event::Collision),
        };
        self.curve.push(row);
        self.iteration += 1;
        self.iters_in_stage += 1;
        if self.stage == StageId::One {
            self.success_window.push(row.success_rate);
        }
        Ok(row)
    }

    /// Stage-one exit test: moving-average success over the last window
    /// iterations, or the hard iteration cap.
    pub fn stage1_done(&self) -> bool {
        if self.stage != StageId::One {
            return false;
        }
        if self.iters_in_stage >= self.cfg.train.max_stage1_iterations {
            return true;
        }
        let w = self.cfg.train.stage1_window;
        if self.success_window.len() < w || w == 0 {
            return false;
        }
        let tail = &self.success_window[self.success_window.len() - w..];
        let avg = tail.iter().sum::<f64>() / w as f64;
        avg >= self.cfg.train.stage1_success_threshold
    }

    /// Switch to the stage-two population, keeping parameters, optimizer
    /// state, and the normalizer.
    pub fn enter_stage_two(&mut self) -> Result<(), TrainError> {
        self.stage = StageId::Two;
        self.iters_in_stage = 0;
        self.success_window.clear();
        self.envs = build_stage_envs(&self.cfg, StageId::Two)?;
        Ok(())
    }
}

/// Build each world in a stage from its own seed stream; the stream then
/// stays with the world for action sampling and respawns.
fn build_stage_envs(cfg: &TrainConfig, stage: StageId) -> Result<Vec<EnvRuntime>, TrainError> {
    let catalog = cfg
        .catalog()
        .map_err(|e| TrainError::Scenario(crate::error::ScenarioError::Catalog(e.to_string())))?;
    let stage_spec = cfg
        .stage_spec(stage, &catalog)
        .map_err(|e| TrainError::Scenario(crate::error::ScenarioError::Catalog(e.to_string())))?;
    let mut envs = Vec::with_capacity(stage_spec.scenarios.len());
    for (i, spec) in stage_spec.scenarios.iter().enumerate() {
        let mut rng = world_stream(cfg.master_seed, stage.index(), i as u64);
        let world = build_world_with_rng(spec, &mut rng)?;
        envs.push(EnvRuntime::new(spec.clone(), world, rng));
    }
    Ok(envs)
}

fn checkpoint_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(format!("{name}.cm3m"))
}

fn rewrite_curve_csv(path: &Path, curve: &[CurveRow]) -> std::io::Result<std::fs::File> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{CURVE_HEADER}")?;
    for row in curve {
        writeln!(f, "{}", row.to_csv())?;
    }
    f.flush()?;
    Ok(f)
}

/// Run the full training schedule: stage one until its exit criterion fires
/// (when the curriculum is enabled), then stage two up to the total
/// iteration budget. Writes the reward curve CSV, periodic checkpoints, the
/// stage-one checkpoint, and a final checkpoint under `cfg.out_dir`.
pub fn run_curriculum(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainState, TrainError> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let mut state = match resume {
        Some(path) => {
            let state = super::checkpoint::load_checkpoint(path)?;
            if state.cfg_toml != cfg.to_toml_string() {
                return Err(TrainError::Checkpoint(
                    crate::error::CheckpointError::DigestMismatch,
                ));
            }
            state
        }
        None => TrainState::init(cfg)?,
    };

    // Persist the effective config next to the outputs.
    std::fs::write(out_dir.join("config.effective.toml"), &state.cfg_toml)?;
    let curve_path = out_dir.join("reward_curve.csv");
    let mut curve_file = rewrite_curve_csv(&curve_path, &state.curve)?;

    while state.iteration < cfg.train.total_iterations {
        let row = match state.iterate() {
            Ok(row) => row,
            Err(e @ TrainError::NonFinite { .. }) => {
                // Keep the wreckage inspectable, then bail.
                let _ = save_checkpoint(&state, &checkpoint_path(&out_dir, "ckpt_abort"));
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(curve_file, "{}", row.to_csv())?;
        curve_file.flush()?;

        if state.iteration % 10 == 0 {
            eprintln!(
                "iter {:5}  stage {:?}  reward {:8.3}  success {:5.3}  collision {:5.3}",
                state.iteration, state.stage, row.mean_episode_reward, row.success_rate,
                row.collision_rate
            );
        }

        if state.stage1_done() {
            save_checkpoint(&state, &checkpoint_path(&out_dir, "ckpt_stage1"))?;
            if cfg.train.stop_after_stage1 {
                break;
            }
            state.enter_stage_two()?;
        }

        let interval = cfg.train.checkpoint_interval;
        if interval > 0 && state.iteration % interval == 0 {
            save_checkpoint(
                &state,
                &checkpoint_path(&out_dir, &format!("ckpt_iter{:06}", state.iteration)),
            )?;
        }
    }

    save_checkpoint(&state, &checkpoint_path(&out_dir, "ckpt_final"))?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_cfg(dir: &Path) -> TrainConfig {
        let mut cfg = TrainConfig::desk();
        cfg.out_dir = dir.to_string_lossy().into_owned();
        cfg.lidar.n_beams = 16;
        cfg.ppo.rollout_length = 8;
        cfg.ppo.minibatch_size = 32;
        cfg.ppo.epochs = 1;
        cfg.net.fc1 = 32;
        cfg.net.fc2 = 16;
        cfg.train.total_iterations = 4;
        cfg.train.max_stage1_iterations = 2;
        cfg.train.checkpoint_interval = 0;
        cfg.stage_one.worlds[0].robots = 2;
        cfg.stage_two.worlds[0].robots = 3;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn curriculum_switches_stage_and_population() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = micro_cfg(dir.path());
        let state = run_curriculum(&cfg, None).unwrap();
        // The stage-one cap of 2 forces the transition.
        assert_eq!(state.stage, StageId::Two);
        let robots: usize = state.envs.iter().map(|e| e.n_robots()).sum();
        assert_eq!(robots, 3);
        assert_eq!(state.iteration, 4);
        assert!(dir.path().join("ckpt_stage1.cm3m").exists());
        assert!(dir.path().join("ckpt_final.cm3m").exists());
        assert!(dir.path().join("reward_curve.csv").exists());
        assert!(dir.path().join("config.effective.toml").exists());
        let csv = std::fs::read_to_string(dir.path().join("reward_curve.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5); // header + 4 rows
        assert!(csv.starts_with(CURVE_HEADER));
    }

    #[test]
    fn scratch_mode_starts_in_stage_two() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = micro_cfg(dir.path());
        cfg.train.curriculum = false;
        cfg.train.total_iterations = 2;
        let state = run_curriculum(&cfg, None).unwrap();
        assert_eq!(state.stage, StageId::Two);
        assert!(!dir.path().join("ckpt_stage1.cm3m").exists());
    }

    #[test]
    fn stop_after_stage1_ends_at_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = micro_cfg(dir.path());
        cfg.train.stop_after_stage1 = true;
        let state = run_curriculum(&cfg, None).unwrap();
        assert_eq!(state.stage, StageId::One);
        assert_eq!(state.iteration, 2);
    }

    #[test]
    fn deterministic_reruns_and_resume_equivalence() {
        let d1 = tempfile::tempdir().unwrap();
        let cfg1 = micro_cfg(d1.path());
        let full = run_curriculum(&cfg1, None).unwrap();

        let d2 = tempfile::tempdir().unwrap();
        let mut cfg2 = micro_cfg(d1.path());
        cfg2.out_dir = d2.path().to_string_lossy().into_owned();
        // Same seed, fresh directory: identical parameters.
        let mut cfg2b = cfg2.clone();
        let again = run_curriculum(&cfg2, None).unwrap();
        assert_eq!(full.policy.store, again.policy.store);
        assert_eq!(full.value.store, again.value.store);
        let rows_a: Vec<String> = full.curve.iter().map(|r| strip_wall(r)).collect();
        let rows_b: Vec<String> = again.curve.iter().map(|r| strip_wall(r)).collect();
        assert_eq!(rows_a, rows_b);

        // Interrupted at iteration 2, then resumed to 4.
        let d3 = tempfile::tempdir().unwrap();
        cfg2b.out_dir = d3.path().to_string_lossy().into_owned();
        let mut short = cfg2b.clone();
        short.train.total_iterations = 2;
        // A config edit would change the digest, so replicate by driving the
        // state manually instead.
        let mut state = TrainState::init(&cfg2b).unwrap();
        for _ in 0..2 {
            state.iterate().unwrap();
            if state.stage1_done() {
                state.enter_stage_two().unwrap();
            }
        }
        let ckpt = d3.path().join("mid.cm3m");
        save_checkpoint(&state, &ckpt).unwrap();
        let resumed = run_curriculum(&cfg2b, Some(&ckpt)).unwrap();
        assert_eq!(resumed.policy.store, full.policy.store);
        assert_eq!(resumed.value.store, full.value.store);
        assert_eq!(resumed.normalizer, full.normalizer);
        let rows_r: Vec<String> = resumed.curve.iter().map(|r| strip_wall(r)).collect();
        assert_eq!(rows_r, rows_a);
    }

    fn strip_wall(row: &CurveRow) -> String {
        format!(
            "{},{},{},{}",
            row.iteration, row.mean_episode_reward, row.success_rate, row.collision_rate
        )
    }

    #[test]
    fn resume_rejects_config_drift() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = micro_cfg(dir.path());
        let state = TrainState::init(&cfg).unwrap();
        let ckpt = dir.path().join("s.cm3m");
        save_checkpoint(&state, &ckpt).unwrap();
        let mut other = cfg.clone();
        other.master_seed += 1;
        assert!(matches!(
            run_curriculum(&other, Some(&ckpt)),
            Err(TrainError::Checkpoint(
                crate::error::CheckpointError::DigestMismatch
            ))
        ));
    }
}
