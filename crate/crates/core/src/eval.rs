//! Frozen-policy evaluation, per-episode metrics, trajectory export, and
//! bit-exact replay verification.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_3;
use std::path::{Path, PathBuf};

use crate::error::ReplayError;
use crate::mdp::{
    assemble_observation, check_termination, compute_reward, Event, Observation,
    RunningNormalizer, ScanHistory,
};
use crate::net::{clamp_action, policy_forward, sample_action, NetConfig, PolicyParams};
use crate::rng::{derive_stream, STREAM_EVAL_BASE};
use crate::scenarios::{build_world, ScenarioSpec};
use crate::sim::{cast_scan, detect_collisions, world_step, LidarSpec, RobotStatus};

/// Run one observation through the frozen normalizer and policy. This is the
/// single inference path shared by evaluation, the CLI, and the TCP service,
/// so their outputs agree bit-for-bit.
pub fn infer_action(
    policy: &PolicyParams,
    net: &NetConfig,
    normalizer: &RunningNormalizer,
    obs: &Observation,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> [f64; 2] {
    let mut flat = obs.flatten();
    normalizer.apply_slice(&mut flat);
    let row = Array2::from_shape_vec((1, flat.len()), flat).expect("row shape");
    let (means, _) = policy_forward(policy, net, &row).expect("obs shape");
    let mean = [means[[0, 0]], means[[0, 1]]];
    if deterministic {
        clamp_action(mean)
    } else {
        let log_std = &policy.store.get(crate::net::LOG_STD_NAME).data;
        sample_action(mean, log_std, rng).action
    }
}

/// Action source for evaluation episodes.
pub enum EvalPolicy<'a> {
    Learned {
        policy: &'a PolicyParams,
        net: &'a NetConfig,
        normalizer: &'a RunningNormalizer,
        deterministic: bool,
    },
    /// Scripted proportional go-to-goal controller, a non-learned baseline
    /// for harness sanity checks.
    GoToGoal,
    ZeroAction,
}

impl EvalPolicy<'_> {
    fn action(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> [f64; 2] {
        match self {
            EvalPolicy::Learned {
                policy,
                net,
                normalizer,
                deterministic,
            } => infer_action(policy, net, normalizer, obs, *deterministic, rng),
            EvalPolicy::GoToGoal => {
                let [d, a] = obs.goal_polar;
                let w = (2.0 * a).clamp(-1.0, 1.0);
                let v = if a.abs() < FRAC_PI_3 { d.min(1.0) } else { 0.0 };
                [v, w]
            }
            EvalPolicy::ZeroAction => [0.0, 0.0],
        }
    }
}

/// Per-robot episode outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub robot: usize,
    pub outcome: Event,
    pub steps: u64,
    /// `steps * dt` for arrived episodes.
    pub arrival_time: f64,
    pub path_length: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub tick: u64,
    pub robot: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub w: f64,
    pub reward: f64,
    pub event: Event,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
}

/// Sidecar metadata that makes a trajectory file replayable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub spec: ScenarioSpec,
    pub world_seed: u64,
    pub horizon: u64,
    pub reward: crate::mdp::RewardConfig,
}

/// Run one multi-robot episode: every robot acts until it terminates
/// (terminated robots freeze in place and stay lidar-visible), or the
/// horizon times everyone out.
pub fn run_episode(
    spec: &ScenarioSpec,
    world_seed: u64,
    policy: &EvalPolicy<'_>,
    lidar: &LidarSpec,
    reward_cfg: &crate::mdp::RewardConfig,
    horizon: u64,
    rng: &mut ChaCha8Rng,
    collect_log: bool,
) -> Result<(Vec<EpisodeMetrics>, TrajectoryLog), ReplayError> {
    let mut world = build_world(spec, world_seed)?;
    let n = world.robots.len();
    let mut histories = vec![ScanHistory::new(); n];
    let mut metrics: Vec<Option<EpisodeMetrics>> = vec![None; n];
    let mut path_len = vec![0.0; n];
    let mut reward_sum = vec![0.0; n];
    let mut log = TrajectoryLog::default();

    for tick in 1..=horizon {
        if world.robots.iter().all(|r| !r.status.is_active()) {
            break;
        }
        let mut actions = vec![[0.0, 0.0]; n];
        for r in 0..n {
            if !world.robots[r].status.is_active() {
                continue;
            }
            let scan = cast_scan(&world, r, lidar);
            histories[r].push(scan);
            let obs = assemble_observation(&world, r, &histories[r]);
            actions[r] = policy.action(&obs, rng);
        }
        let next = world_step(&world, &actions)?;
        let prev = std::mem::replace(&mut world, next);
        let collisions = detect_collisions(&world);

        for r in 0..n {
            if !prev.robots[r].status.is_active() {
                continue;
            }
            let outcome = compute_reward(&prev.robots[r], &world.robots[r], collisions[r], reward_cfg);
            let event = check_termination(
                &world.robots[r],
                collisions[r],
                tick,
                horizon,
                reward_cfg.arrival_threshold,
            );
            reward_sum[r] += outcome.reward;
            let dx = world.robots[r].pose.x - prev.robots[r].pose.x;
            let dy = world.robots[r].pose.y - prev.robots[r].pose.y;
            path_len[r] += (dx * dx + dy * dy).sqrt();

            if collect_log {
                log.records.push(TrajectoryRecord {
                    tick,
                    robot: r,
                    x: world.robots[r].pose.x,
                    y: world.robots[r].pose.y,
                    theta: world.robots[r].pose.theta,
                    v: world.robots[r].v,
                    w: world.robots[r].w,
                    reward: outcome.reward,
                    event,
                });
            }

            if event.is_terminal() {
                world.robots[r].status = match event {
                    Event::Arrival => RobotStatus::Arrived,
                    Event::Collision => RobotStatus::Collided,
                    Event::Timeout => RobotStatus::TimedOut,
                    Event::None => unreachable!(),
                };
                metrics[r] = Some(EpisodeMetrics {
                    robot: r,
                    outcome: event,
                    steps: tick,
                    arrival_time: if event == Event::Arrival {
                        tick as f64 * world.dt
                    } else {
                        0.0
                    },
                    path_length: path_len[r],
                    reward: reward_sum[r],
                });
            }
        }
    }

    let out = metrics
        .into_iter()
        .enumerate()
        .map(|(r, m)| {
            m.unwrap_or(EpisodeMetrics {
                robot: r,
                outcome: Event::Timeout,
                steps: horizon,
                arrival_time: 0.0,
                path_length: path_len[r],
                reward: reward_sum[r],
            })
        })
        .collect();
    Ok((out, log))
}

/// Aggregate rates over a batch of episodes. Rates sum to one: every robot
/// episode ends in exactly one of the three terminal events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    /// Robot-episodes aggregated.
    pub episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Mean over arrived episodes; 0 when none arrived.
    pub mean_arrival_time: f64,
    pub mean_path_length: f64,
    pub mean_reward: f64,
}

impl EvalSummary {
    pub fn from_metrics(metrics: &[EpisodeMetrics]) -> Self {
        let n = metrics.len().max(1);
        let count = |e: Event| metrics.iter().filter(|m| m.outcome == e).count();
        let arrived: Vec<&EpisodeMetrics> = metrics
            .iter()
            .filter(|m| m.outcome == Event::Arrival)
            .collect();
        let mean_arrival = if arrived.is_empty() {
            0.0
        } else {
            arrived.iter().map(|m| m.arrival_time).sum::<f64>() / arrived.len() as f64
        };
        let mean_path = if arrived.is_empty() {
            0.0
        } else {
            arrived.iter().map(|m| m.path_length).sum::<f64>() / arrived.len() as f64
        };
        EvalSummary {
            episodes: metrics.len(),
            success_rate: count(Event::Arrival) as f64 / n as f64,
            collision_rate: count(Event::Collision) as f64 / n as f64,
            timeout_rate: count(Event::Timeout) as f64 / n as f64,
            mean_arrival_time: mean_arrival,
            mean_path_length: mean_path,
            mean_reward: metrics.iter().map(|m| m.reward).sum::<f64>() / n as f64,
        }
    }

    /// The documented one-line key=value summary.
    pub fn summary_line(&self, scenario: &str) -> String {
        format!(
            "scenario={} episodes={} success_rate={} collision_rate={} timeout_rate={} mean_arrival_time={} mean_path_length={} mean_reward={}",
            scenario,
            self.episodes,
            self.success_rate,
            self.collision_rate,
            self.timeout_rate,
            self.mean_arrival_time,
            self.mean_path_length,
            self.mean_reward
        )
    }
}

/// Evaluate a policy over `n_episodes` freshly built worlds.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    spec: &ScenarioSpec,
    policy: &EvalPolicy<'_>,
    n_episodes: u64,
    seed: u64,
    lidar: &LidarSpec,
    reward_cfg: &crate::mdp::RewardConfig,
    horizon: u64,
) -> Result<(EvalSummary, Vec<EpisodeMetrics>), ReplayError> {
    let mut all = Vec::new();
    for ep in 0..n_episodes {
        let mut rng = derive_stream(seed, STREAM_EVAL_BASE + ep);
        let (metrics, _) = run_episode(
            spec,
            seed.wrapping_add(ep),
            policy,
            lidar,
            reward_cfg,
            horizon,
            &mut rng,
            false,
        )?;
        all.extend(metrics);
    }
    Ok((EvalSummary::from_metrics(&all), all))
}

// ---------------------------------------------------------------------------
// Trajectory files
// ---------------------------------------------------------------------------

pub const TRAJECTORY_HEADER: &str = "tick,robot,x,y,theta,v,w,reward,event";

/// Write the log as CSV. Row order is deterministic: ticks ascending, robots
/// ascending within a tick (the order episodes generate them).
pub fn export_trajectories(log: &TrajectoryLog, path: &Path) -> Result<(), ReplayError> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{TRAJECTORY_HEADER}")?;
    for r in &log.records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.tick,
            r.robot,
            r.x,
            r.y,
            r.theta,
            r.v,
            r.w,
            r.reward,
            r.event.as_str()
        )?;
    }
    Ok(())
}

pub fn parse_trajectories(path: &Path) -> Result<TrajectoryLog, ReplayError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != TRAJECTORY_HEADER {
                return Err(ReplayError::Parse {
                    line: 1,
                    msg: format!("unexpected header: {line}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(ReplayError::Parse {
                line: i + 1,
                msg: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64, ReplayError> {
            s.parse().map_err(|_| ReplayError::Parse {
                line: i + 1,
                msg: format!("bad {what}: {s}"),
            })
        };
        records.push(TrajectoryRecord {
            tick: fields[0].parse().map_err(|_| ReplayError::Parse {
                line: i + 1,
                msg: format!("bad tick: {}", fields[0]),
            })?,
            robot: fields[1].parse().map_err(|_| ReplayError::Parse {
                line: i + 1,
                msg: format!("bad robot: {}", fields[1]),
            })?,
            x: parse_f(fields[2], "x")?,
            y: parse_f(fields[3], "y")?,
            theta: parse_f(fields[4], "theta")?,
            v: parse_f(fields[5], "v")?,
            w: parse_f(fields[6], "w")?,
            reward: parse_f(fields[7], "reward")?,
            event: Event::parse(fields[8]).ok_or(ReplayError::Parse {
                line: i + 1,
                msg: format!("bad event: {}", fields[8]),
            })?,
        });
    }
    Ok(TrajectoryLog { records })
}

pub fn meta_path_for(traj: &Path) -> PathBuf {
    let mut s = traj.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn save_meta(meta: &TrajectoryMeta, traj_path: &Path) -> Result<(), ReplayError> {
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    std::fs::write(meta_path_for(traj_path), text)?;
    Ok(())
}

pub fn load_meta(traj_path: &Path) -> Result<TrajectoryMeta, ReplayError> {
    let text = std::fs::read_to_string(meta_path_for(traj_path))?;
    serde_json::from_str(&text).map_err(|e| ReplayError::Parse {
        line: 0,
        msg: format!("meta: {e}"),
    })
}

/// Re-execute a logged action sequence through the simulator and verify the
/// logged poses, rewards, and events are reproduced bit-exactly.
pub fn replay_trajectory(meta: &TrajectoryMeta, log: &TrajectoryLog) -> Result<(), ReplayError> {
    let mut world = build_world(&meta.spec, meta.world_seed)?;
    let n = world.robots.len();
    let max_tick = log.records.iter().map(|r| r.tick).max().unwrap_or(0);

    let mut cursor = 0usize;
    for tick in 1..=max_tick {
        let mut actions = vec![[0.0, 0.0]; n];
        let tick_range = {
            let start = cursor;
            while cursor < log.records.len() && log.records[cursor].tick == tick {
                cursor += 1;
            }
            start..cursor
        };
        for rec in &log.records[tick_range.clone()] {
            if rec.robot >= n {
                return Err(ReplayError::Parse {
                    line: 0,
                    msg: format!("robot index {} out of range", rec.robot),
                });
            }
            actions[rec.robot] = [rec.v, rec.w];
        }
        let next = world_step(&world, &actions)?;
        let prev = std::mem::replace(&mut world, next);
        let collisions = detect_collisions(&world);

        for rec in &log.records[tick_range] {
            let r = rec.robot;
            let robot = &world.robots[r];
            if robot.pose.x != rec.x || robot.pose.y != rec.y || robot.pose.theta != rec.theta {
                return Err(ReplayError::Mismatch {
                    tick,
                    robot: r,
                    what: format!(
                        "pose ({}, {}, {}) != logged ({}, {}, {})",
                        robot.pose.x, robot.pose.y, robot.pose.theta, rec.x, rec.y, rec.theta
                    ),
                });
            }
            let outcome = compute_reward(&prev.robots[r], &world.robots[r], collisions[r], &meta.reward);
            if outcome.reward != rec.reward {
                return Err(ReplayError::Mismatch {
                    tick,
                    robot: r,
                    what: format!("reward {} != logged {}", outcome.reward, rec.reward),
                });
            }
            let event = check_termination(
                &world.robots[r],
                collisions[r],
                tick,
                meta.horizon,
                meta.reward.arrival_threshold,
            );
            if event != rec.event {
                return Err(ReplayError::Mismatch {
                    tick,
                    robot: r,
                    what: format!("event {:?} != logged {:?}", event, rec.event),
                });
            }
            if event.is_terminal() {
                world.robots[r].status = match event {
                    Event::Arrival => RobotStatus::Arrived,
                    Event::Collision => RobotStatus::Collided,
                    Event::Timeout => RobotStatus::TimedOut,
                    Event::None => unreachable!(),
                };
            }
        }
    }
    Ok(())
}
