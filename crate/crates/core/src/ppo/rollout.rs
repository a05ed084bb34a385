//! Experience collection across a set of concurrently simulated worlds.
//!
//! Each world owns a ChaCha stream for action sampling and respawn draws, so
//! collecting worlds in parallel threads or one by one yields bit-identical
//! batches. Transitions are flattened in (world, robot, tick) order, which
//! keeps every robot's timeline contiguous for the GAE pass.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PpoConfig, RolloutBatch, Segment};
use crate::error::TrainError;
use crate::mdp::{
    assemble_observation, check_termination, compute_reward, Event, Observation,
    RunningNormalizer, ScanHistory,
};
use crate::net::{
    clamp_action, policy_forward, sample_action, value_forward, NetConfig, PolicyParams,
    ValueParams,
};
use crate::rng::RngState;
use crate::scenarios::{respawn, ScenarioSpec};
use crate::sim::{cast_scan, detect_collisions, world_step, LidarSpec, World};

/// One world plus everything that evolves with it between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvRuntime {
    pub spec: ScenarioSpec,
    pub world: World,
    pub histories: Vec<ScanHistory>,
    pub tick_in_episode: Vec<u64>,
    pub episode_reward: Vec<f64>,
    pub rng: ChaCha8Rng,
}

impl EnvRuntime {
    pub fn new(spec: ScenarioSpec, world: World, rng: ChaCha8Rng) -> Self {
        let n = world.robots.len();
        EnvRuntime {
            spec,
            world,
            histories: vec![ScanHistory::new(); n],
            tick_in_episode: vec![0; n],
            episode_reward: vec![0.0; n],
            rng,
        }
    }

    pub fn n_robots(&self) -> usize {
        self.world.robots.len()
    }
}

/// Serialized form of an `EnvRuntime` for checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub spec: ScenarioSpec,
    pub world: World,
    pub histories: Vec<ScanHistory>,
    pub tick_in_episode: Vec<u64>,
    pub episode_reward: Vec<f64>,
    pub rng: RngState,
}

impl From<&EnvRuntime> for EnvSnapshot {
    fn from(env: &EnvRuntime) -> Self {
        EnvSnapshot {
            spec: env.spec.clone(),
            world: env.world.clone(),
            histories: env.histories.clone(),
            tick_in_episode: env.tick_in_episode.clone(),
            episode_reward: env.episode_reward.clone(),
            rng: RngState::capture(&env.rng),
        }
    }
}

impl From<EnvSnapshot> for EnvRuntime {
    fn from(snap: EnvSnapshot) -> Self {
        EnvRuntime {
            spec: snap.spec,
            world: snap.world,
            histories: snap.histories,
            tick_in_episode: snap.tick_in_episode,
            episode_reward: snap.episode_reward,
            rng: snap.rng.restore(),
        }
    }
}

/// A finished robot episode observed during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub event: Event,
    pub steps: u64,
    pub reward: f64,
}

/// Aggregated per-iteration training statistics.
#[derive(Debug, Clone, Default)]
pub struct IterationStats {
    pub episodes: Vec<EpisodeRecord>,
}

impl IterationStats {
    pub fn completed(&self) -> usize {
        self.episodes.len()
    }

    pub fn rate(&self, event: Event) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        let hits = self.episodes.iter().filter(|e| e.event == event).count();
        hits as f64 / self.episodes.len() as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(Event::Arrival)
    }

    pub fn mean_episode_reward(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.reward).sum::<f64>() / self.episodes.len() as f64
    }
}

/// How actions, log-probs, and values are produced during collection.
pub trait RolloutActor: Sync {
    /// Per-robot decisions for one world tick. `obs` is one normalized
    /// observation row per active robot.
    fn decide(&self, obs: &Array2<f64>, rng: &mut ChaCha8Rng) -> Vec<Decision>;

    /// Value estimates used to bootstrap unterminated trajectory tails.
    fn bootstrap(&self, obs: &Array2<f64>) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct Decision {
    pub pre_clamp: [f64; 2],
    pub action: [f64; 2],
    pub log_prob: f64,
    pub value: f64,
}

/// The learned Gaussian policy with its critic.
pub struct GaussianActor<'a> {
    pub policy: &'a PolicyParams,
    pub value: &'a ValueParams,
    pub net: &'a NetConfig,
}

impl RolloutActor for GaussianActor<'_> {
    fn decide(&self, obs: &Array2<f64>, rng: &mut ChaCha8Rng) -> Vec<Decision> {
        let (means, _) = policy_forward(self.policy, self.net, obs).expect("obs shape");
        let (values, _) = value_forward(self.value, self.net, obs).expect("obs shape");
        let log_std = &self.policy.store.get(crate::net::LOG_STD_NAME).data;
        (0..obs.nrows())
            .map(|i| {
                let s = sample_action([means[[i, 0]], means[[i, 1]]], log_std, rng);
                Decision {
                    pre_clamp: s.pre_clamp,
                    action: s.action,
                    log_prob: s.log_prob,
                    value: values[i],
                }
            })
            .collect()
    }

    fn bootstrap(&self, obs: &Array2<f64>) -> Vec<f64> {
        let (values, _) = value_forward(self.value, self.net, obs).expect("obs shape");
        values.to_vec()
    }
}

/// A fixed scripted controller (tests and baselines): zero log-prob and
/// value, actions from a pure function of the raw observation.
pub struct ScriptedActor<F: Fn(&Observation) -> [f64; 2] + Sync> {
    pub act: F,
    pub n_beams: usize,
}

impl<F: Fn(&Observation) -> [f64; 2] + Sync> RolloutActor for ScriptedActor<F> {
    fn decide(&self, obs: &Array2<f64>, _rng: &mut ChaCha8Rng) -> Vec<Decision> {
        (0..obs.nrows())
            .map(|i| {
                let row: Vec<f64> = obs.row(i).to_vec();
                let o = Observation::from_flat(&row, self.n_beams);
                let a = clamp_action((self.act)(&o));
                Decision {
                    pre_clamp: a,
                    action: a,
                    log_prob: 0.0,
                    value: 0.0,
                }
            })
            .collect()
    }

    fn bootstrap(&self, obs: &Array2<f64>) -> Vec<f64> {
        vec![0.0; obs.nrows()]
    }
}

struct RobotTrace {
    obs: Vec<Vec<f64>>,
    actions: Vec<[f64; 2]>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: f64,
}

struct WorldCollection {
    traces: Vec<RobotTrace>,
    episodes: Vec<EpisodeRecord>,
    stats_acc: RunningNormalizer,
}

/// Everything constant during one collection sweep.
pub struct CollectContext<'a> {
    pub lidar: &'a LidarSpec,
    pub reward: &'a crate::mdp::RewardConfig,
    pub horizon: u64,
    pub normalizer: &'a RunningNormalizer,
    pub parallel: bool,
}

fn collect_world<A: RolloutActor>(
    env: &mut EnvRuntime,
    actor: &A,
    ctx: &CollectContext<'_>,
    ticks: usize,
) -> Result<WorldCollection, TrainError> {
    let n = env.n_robots();
    let obs_dim = ctx.normalizer.dim();
    let mut traces: Vec<RobotTrace> = (0..n)
        .map(|_| RobotTrace {
            obs: Vec::with_capacity(ticks),
            actions: Vec::with_capacity(ticks),
            log_probs: Vec::with_capacity(ticks),
            rewards: Vec::with_capacity(ticks),
            values: Vec::with_capacity(ticks),
            dones: Vec::with_capacity(ticks),
            bootstrap: 0.0,
        })
        .collect();
    let mut episodes = Vec::new();
    let mut stats_acc = RunningNormalizer::new(obs_dim);

    let mut obs_mat = Array2::<f64>::zeros((n, obs_dim));
    for _ in 0..ticks {
        // Sense.
        for r in 0..n {
            let scan = cast_scan(&env.world, r, ctx.lidar);
            env.histories[r].push(scan);
            let obs = assemble_observation(&env.world, r, &env.histories[r]);
            let mut flat = obs.flatten();
            stats_acc.update_vec(&flat);
            ctx.normalizer.apply_slice(&mut flat);
            obs_mat.row_mut(r).assign(&Array1::from_vec(flat));
        }

        // Decide (one rng draw sequence per world, robots in index order).
        let decisions = actor.decide(&obs_mat, &mut env.rng);

        // Act synchronously.
        let actions: Vec<[f64; 2]> = decisions.iter().map(|d| d.action).collect();
        let next_world = world_step(&env.world, &actions)?;
        let prev_world = std::mem::replace(&mut env.world, next_world);
        let collisions = detect_collisions(&env.world);

        // Score, record, respawn.
        for r in 0..n {
            env.tick_in_episode[r] += 1;
            let outcome = compute_reward(
                &prev_world.robots[r],
                &env.world.robots[r],
                collisions[r],
                ctx.reward,
            );
            let event = check_termination(
                &env.world.robots[r],
                collisions[r],
                env.tick_in_episode[r],
                ctx.horizon,
                ctx.reward.arrival_threshold,
            );
            env.episode_reward[r] += outcome.reward;

            let trace = &mut traces[r];
            trace.obs.push(obs_mat.row(r).to_vec());
            trace.actions.push(decisions[r].pre_clamp);
            trace.log_probs.push(decisions[r].log_prob);
            trace.rewards.push(outcome.reward);
            trace.values.push(decisions[r].value);
            trace.dones.push(event.is_terminal());

            if event.is_terminal() {
                episodes.push(EpisodeRecord {
                    event,
                    steps: env.tick_in_episode[r],
                    reward: env.episode_reward[r],
                });
                env.world.robots[r].status = match event {
                    Event::Arrival => crate::sim::RobotStatus::Arrived,
                    Event::Collision => crate::sim::RobotStatus::Collided,
                    Event::Timeout => crate::sim::RobotStatus::TimedOut,
                    Event::None => unreachable!(),
                };
                env.world = respawn(&env.world, r, &mut env.rng, &env.spec)?;
                env.histories[r].clear();
                env.tick_in_episode[r] = 0;
                env.episode_reward[r] = 0.0;
            }
        }
    }

    // Bootstrap values for unterminated tails: what each robot would observe
    // next tick, without disturbing the persistent scan history.
    for r in 0..n {
        let scan = cast_scan(&env.world, r, ctx.lidar);
        let mut hist = env.histories[r].clone();
        hist.push(scan);
        let obs = assemble_observation(&env.world, r, &hist);
        let mut flat = obs.flatten();
        ctx.normalizer.apply_slice(&mut flat);
        obs_mat.row_mut(r).assign(&Array1::from_vec(flat));
    }
    let boots = actor.bootstrap(&obs_mat);
    for (r, b) in boots.into_iter().enumerate() {
        traces[r].bootstrap = b;
    }

    Ok(WorldCollection {
        traces,
        episodes,
        stats_acc,
    })
}

/// Step every world `rollout_length` ticks with the given actor. Returns the
/// pooled batch, per-iteration episode stats, and the raw-observation
/// statistics accumulated this sweep (callers fold them into the shared
/// normalizer before optimizing).
pub fn collect_rollouts<A: RolloutActor>(
    envs: &mut [EnvRuntime],
    actor: &A,
    cfg: &PpoConfig,
    ctx: &CollectContext<'_>,
) -> Result<(RolloutBatch, IterationStats, RunningNormalizer), TrainError> {
    let ticks = cfg.rollout_length;
    let results: Vec<Result<WorldCollection, TrainError>> = if ctx.parallel {
        envs.par_iter_mut()
            .map(|env| collect_world(env, actor, ctx, ticks))
            .collect()
    } else {
        envs.iter_mut()
            .map(|env| collect_world(env, actor, ctx, ticks))
            .collect()
    };

    let mut collections = Vec::with_capacity(results.len());
    for r in results {
        collections.push(r?);
    }

    let obs_dim = ctx.normalizer.dim();
    let total: usize = collections
        .iter()
        .flat_map(|c| c.traces.iter())
        .map(|t| t.rewards.len())
        .sum();

    let mut obs = Array2::<f64>::zeros((total, obs_dim));
    let mut actions = Array2::<f64>::zeros((total, 2));
    let mut log_probs = Array1::<f64>::zeros(total);
    let mut rewards = Array1::<f64>::zeros(total);
    let mut values = Array1::<f64>::zeros(total);
    let mut dones = Vec::with_capacity(total);
    let mut segments = Vec::new();
    let mut stats = IterationStats::default();
    let mut stats_acc = RunningNormalizer::new(obs_dim);

    let mut cursor = 0;
    for c in &collections {
        for t in &c.traces {
            let len = t.rewards.len();
            segments.push(Segment {
                start: cursor,
                len,
                bootstrap: t.bootstrap,
            });
            for i in 0..len {
                obs.row_mut(cursor + i)
                    .assign(&Array1::from_vec(t.obs[i].clone()));
                actions[[cursor + i, 0]] = t.actions[i][0];
                actions[[cursor + i, 1]] = t.actions[i][1];
                log_probs[cursor + i] = t.log_probs[i];
                rewards[cursor + i] = t.rewards[i];
                values[cursor + i] = t.values[i];
                dones.push(t.dones[i]);
            }
            cursor += len;
        }
        stats.episodes.extend(c.episodes.iter().cloned());
        stats_acc.merge(&c.stats_acc);
    }

    let batch = RolloutBatch {
        obs,
        actions,
        log_probs,
        rewards,
        values,
        dones,
        segments,
        advantages: Array1::zeros(0),
        returns: Array1::zeros(0),
    };
    Ok((batch, stats, stats_acc))
}

/// Collection with a scripted controller (tests, baselines).
pub fn collect_rollouts_scripted<F: Fn(&Observation) -> [f64; 2] + Sync>(
    envs: &mut [EnvRuntime],
    act: F,
    cfg: &PpoConfig,
    ctx: &CollectContext<'_>,
) -> Result<(RolloutBatch, IterationStats, RunningNormalizer), TrainError> {
    let actor = ScriptedActor {
        act,
        n_beams: ctx.lidar.n_beams,
    };
    collect_rollouts(envs, &actor, cfg, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RewardConfig;
    use crate::net::init_params;
    use crate::rng::world_stream;
    use crate::scenarios::{ScenarioCatalog, ScenarioId};
    use crate::sim::{Bounds, Pose, RobotState};

    fn lidar() -> LidarSpec {
        LidarSpec {
            n_beams: 16,
            fov: std::f64::consts::PI,
            max_range: 4.0,
        }
    }

    /// A hand-built world whose goals are unreachably far, so nothing
    /// terminates within a rollout.
    fn far_goal_env() -> EnvRuntime {
        let bounds = Bounds::new([-500.0, -500.0], [500.0, 500.0]);
        let robots: Vec<RobotState> = (0..4)
            .map(|i| {
                RobotState::new(
                    Pose::new(i as f64 * 5.0, 0.0, 0.0),
                    0.12,
                    [400.0, 400.0],
                )
            })
            .collect();
        let world = World::new(robots, vec![], 0.1, bounds).unwrap();
        let catalog = ScenarioCatalog::embedded();
        let mut spec = catalog.spec(ScenarioId::RandomEmpty, 4, 0.12, 0.1);
        spec.bounds = bounds;
        EnvRuntime::new(spec, world, world_stream(3, 0, 0))
    }

    fn ctx<'a>(
        lidar: &'a LidarSpec,
        reward: &'a RewardConfig,
        norm: &'a RunningNormalizer,
    ) -> CollectContext<'a> {
        CollectContext {
            lidar,
            reward,
            horizon: 400,
            normalizer: norm,
            parallel: false,
        }
    }

    #[test]
    fn counts_transitions_without_terminations() {
        let spec = lidar();
        let reward = RewardConfig::default();
        let norm = RunningNormalizer::new(3 * spec.n_beams + 4);
        let cfg = PpoConfig {
            rollout_length: 256,
            ..PpoConfig::default()
        };
        let net = crate::net::NetConfig::with_beams(spec.n_beams);
        let (policy, value) = init_params(&net, 1);
        let actor = GaussianActor {
            policy: &policy,
            value: &value,
            net: &net,
        };
        let mut envs = vec![far_goal_env()];
        let (batch, stats, _) =
            collect_rollouts(&mut envs, &actor, &cfg, &ctx(&spec, &reward, &norm)).unwrap();
        assert_eq!(batch.len(), 1024); // 1 world x 4 robots x 256 ticks
        assert_eq!(batch.segments.len(), 4);
        assert!(batch.segments.iter().all(|s| s.len == 256));
        assert_eq!(stats.completed(), 0);
        assert!(batch.dones.iter().all(|&d| !d));
    }

    #[test]
    fn collection_is_deterministic() {
        let spec = lidar();
        let reward = RewardConfig::default();
        let norm = RunningNormalizer::new(3 * spec.n_beams + 4);
        let cfg = PpoConfig {
            rollout_length: 40,
            ..PpoConfig::default()
        };
        let net = crate::net::NetConfig::with_beams(spec.n_beams);
        let (policy, value) = init_params(&net, 1);
        let actor = GaussianActor {
            policy: &policy,
            value: &value,
            net: &net,
        };
        let run = || {
            let mut envs = vec![far_goal_env()];
            let (batch, _, _) =
                collect_rollouts(&mut envs, &actor, &cfg, &ctx(&spec, &reward, &norm)).unwrap();
            batch
        };
        let a = run();
        let b = run();
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.log_probs, b.log_probs);
        assert_eq!(a.rewards, b.rewards);
    }

    #[test]
    fn parallel_matches_sequential() {
        let spec = lidar();
        let reward = RewardConfig::default();
        let norm = RunningNormalizer::new(3 * spec.n_beams + 4);
        let cfg = PpoConfig {
            rollout_length: 30,
            ..PpoConfig::default()
        };
        let net = crate::net::NetConfig::with_beams(spec.n_beams);
        let (policy, value) = init_params(&net, 2);
        let actor = GaussianActor {
            policy: &policy,
            value: &value,
            net: &net,
        };
        let catalog = ScenarioCatalog::embedded();
        let make_envs = || -> Vec<EnvRuntime> {
            (0..3)
                .map(|i| {
                    let spec_w = catalog.spec(ScenarioId::RandomEmpty, 3, 0.12, 0.1);
                    let mut rng = world_stream(9, 1, i);
                    let world =
                        crate::scenarios::build_world_with_rng(&spec_w, &mut rng).unwrap();
                    EnvRuntime::new(spec_w, world, rng)
                })
                .collect()
        };
        let mut seq_envs = make_envs();
        let c = CollectContext {
            lidar: &spec,
            reward: &reward,
            horizon: 400,
            normalizer: &norm,
            parallel: false,
        };
        let (seq, _, seq_acc) = collect_rollouts(&mut seq_envs, &actor, &cfg, &c).unwrap();

        let mut par_envs = make_envs();
        let c = CollectContext {
            lidar: &spec,
            reward: &reward,
            horizon: 400,
            normalizer: &norm,
            parallel: true,
        };
        let (par, _, par_acc) = collect_rollouts(&mut par_envs, &actor, &cfg, &c).unwrap();

        assert_eq!(seq.obs, par.obs);
        assert_eq!(seq.actions, par.actions);
        assert_eq!(seq.rewards, par.rewards);
        assert_eq!(seq_acc, par_acc);
        assert_eq!(seq_envs, par_envs);
    }

    #[test]
    fn zero_action_policy_earns_zero_until_timeout() {
        let spec = lidar();
        let reward = RewardConfig::default();
        let norm = RunningNormalizer::new(3 * spec.n_beams + 4);
        let cfg = PpoConfig {
            rollout_length: 450,
            ..PpoConfig::default()
        };
        let mut envs = vec![far_goal_env()];
        let c = CollectContext {
            lidar: &spec,
            reward: &reward,
            horizon: 400,
            normalizer: &norm,
            parallel: false,
        };
        let (batch, stats, _) =
            collect_rollouts_scripted(&mut envs, |_| [0.0, 0.0], &cfg, &c).unwrap();
        assert!(batch.rewards.iter().all(|&r| r == 0.0));
        // Every robot times out exactly once at tick 400.
        assert_eq!(stats.completed(), 4);
        assert!(stats.episodes.iter().all(|e| e.event == Event::Timeout));
        assert!(stats.episodes.iter().all(|e| e.steps == 400));
        assert!(stats.episodes.iter().all(|e| e.reward == 0.0));
    }

    #[test]
    fn respawn_resets_episode_state() {
        let spec = lidar();
        let reward = RewardConfig::default();
        let norm = RunningNormalizer::new(3 * spec.n_beams + 4);
        let cfg = PpoConfig {
            rollout_length: 50,
            ..PpoConfig::default()
        };
        // Goals 1.2 m dead ahead: a full-speed policy arrives quickly.
        let bounds = Bounds::new([-10.0, -10.0], [10.0, 10.0]);
        let robots: Vec<RobotState> = (0..2)
            .map(|i| {
                RobotState::new(Pose::new(-5.0 + i as f64 * 5.0, 0.0, 0.0), 0.12, [
                    -3.8 + i as f64 * 5.0,
                    0.0,
                ])
            })
            .collect();
        let world = World::new(robots, vec![], 0.1, bounds).unwrap();
        let catalog = ScenarioCatalog::embedded();
        let spec_w = catalog.spec(ScenarioId::RandomEmpty, 2, 0.12, 0.1);
        let mut envs = vec![EnvRuntime::new(spec_w, world, world_stream(5, 0, 0))];
        let c = CollectContext {
            lidar: &spec,
            reward: &reward,
            horizon: 400,
            normalizer: &norm,
            parallel: false,
        };
        let (_, stats, _) =
            collect_rollouts_scripted(&mut envs, |_| [1.0, 0.0], &cfg, &c).unwrap();
        assert!(stats.completed() >= 2);
        assert!(stats.episodes.iter().any(|e| e.event == Event::Arrival));
        // After respawn the worlds keep running: all robots active.
        assert!(envs[0].world.robots.iter().all(|r| r.status.is_active()));
    }
}
