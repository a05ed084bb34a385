//! Command-line entry point wiring configs to the train / eval / replay /
//! serve workflows.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error,
//! 4 validation failure (replay mismatch).

use clap::{ArgAction, Parser, Subcommand};
use std::path::{Path, PathBuf};

use crate::config::TrainConfig;
use crate::error::ConfigError;
use crate::eval::{
    evaluate_policy, export_trajectories, load_meta, parse_trajectories, replay_trajectory,
    run_episode, save_meta, EvalPolicy, TrajectoryMeta,
};
use crate::ppo::{load_checkpoint, run_curriculum};
use crate::rng::{derive_stream, STREAM_EVAL_BASE};
use crate::scenarios::ScenarioId;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "mrnav",
    version,
    about = "Multi-robot navigation: train, evaluate, replay, and serve collision-avoidance policies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a policy with the two-stage curriculum.
    Train {
        /// Full config file; replaces the profile defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in profile when no config file is given.
        #[arg(long, default_value = "desk")]
        profile: String,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a checkpoint (config must match it exactly).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a scenario and print a summary line.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario id: circle, corridor, crossing, swap, random_empty,
        /// random_obstacles, evacuation.
        #[arg(long, default_value = "random_empty")]
        scenario: String,
        /// Robot count (defaults to the catalog allocation).
        #[arg(long)]
        robots: Option<usize>,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Mean actions (true) or sampled actions (false).
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        deterministic: bool,
        /// Optional eval-side config; its lidar must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write episode 0's trajectory CSV (plus .meta.json) here.
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Re-execute a trajectory log and verify it bit-exactly.
    Replay {
        #[arg(long)]
        traj: PathBuf,
    },
    /// Serve a checkpoint as a TCP newline-delimited JSON service.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
}

fn train_config(
    config: Option<&Path>,
    profile: &str,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<TrainConfig, ConfigError> {
    let mut cfg = match config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::from_profile(profile)?,
    };
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Execute a parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Train {
            config,
            profile,
            seed,
            out,
            resume,
        } => {
            let cfg = match train_config(config.as_deref(), &profile, seed, out.as_deref()) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return EXIT_CONFIG;
                }
            };
            match run_curriculum(&cfg, resume.as_deref()) {
                Ok(state) => {
                    println!(
                        "training done: iterations={} stage={:?} out_dir={}",
                        state.iteration, state.stage, cfg.out_dir
                    );
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("training failed: {e}");
                    EXIT_RUNTIME
                }
            }
        }

        Command::Eval {
            checkpoint,
            scenario,
            robots,
            episodes,
            seed,
            deterministic,
            config,
            traj,
        } => {
            let state = match load_checkpoint(&checkpoint) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("checkpoint error: {e}");
                    return EXIT_RUNTIME;
                }
            };
            // An eval-side config may adjust catalog/horizon but must agree
            // with the checkpoint on the scan geometry.
            let cfg = match config {
                Some(path) => match TrainConfig::load(&path) {
                    Ok(c) => {
                        if c.lidar.n_beams != state.cfg.lidar.n_beams {
                            eprintln!(
                                "config error: {}",
                                ConfigError::BeamMismatch {
                                    expected: state.cfg.lidar.n_beams,
                                    got: c.lidar.n_beams
                                }
                            );
                            return EXIT_CONFIG;
                        }
                        c
                    }
                    Err(e) => {
                        eprintln!("config error: {e}");
                        return EXIT_CONFIG;
                    }
                },
                None => state.cfg.clone(),
            };
            let id = match ScenarioId::parse(&scenario) {
                Ok(id) => id,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let catalog = match cfg.catalog() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let n_robots = robots.unwrap_or_else(|| catalog.default_robots(id));
            let spec = catalog.spec(id, n_robots, cfg.sim.robot_radius, cfg.sim.dt);
            let seed = seed.unwrap_or(cfg.master_seed.wrapping_add(1));
            let policy = EvalPolicy::Learned {
                policy: &state.policy,
                net: &state.net,
                normalizer: &state.normalizer,
                deterministic,
            };
            let (summary, _) = match evaluate_policy(
                &spec,
                &policy,
                episodes,
                seed,
                &cfg.lidar,
                &cfg.reward,
                cfg.sim.horizon,
            ) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("evaluation failed: {e}");
                    return EXIT_RUNTIME;
                }
            };
            println!("{}", summary.summary_line(id.as_str()));

            if let Some(traj_path) = traj {
                let mut rng = derive_stream(seed, STREAM_EVAL_BASE);
                let episode = run_episode(
                    &spec,
                    seed,
                    &policy,
                    &cfg.lidar,
                    &cfg.reward,
                    cfg.sim.horizon,
                    &mut rng,
                    true,
                );
                let result = episode.and_then(|(_, log)| {
                    export_trajectories(&log, &traj_path)?;
                    save_meta(
                        &TrajectoryMeta {
                            spec: spec.clone(),
                            world_seed: seed,
                            horizon: cfg.sim.horizon,
                            reward: cfg.reward,
                        },
                        &traj_path,
                    )
                });
                if let Err(e) = result {
                    eprintln!("trajectory export failed: {e}");
                    return EXIT_RUNTIME;
                }
                println!("trajectory written to {}", traj_path.display());
            }
            EXIT_OK
        }

        Command::Replay { traj } => {
            let log = match parse_trajectories(&traj) {
                Ok(l) => l,
                Err(e) => {
                    eprintln!("trajectory parse failed: {e}");
                    return EXIT_RUNTIME;
                }
            };
            let meta = match load_meta(&traj) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("meta load failed: {e}");
                    return EXIT_RUNTIME;
                }
            };
            match replay_trajectory(&meta, &log) {
                Ok(()) => {
                    println!("replay OK: bit-exact ({} records)", log.records.len());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("replay mismatch: {e}");
                    EXIT_VALIDATION
                }
            }
        }

        Command::Serve { checkpoint, addr } => match crate::server::serve(&checkpoint, &addr) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("server failed: {e}");
                EXIT_RUNTIME
            }
        },
    }
}
