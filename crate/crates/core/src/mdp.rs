//! Everything between simulator and learner: observation assembly and
//! normalization, reward computation, and episode termination.

use serde::{Deserialize, Serialize};

use crate::sim::{wrap_angle, RobotState, World};

/// Number of stacked scan frames in an observation.
pub const SCAN_FRAMES: usize = 3;

/// What the policy sees for one robot at one tick: the last three lidar
/// frames (newest last), the goal in robot-frame polar coordinates, and the
/// current velocity command.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `SCAN_FRAMES` frames of `n_beams` distances each, oldest first.
    pub scan_stack: Vec<Vec<f64>>,
    /// (distance in meters, bearing in radians wrapped to [-pi, pi]).
    pub goal_polar: [f64; 2],
    /// (v, w) applied on the previous tick.
    pub velocity: [f64; 2],
}

impl Observation {
    pub fn n_beams(&self) -> usize {
        self.scan_stack[0].len()
    }

    /// Total flattened dimension: 3*B + 4.
    pub fn dim(&self) -> usize {
        SCAN_FRAMES * self.n_beams() + 4
    }

    /// Flatten to `[frame0.., frame1.., frame2.., d, angle, v, w]`.
    pub fn flatten_into(&self, out: &mut [f64]) {
        let b = self.n_beams();
        debug_assert_eq!(out.len(), self.dim());
        for (f, frame) in self.scan_stack.iter().enumerate() {
            out[f * b..(f + 1) * b].copy_from_slice(frame);
        }
        out[3 * b] = self.goal_polar[0];
        out[3 * b + 1] = self.goal_polar[1];
        out[3 * b + 2] = self.velocity[0];
        out[3 * b + 3] = self.velocity[1];
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.flatten_into(&mut v);
        v
    }

    /// Rebuild from a flat vector (used by the inference service).
    pub fn from_flat(flat: &[f64], n_beams: usize) -> Self {
        debug_assert_eq!(flat.len(), SCAN_FRAMES * n_beams + 4);
        let scan_stack = (0..SCAN_FRAMES)
            .map(|f| flat[f * n_beams..(f + 1) * n_beams].to_vec())
            .collect();
        Observation {
            scan_stack,
            goal_polar: [flat[3 * n_beams], flat[3 * n_beams + 1]],
            velocity: [flat[3 * n_beams + 2], flat[3 * n_beams + 3]],
        }
    }
}

/// Ring of the most recent scans for one robot episode. Fresh episodes
/// replicate their first scan to fill all three slots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanHistory {
    frames: Vec<Vec<f64>>,
}

impl ScanHistory {
    pub fn new() -> Self {
        ScanHistory { frames: Vec::new() }
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn push(&mut self, scan: Vec<f64>) {
        if self.frames.len() == SCAN_FRAMES {
            self.frames.remove(0);
        }
        self.frames.push(scan);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The stacked frames, oldest first, padded by replicating the oldest
    /// available frame. Panics if no scan has been pushed yet.
    pub fn stacked(&self) -> Vec<Vec<f64>> {
        assert!(!self.frames.is_empty(), "scan history is empty");
        let mut stack = Vec::with_capacity(SCAN_FRAMES);
        for i in 0..SCAN_FRAMES {
            let idx = (self.frames.len() + i).saturating_sub(SCAN_FRAMES);
            let idx = idx.min(self.frames.len() - 1);
            stack.push(self.frames[idx].clone());
        }
        stack
    }
}

/// Build the observation for one robot from the current world state and its
/// scan history.
pub fn assemble_observation(world: &World, robot_index: usize, history: &ScanHistory) -> Observation {
    let robot = &world.robots[robot_index];
    let dx = robot.goal[0] - robot.pose.x;
    let dy = robot.goal[1] - robot.pose.y;
    let dist = (dx * dx + dy * dy).sqrt();
    let angle = wrap_angle(dy.atan2(dx) - robot.pose.theta);
    Observation {
        scan_stack: history.stacked(),
        goal_polar: [dist, angle],
        velocity: [robot.v, robot.w],
    }
}

/// Streaming per-dimension mean/variance (Welford). One shared store covers
/// every observation dimension; `count` is the number of observation vectors
/// seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

/// Values are clamped to this band after normalization.
pub const NORM_CLAMP: f64 = 5.0;
const STD_FLOOR: f64 = 1e-8;

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        RunningNormalizer {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fold one observation vector into the statistics.
    pub fn update_vec(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for (i, &xi) in x.iter().enumerate() {
            let delta = xi - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (xi - self.mean[i]);
        }
    }

    /// Fold a batch of observation vectors, in order.
    pub fn update_batch<'a, I: IntoIterator<Item = &'a [f64]>>(&mut self, batch: I) {
        for x in batch {
            self.update_vec(x);
        }
    }

    /// Merge another accumulator into this one (Chan's parallel update).
    /// Used to fold per-world accumulators together in a fixed order.
    pub fn merge(&mut self, other: &RunningNormalizer) {
        debug_assert_eq!(self.dim(), other.dim());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    /// Population standard deviation per dimension.
    pub fn std(&self, i: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2[i] / self.count as f64).max(0.0).sqrt()
        }
    }

    /// Normalize in place: `(x - mean)/max(std, 1e-8)` clamped to ±5.
    /// With no data yet this falls back to the identity transform.
    pub fn apply_slice(&self, x: &mut [f64]) {
        if self.count == 0 {
            return;
        }
        debug_assert_eq!(x.len(), self.dim());
        for (i, xi) in x.iter_mut().enumerate() {
            let std = self.std(i).max(STD_FLOOR);
            *xi = ((*xi - self.mean[i]) / std).clamp(-NORM_CLAMP, NORM_CLAMP);
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.apply_slice(&mut out);
        out
    }
}

/// Reward constants and thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub r_arrival: f64,
    pub omega_g: f64,
    pub r_collision: f64,
    pub omega_w: f64,
    /// Goal distance below which the robot has arrived, meters.
    pub arrival_threshold: f64,
    /// |w| above which the spin penalty applies, rad/s.
    pub w_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            r_arrival: 15.0,
            omega_g: 2.5,
            r_collision: -15.0,
            omega_w: -0.1,
            arrival_threshold: 0.1,
            w_threshold: 0.7,
        }
    }
}

/// Terminal episode events. `None` means the episode continues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    None,
    Arrival,
    Collision,
    Timeout,
}

impl Event {
    pub fn is_terminal(self) -> bool {
        self != Event::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Event::None => "none",
            Event::Arrival => "arrival",
            Event::Collision => "collision",
            Event::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Event> {
        match s {
            "none" => Some(Event::None),
            "arrival" => Some(Event::Arrival),
            "collision" => Some(Event::Collision),
            "timeout" => Some(Event::Timeout),
            _ => None,
        }
    }
}

/// Reward and event for one robot over one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
    pub event: Event,
    /// Goal, collision, and spin components (reward is their sum).
    pub components: [f64; 3],
}

/// One tick of reward: the arrival/progress term, the collision penalty, and
/// the spin penalty. Collision takes precedence over arrival in the reported
/// event.
pub fn compute_reward(
    prev: &RobotState,
    curr: &RobotState,
    collided: bool,
    cfg: &RewardConfig,
) -> StepOutcome {
    let d_prev = distance(prev.pose.position(), curr.goal);
    let d_curr = distance(curr.pose.position(), curr.goal);
    let arrived = d_curr < cfg.arrival_threshold;

    let gr = if arrived {
        cfg.r_arrival
    } else {
        cfg.omega_g * (d_prev - d_curr)
    };
    let cr = if collided { cfg.r_collision } else { 0.0 };
    let wr = if curr.w.abs() > cfg.w_threshold {
        cfg.omega_w * curr.w.abs()
    } else {
        0.0
    };

    let event = if collided {
        Event::Collision
    } else if arrived {
        Event::Arrival
    } else {
        Event::None
    };

    StepOutcome {
        reward: gr + cr + wr,
        terminal: event.is_terminal(),
        event,
        components: [gr, cr, wr],
    }
}

/// Terminal event for a robot after a step, with precedence
/// Collision > Arrival > Timeout.
pub fn check_termination(
    robot: &RobotState,
    collided: bool,
    tick_in_episode: u64,
    horizon: u64,
    arrival_threshold: f64,
) -> Event {
    if collided {
        Event::Collision
    } else if robot.goal_distance() < arrival_threshold {
        Event::Arrival
    } else if tick_in_episode >= horizon {
        Event::Timeout
    } else {
        Event::None
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}
