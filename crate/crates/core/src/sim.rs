//! Deterministic 2D world: differential-drive kinematics, disc robots,
//! segment obstacles, collision detection, and lidar raycasting.
//!
//! A [`World`] is a plain value; every operation here is state-in/state-out
//! and bitwise deterministic, which is what the replay and resume machinery
//! upstream rely on.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::SimError;

/// Wrap an angle into [-pi, pi]. Angles already in range pass through
/// unchanged (bit-exact), which keeps `w = 0` heading-preserving.
pub fn wrap_angle(mut a: f64) -> f64 {
    while a > PI {
        a -= 2.0 * PI;
    }
    while a < -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, wrapped to [-pi, pi].
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// First-order Euler step of the unicycle model.
pub fn step_kinematics(pose: &Pose, v: f64, w: f64, dt: f64) -> Pose {
    debug_assert!(dt > 0.0);
    Pose {
        x: pose.x + v * pose.theta.cos() * dt,
        y: pose.y + v * pose.theta.sin() * dt,
        theta: wrap_angle(pose.theta + w * dt),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotStatus {
    Active,
    Arrived,
    Collided,
    TimedOut,
}

impl RobotStatus {
    pub fn is_active(self) -> bool {
        self == RobotStatus::Active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    /// Translational velocity applied on the last step, m/s (never negative).
    pub v: f64,
    /// Rotational velocity applied on the last step, rad/s.
    pub w: f64,
    pub radius: f64,
    pub goal: [f64; 2],
    pub status: RobotStatus,
}

impl RobotState {
    pub fn new(pose: Pose, radius: f64, goal: [f64; 2]) -> Self {
        RobotState {
            pose,
            v: 0.0,
            w: 0.0,
            radius,
            goal,
            status: RobotStatus::Active,
        }
    }

    /// Euclidean distance from the robot center to its goal.
    pub fn goal_distance(&self) -> f64 {
        let dx = self.goal[0] - self.pose.x;
        let dy = self.goal[1] - self.pose.y;
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl ObstacleSegment {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        debug_assert!(a != b, "degenerate obstacle segment");
        ObstacleSegment { a, b }
    }

    /// Distance from a point to this segment.
    pub fn distance_to_point(&self, p: [f64; 2]) -> f64 {
        let ab = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let ap = [p[0] - self.a[0], p[1] - self.a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len2 > 0.0 {
            ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let cx = self.a[0] + t * ab[0] - p[0];
        let cy = self.a[1] + t * ab[1] - p[1];
        (cx * cx + cy * cy).sqrt()
    }
}

/// Axis-aligned rectangle, `min` is the lower-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        debug_assert!(min[0] < max[0] && min[1] < max[1]);
        Bounds { min, max }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    pub n_beams: usize,
    /// Field of view in radians, centered on the robot heading.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            n_beams: 512,
            fov: PI,
            max_range: 4.0,
        }
    }
}

impl LidarSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_beams < 2 {
            return Err(SimError::InvalidSpec("lidar needs at least 2 beams".into()));
        }
        if !(self.fov > 0.0 && self.fov <= 2.0 * PI) {
            return Err(SimError::InvalidSpec("lidar fov must be in (0, 2*pi]".into()));
        }
        if self.max_range <= 0.0 {
            return Err(SimError::InvalidSpec("lidar max_range must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub robots: Vec<RobotState>,
    pub obstacles: Vec<ObstacleSegment>,
    pub dt: f64,
    pub tick: u64,
    pub bounds: Bounds,
}

impl World {
    pub fn new(
        robots: Vec<RobotState>,
        obstacles: Vec<ObstacleSegment>,
        dt: f64,
        bounds: Bounds,
    ) -> Result<Self, SimError> {
        if dt <= 0.0 {
            return Err(SimError::InvalidSpec("dt must be > 0".into()));
        }
        for (i, r) in robots.iter().enumerate() {
            if r.radius <= 0.0 {
                return Err(SimError::InvalidSpec(format!("robot {i} radius must be > 0")));
            }
            if !bounds.contains(r.pose.position()) {
                return Err(SimError::InvalidSpec(format!(
                    "robot {i} starts outside world bounds"
                )));
            }
        }
        Ok(World {
            robots,
            obstacles,
            dt,
            tick: 0,
            bounds,
        })
    }
}

const RAY_EPS: f64 = 1e-12;

/// Distance along a unit-direction ray to a segment, if it hits.
fn ray_segment(origin: [f64; 2], dir: [f64; 2], seg: &ObstacleSegment) -> Option<f64> {
    let s = [seg.b[0] - seg.a[0], seg.b[1] - seg.a[1]];
    let denom = dir[0] * s[1] - dir[1] * s[0];
    if denom.abs() < RAY_EPS {
        // Parallel (collinear overlap intentionally reports no hit).
        return None;
    }
    let ao = [seg.a[0] - origin[0], seg.a[1] - origin[1]];
    let t = (ao[0] * s[1] - ao[1] * s[0]) / denom;
    let u = (ao[0] * dir[1] - ao[1] * dir[0]) / denom;
    if t > RAY_EPS && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Distance along a unit-direction ray to a disc boundary, if it hits.
/// A ray starting inside the disc reports the exit distance.
fn ray_disc(origin: [f64; 2], dir: [f64; 2], center: [f64; 2], radius: f64) -> Option<f64> {
    let oc = [origin[0] - center[0], origin[1] - center[1]];
    let b = dir[0] * oc[0] + dir[1] * oc[1];
    let c = oc[0] * oc[0] + oc[1] * oc[1] - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t1 = -b - sq;
    let t2 = -b + sq;
    if t1 > RAY_EPS {
        Some(t1)
    } else if t2 > RAY_EPS {
        Some(t2)
    } else {
        None
    }
}

/// Cast a full lidar scan for one robot. Beam `i` points at
/// `theta - fov/2 + i * fov/(n_beams - 1)`; other robots are sensed as
/// discs. Distances are clamped to `max_range`, misses return it exactly.
pub fn cast_scan(world: &World, robot_index: usize, spec: &LidarSpec) -> Vec<f64> {
    let robot = &world.robots[robot_index];
    let origin = robot.pose.position();
    let start = robot.pose.theta - spec.fov / 2.0;
    let step = spec.fov / (spec.n_beams as f64 - 1.0);

    let mut out = Vec::with_capacity(spec.n_beams);
    for i in 0..spec.n_beams {
        let angle = start + i as f64 * step;
        let dir = [angle.cos(), angle.sin()];
        let mut best = spec.max_range;
        for seg in &world.obstacles {
            if let Some(t) = ray_segment(origin, dir, seg) {
                if t < best {
                    best = t;
                }
            }
        }
        for (j, other) in world.robots.iter().enumerate() {
            if j == robot_index {
                continue;
            }
            if let Some(t) = ray_disc(origin, dir, other.pose.position(), other.radius) {
                if t < best {
                    best = t;
                }
            }
        }
        out.push(best);
    }
    out
}

/// Per-robot collision flags: disc overlap with another robot or a segment
/// closer than the robot radius. Touching exactly is not a collision.
pub fn detect_collisions(world: &World) -> Vec<bool> {
    let n = world.robots.len();
    let mut hit = vec![false; n];
    for i in 0..n {
        let ri = &world.robots[i];
        for j in (i + 1)..n {
            let rj = &world.robots[j];
            let dx = ri.pose.x - rj.pose.x;
            let dy = ri.pose.y - rj.pose.y;
            let d2 = dx * dx + dy * dy;
            let lim = ri.radius + rj.radius;
            if d2 < lim * lim {
                hit[i] = true;
                hit[j] = true;
            }
        }
        for seg in &world.obstacles {
            if seg.distance_to_point(ri.pose.position()) < ri.radius {
                hit[i] = true;
                break;
            }
        }
    }
    hit
}

/// Advance the world one tick with synchronous barrier semantics: every
/// action is evaluated against the frozen tick-t state, then all poses
/// update together. Non-active robots are frozen regardless of their action.
pub fn world_step(world: &World, actions: &[[f64; 2]]) -> Result<World, SimError> {
    if actions.len() != world.robots.len() {
        return Err(SimError::ActionCountMismatch {
            expected: world.robots.len(),
            got: actions.len(),
        });
    }
    let mut next = world.clone();
    for (robot, action) in next.robots.iter_mut().zip(actions) {
        if !robot.status.is_active() {
            continue;
        }
        let v = action[0].clamp(0.0, 1.0);
        let w = action[1].clamp(-1.0, 1.0);
        robot.pose = step_kinematics(&robot.pose, v, w, world.dt);
        robot.v = v;
        robot.w = w;
    }
    next.tick = world.tick + 1;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_world(robots: Vec<RobotState>) -> World {
        World::new(
            robots,
            vec![],
            0.1,
            Bounds::new([-50.0, -50.0], [50.0, 50.0]),
        )
        .unwrap()
    }

    fn robot_at(x: f64, y: f64, theta: f64) -> RobotState {
        RobotState::new(Pose::new(x, y, theta), 0.12, [10.0, 10.0])
    }

    #[test]
    fn kinematics_straight_line() {
        let p = step_kinematics(&Pose::new(0.0, 0.0, 0.0), 1.0, 0.0, 0.1);
        assert!((p.x - 0.1).abs() < 1e-12);
        assert_eq!(p.y, 0.0);
        assert_eq!(p.theta, 0.0);
    }

    #[test]
    fn kinematics_heading_alignment() {
        let p = step_kinematics(&Pose::new(0.0, 0.0, PI / 2.0), 1.0, 0.0, 0.1);
        assert!(p.x.abs() < 1e-12);
        assert!((p.y - 0.1).abs() < 1e-12);
        assert_eq!(p.theta, PI / 2.0);
    }

    #[test]
    fn kinematics_pure_rotation() {
        let p = step_kinematics(&Pose::new(0.0, 0.0, 0.0), 0.0, 1.0, 0.1);
        assert_eq!(p.x, 0.0);
        assert_eq!(p.y, 0.0);
        assert!((p.theta - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_speed_preserves_position_exactly() {
        let pose = Pose::new(1.2345678901234, -9.87654321, 0.777);
        let p = step_kinematics(&pose, 0.0, 0.3, 0.1);
        assert_eq!(p.x, pose.x);
        assert_eq!(p.y, pose.y);
    }

    #[test]
    fn zero_turn_preserves_heading_exactly() {
        let pose = Pose::new(0.0, 0.0, 1.234567890123);
        let p = step_kinematics(&pose, 0.7, 0.0, 0.1);
        assert_eq!(p.theta, pose.theta);
    }

    #[test]
    fn scan_perpendicular_wall() {
        let mut w = empty_world(vec![robot_at(0.0, 0.0, 0.0)]);
        w.obstacles.push(ObstacleSegment::new([2.0, -1.0], [2.0, 1.0]));
        let spec = LidarSpec {
            n_beams: 5,
            fov: PI,
            max_range: 4.0,
        };
        let scan = cast_scan(&w, 0, &spec);
        // Center beam (index 2) points straight at the wall.
        assert!((scan[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn scan_empty_world_clamps_to_max_range() {
        let w = empty_world(vec![robot_at(0.0, 0.0, 0.3)]);
        let spec = LidarSpec::default();
        let scan = cast_scan(&w, 0, &spec);
        assert_eq!(scan.len(), 512);
        assert!(scan.iter().all(|&d| d == 4.0));
    }

    #[test]
    fn scan_misses_wall_outside_segment_extent() {
        // Beam at +45 deg crosses the wall's supporting line at y = 2,
        // outside the segment, so the beam reports max range.
        let mut w = empty_world(vec![robot_at(0.0, 0.0, 0.0)]);
        w.obstacles.push(ObstacleSegment::new([2.0, -1.0], [2.0, 1.0]));
        let spec = LidarSpec {
            n_beams: 5,
            fov: PI / 2.0,
            max_range: 4.0,
        };
        // Beams at -45, -22.5, 0, 22.5, 45 degrees.
        let scan = cast_scan(&w, 0, &spec);
        assert_eq!(scan[4], 4.0);
        assert!((scan[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn scan_sees_other_robot_as_disc() {
        let w = empty_world(vec![robot_at(0.0, 0.0, 0.0), robot_at(1.0, 0.0, 0.0)]);
        let spec = LidarSpec {
            n_beams: 3,
            fov: PI,
            max_range: 4.0,
        };
        let scan = cast_scan(&w, 0, &spec);
        assert!((scan[1] - (1.0 - 0.12)).abs() < 1e-9);
    }

    #[test]
    fn collisions_two_robots_overlapping() {
        let w = empty_world(vec![robot_at(0.0, 0.0, 0.0), robot_at(0.2, 0.0, 0.0)]);
        assert_eq!(detect_collisions(&w), vec![true, true]);
    }

    #[test]
    fn collisions_two_robots_apart() {
        let w = empty_world(vec![robot_at(0.0, 0.0, 0.0), robot_at(0.3, 0.0, 0.0)]);
        assert_eq!(detect_collisions(&w), vec![false, false]);
    }

    #[test]
    fn collisions_touching_is_not_colliding() {
        let w = empty_world(vec![robot_at(0.0, 0.0, 0.0), robot_at(0.24, 0.0, 0.0)]);
        assert_eq!(detect_collisions(&w), vec![false, false]);
    }

    #[test]
    fn collision_with_wall() {
        let mut w = empty_world(vec![robot_at(0.0, 0.0, 0.0)]);
        w.obstacles.push(ObstacleSegment::new([0.1, -1.0], [0.1, 1.0]));
        assert_eq!(detect_collisions(&w), vec![true]);
    }

    #[test]
    fn step_zero_actions_keeps_poses() {
        let w = empty_world(vec![robot_at(1.0, 2.0, 0.5), robot_at(-1.0, 0.0, -0.5)]);
        let next = world_step(&w, &[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(next.robots[0].pose, w.robots[0].pose);
        assert_eq!(next.robots[1].pose, w.robots[1].pose);
        assert_eq!(next.tick, 1);
    }

    #[test]
    fn step_freezes_non_active_robots() {
        let mut w = empty_world(vec![robot_at(0.0, 0.0, 0.0)]);
        w.robots[0].status = RobotStatus::Collided;
        let next = world_step(&w, &[[1.0, 0.5]]).unwrap();
        assert_eq!(next.robots[0].pose, w.robots[0].pose);
    }

    #[test]
    fn step_action_count_mismatch_is_error() {
        let w = empty_world(vec![robot_at(0.0, 0.0, 0.0)]);
        assert!(matches!(
            world_step(&w, &[]),
            Err(SimError::ActionCountMismatch { .. })
        ));
    }

    #[test]
    fn step_is_order_independent() {
        let robots = vec![
            robot_at(0.0, 0.0, 0.1),
            robot_at(1.0, 1.0, -0.4),
            robot_at(-2.0, 0.5, 2.0),
        ];
        let actions = [[0.8, 0.2], [0.3, -0.9], [1.0, 0.0]];
        let w = empty_world(robots.clone());
        let fwd = world_step(&w, &actions).unwrap();

        let perm = [2usize, 0, 1];
        let w2 = empty_world(perm.iter().map(|&i| robots[i].clone()).collect());
        let actions2: Vec<[f64; 2]> = perm.iter().map(|&i| actions[i]).collect();
        let back = world_step(&w2, &actions2).unwrap();
        for (slot, &orig) in perm.iter().enumerate() {
            assert_eq!(back.robots[slot].pose, fwd.robots[orig].pose);
        }
    }

    #[test]
    fn step_is_bitwise_deterministic() {
        let w = empty_world(vec![robot_at(0.3, -0.7, 1.1), robot_at(2.0, 2.0, -2.2)]);
        let actions = [[0.6, 0.4], [0.9, -0.8]];
        let a = world_step(&w, &actions).unwrap();
        let b = world_step(&w, &actions).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrap_angle_identity_in_range() {
        for &a in &[0.0, 1.0, -1.0, PI, -PI + 1e-9] {
            assert_eq!(wrap_angle(a), a);
        }
        assert!((wrap_angle(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI) - (-PI)).abs() < 1e-9);
    }
}
