//! Deterministic 2-D multi-goal tasks with a sparse binary reward.
//!
//! All three tasks live in the workspace `[-1, 1]^2`, take 2-D actions in
//! `[-1, 1]^2` (clipped componentwise) and run fixed-length episodes.
//!
//! - `point-reach`: a point mass with acceleration control; the goal is a
//!   target position for the point.
//! - `point-push`: the same point mass plus a box that only moves when the
//!   point touches it; the goal is a target position for the box.
//! - `point-slide`: a velocity-commanded point confined to `x <= 0` and a
//!   box that keeps sliding with decaying velocity after being hit; goals
//!   lie in `x in [0.2, 0.9]`, so the box has to be struck, not carried.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};

use crate::error::{check_dim, Error, Result};
use crate::SeededRng;

pub const WORKSPACE: f64 = 1.0;
pub const DEFAULT_EPISODE_LENGTH: usize = 50;
pub const DEFAULT_SUCCESS_TOLERANCE: f64 = 0.05;

/// Acceleration gain of the point mass in reach and push.
pub const ACCEL_GAIN: f64 = 0.05;
/// Per-step speed limit of the point mass in reach and push.
pub const MAX_SPEED: f64 = 0.2;
/// Contact radius between the point and the box.
pub const CONTACT_RADIUS: f64 = 0.1;
pub const REACH_GOAL_RANGE: f64 = 0.8;
pub const PUSH_BOX_RANGE: f64 = 0.3;
pub const PUSH_GOAL_RANGE: f64 = 0.3;
/// Minimum distance between the box and the goal (and the point) at reset.
pub const MIN_BOX_SEPARATION: f64 = 0.1;
pub const SLIDE_AGENT_SPEED: f64 = 0.1;
pub const SLIDE_VELOCITY_DECAY: f64 = 0.9;
pub const SLIDE_MAX_BOX_SPEED: f64 = 0.3;
pub const SLIDE_AGENT_START: [f64; 2] = [-0.6, 0.0];

/// The `(observation, achieved_goal, desired_goal)` triple.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalObservation {
    pub observation: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub episode_length: usize,
    pub success_tolerance: f64,
}

impl EnvSpec {
    pub fn compute_reward(&self, achieved: &[f64], desired: &[f64]) -> Result<f64> {
        compute_reward(achieved, desired, self.success_tolerance)
    }

    pub fn is_success(&self, achieved: &[f64], desired: &[f64]) -> Result<bool> {
        is_success(achieved, desired, self.success_tolerance)
    }
}

/// Overridable environment parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvParams {
    pub episode_length: usize,
    pub success_tolerance: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            episode_length: DEFAULT_EPISODE_LENGTH,
            success_tolerance: DEFAULT_SUCCESS_TOLERANCE,
        }
    }
}

pub fn goal_distance(achieved: &[f64], desired: &[f64]) -> Result<f64> {
    check_dim("goal length", achieved.len(), desired.len())?;
    Ok(achieved
        .iter()
        .zip(desired)
        .map(|(a, d)| (a - d) * (a - d))
        .sum::<f64>()
        .sqrt())
}

/// Sparse reward: 0 if the goal is within `tolerance` (inclusive), else -1.
pub fn compute_reward(achieved: &[f64], desired: &[f64], tolerance: f64) -> Result<f64> {
    Ok(if goal_distance(achieved, desired)? <= tolerance {
        0.0
    } else {
        -1.0
    })
}

pub fn is_success(achieved: &[f64], desired: &[f64], tolerance: f64) -> Result<bool> {
    Ok(compute_reward(achieved, desired, tolerance)? == 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    PointReach,
    PointPush,
    PointSlide,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::PointReach, Task::PointPush, Task::PointSlide];

    pub fn name(self) -> &'static str {
        match self {
            Task::PointReach => "point-reach",
            Task::PointPush => "point-push",
            Task::PointSlide => "point-slide",
        }
    }

    pub fn spec(self, params: &EnvParams) -> EnvSpec {
        let obs_dim = match self {
            Task::PointReach => 4,
            Task::PointPush | Task::PointSlide => 6,
        };
        EnvSpec {
            obs_dim,
            action_dim: 2,
            goal_dim: 2,
            episode_length: params.episode_length,
            success_tolerance: params.success_tolerance,
        }
    }

    /// Extracts the achieved goal from an observation vector. Works on
    /// model-predicted observations as well as real ones.
    pub fn achieved_goal(self, observation: &[f64]) -> Vec<f64> {
        match self {
            Task::PointReach => observation[0..2].to_vec(),
            Task::PointPush => observation[4..6].to_vec(),
            Task::PointSlide => observation[2..4].to_vec(),
        }
    }

    /// The task's goal distribution.
    pub fn sample_goal<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        match self {
            Task::PointReach => vec![
                rng.random_range(-REACH_GOAL_RANGE..=REACH_GOAL_RANGE),
                rng.random_range(-REACH_GOAL_RANGE..=REACH_GOAL_RANGE),
            ],
            Task::PointPush => vec![
                rng.random_range(-PUSH_GOAL_RANGE..=PUSH_GOAL_RANGE),
                rng.random_range(-PUSH_GOAL_RANGE..=PUSH_GOAL_RANGE),
            ],
            Task::PointSlide => vec![rng.random_range(0.2..=0.9), rng.random_range(-0.4..=0.4)],
        }
    }

    pub fn make_env(self, params: &EnvParams) -> Box<dyn GoalEnv> {
        match self {
            Task::PointReach => Box::new(PointReach::new(params.clone())),
            Task::PointPush => Box::new(PointPush::new(params.clone())),
            Task::PointSlide => Box::new(PointSlide::new(params.clone())),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown task '{s}' (expected point-reach, point-push or point-slide)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: GoalObservation,
    pub reward: f64,
    pub done: bool,
}

/// Goal-conditioned environment interface. `step` is a deterministic
/// function of the internal state and the (clipped) action.
pub trait GoalEnv: Send {
    fn task(&self) -> Task;
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> GoalObservation;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    fn observe(&self) -> GoalObservation;

    fn compute_reward(&self, achieved: &[f64], desired: &[f64]) -> Result<f64> {
        self.spec().compute_reward(achieved, desired)
    }
}

fn clip(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

fn clipped_action(spec: &EnvSpec, action: &[f64]) -> Result<[f64; 2]> {
    check_dim("action length", spec.action_dim, action.len())?;
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("action contains non-finite values".into()));
    }
    Ok([clip(action[0], 1.0), clip(action[1], 1.0)])
}

/// Point-mass update shared by reach and push:
/// `v' = clip(v + 0.05 a, 0.2)`, `p' = clip(p + v', 1)`.
fn integrate_point(pos: &mut [f64; 2], vel: &mut [f64; 2], action: [f64; 2]) {
    for i in 0..2 {
        vel[i] = clip(vel[i] + ACCEL_GAIN * action[i], MAX_SPEED);
        pos[i] = clip(pos[i] + vel[i], WORKSPACE);
    }
}

/// If the point is inside the contact radius of the box, moves the box
/// onto the radius along the line from the point. Returns the unit push
/// direction when contact happened.
pub fn resolve_contact(point: [f64; 2], point_vel: [f64; 2], box_pos: &mut [f64; 2]) -> Option<[f64; 2]> {
    let d = [box_pos[0] - point[0], box_pos[1] - point[1]];
    let dist = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if dist >= CONTACT_RADIUS {
        return None;
    }
    let dir = if dist > 1e-12 {
        [d[0] / dist, d[1] / dist]
    } else {
        let speed = (point_vel[0] * point_vel[0] + point_vel[1] * point_vel[1]).sqrt();
        if speed > 1e-12 {
            [point_vel[0] / speed, point_vel[1] / speed]
        } else {
            [1.0, 0.0]
        }
    };
    box_pos[0] = point[0] + CONTACT_RADIUS * dir[0];
    box_pos[1] = point[1] + CONTACT_RADIUS * dir[1];
    Some(dir)
}

#[derive(Clone, Debug)]
pub struct PointReach {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    t: usize,
}

impl PointReach {
    pub fn new(params: EnvParams) -> Self {
        PointReach {
            spec: Task::PointReach.spec(&params),
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            t: 0,
        }
    }

    /// Places the point directly; used by tests and scripted checks.
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
        self.t = 0;
    }
}

impl GoalEnv for PointReach {
    fn task(&self) -> Task {
        Task::PointReach
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> GoalObservation {
        let mut rng = SeededRng::seed_from_u64(seed);
        let g = Task::PointReach.sample_goal(&mut rng);
        self.set_state([0.0; 2], [0.0; 2], [g[0], g[1]]);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clipped_action(&self.spec, action)?;
        integrate_point(&mut self.pos, &mut self.vel, a);
        self.t += 1;
        let observation = self.observe();
        let reward = self.compute_reward(&observation.achieved_goal, &observation.desired_goal)?;
        Ok(StepResult {
            observation,
            reward,
            done: self.t >= self.spec.episode_length,
        })
    }

    fn observe(&self) -> GoalObservation {
        GoalObservation {
            observation: vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]],
            achieved_goal: self.pos.to_vec(),
            desired_goal: self.goal.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointPush {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    box_pos: [f64; 2],
    goal: [f64; 2],
    t: usize,
}

impl PointPush {
    pub fn new(params: EnvParams) -> Self {
        PointPush {
            spec: Task::PointPush.spec(&params),
            pos: [0.0; 2],
            vel: [0.0; 2],
            box_pos: [0.5, 0.0],
            goal: [0.0; 2],
            t: 0,
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], box_pos: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.box_pos = box_pos;
        self.goal = goal;
        self.t = 0;
    }

    pub fn box_position(&self) -> [f64; 2] {
        self.box_pos
    }
}

impl GoalEnv for PointPush {
    fn task(&self) -> Task {
        Task::PointPush
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> GoalObservation {
        let mut rng = SeededRng::seed_from_u64(seed);
        let g = Task::PointPush.sample_goal(&mut rng);
        let box_pos = loop {
            let b = [
                rng.random_range(-PUSH_BOX_RANGE..=PUSH_BOX_RANGE),
                rng.random_range(-PUSH_BOX_RANGE..=PUSH_BOX_RANGE),
            ];
            let from_goal = ((b[0] - g[0]).powi(2) + (b[1] - g[1]).powi(2)).sqrt();
            let from_point = (b[0] * b[0] + b[1] * b[1]).sqrt();
            if from_goal >= MIN_BOX_SEPARATION && from_point >= CONTACT_RADIUS + MIN_BOX_SEPARATION {
                break b;
            }
        };
        self.set_state([0.0; 2], [0.0; 2], box_pos, [g[0], g[1]]);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clipped_action(&self.spec, action)?;
        integrate_point(&mut self.pos, &mut self.vel, a);
        if resolve_contact(self.pos, self.vel, &mut self.box_pos).is_some() {
            self.box_pos = [clip(self.box_pos[0], WORKSPACE), clip(self.box_pos[1], WORKSPACE)];
        }
        self.t += 1;
        let observation = self.observe();
        let reward = self.compute_reward(&observation.achieved_goal, &observation.desired_goal)?;
        Ok(StepResult {
            observation,
            reward,
            done: self.t >= self.spec.episode_length,
        })
    }

    fn observe(&self) -> GoalObservation {
        GoalObservation {
            observation: vec![
                self.pos[0],
                self.pos[1],
                self.vel[0],
                self.vel[1],
                self.box_pos[0],
                self.box_pos[1],
            ],
            achieved_goal: self.box_pos.to_vec(),
            desired_goal: self.goal.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointSlide {
    spec: EnvSpec,
    pos: [f64; 2],
    box_pos: [f64; 2],
    box_vel: [f64; 2],
    goal: [f64; 2],
    t: usize,
}

impl PointSlide {
    pub fn new(params: EnvParams) -> Self {
        PointSlide {
            spec: Task::PointSlide.spec(&params),
            pos: SLIDE_AGENT_START,
            box_pos: [-0.3, 0.0],
            box_vel: [0.0; 2],
            goal: [0.5, 0.0],
            t: 0,
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], box_pos: [f64; 2], box_vel: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.box_pos = box_pos;
        self.box_vel = box_vel;
        self.goal = goal;
        self.t = 0;
    }
}

impl GoalEnv for PointSlide {
    fn task(&self) -> Task {
        Task::PointSlide
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> GoalObservation {
        let mut rng = SeededRng::seed_from_u64(seed);
        let g = Task::PointSlide.sample_goal(&mut rng);
        let box_pos = [rng.random_range(-0.35..=-0.2), rng.random_range(-0.2..=0.2)];
        self.set_state(SLIDE_AGENT_START, box_pos, [0.0; 2], [g[0], g[1]]);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clipped_action(&self.spec, action)?;
        let prev = self.pos;
        self.pos = [
            (self.pos[0] + SLIDE_AGENT_SPEED * a[0]).clamp(-WORKSPACE, 0.0),
            clip(self.pos[1] + SLIDE_AGENT_SPEED * a[1], WORKSPACE),
        ];
        let moved = [self.pos[0] - prev[0], self.pos[1] - prev[1]];
        if let Some(dir) = resolve_contact(self.pos, moved, &mut self.box_pos) {
            let along = (moved[0] * dir[0] + moved[1] * dir[1]).max(0.0);
            self.box_vel[0] += along * dir[0];
            self.box_vel[1] += along * dir[1];
            let speed = (self.box_vel[0].powi(2) + self.box_vel[1].powi(2)).sqrt();
            if speed > SLIDE_MAX_BOX_SPEED {
                let s = SLIDE_MAX_BOX_SPEED / speed;
                self.box_vel = [self.box_vel[0] * s, self.box_vel[1] * s];
            }
        }
        for i in 0..2 {
            self.box_pos[i] += self.box_vel[i];
            if self.box_pos[i].abs() > WORKSPACE {
                self.box_pos[i] = clip(self.box_pos[i], WORKSPACE);
                self.box_vel[i] = 0.0;
            }
            self.box_vel[i] *= SLIDE_VELOCITY_DECAY;
        }
        self.t += 1;
        let observation = self.observe();
        let reward = self.compute_reward(&observation.achieved_goal, &observation.desired_goal)?;
        Ok(StepResult {
            observation,
            reward,
            done: self.t >= self.spec.episode_length,
        })
    }

    fn observe(&self) -> GoalObservation {
        GoalObservation {
            observation: vec![
                self.pos[0],
                self.pos[1],
                self.box_pos[0],
                self.box_pos[1],
                self.box_vel[0],
                self.box_vel[1],
            ],
            achieved_goal: self.box_pos.to_vec(),
            desired_goal: self.goal.to_vec(),
        }
    }
}

/// Proportional-derivative controller that drives the reach point to its
/// goal. Serves as a scripted reference policy.
pub fn reach_controller(obs: &GoalObservation) -> Vec<f64> {
    let p = &obs.observation[0..2];
    let v = &obs.observation[2..4];
    let g = &obs.desired_goal;
    (0..2)
        .map(|i| clip(4.0 * (g[i] - p[i]) - 12.0 * v[i], 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> EnvParams {
        EnvParams::default()
    }

    #[test]
    fn reward_cases() {
        assert_eq!(compute_reward(&[0.3, 0.3], &[0.3, 0.3], 0.05).unwrap(), 0.0);
        assert_eq!(compute_reward(&[0.0, 0.0], &[0.2, 0.0], 0.05).unwrap(), -1.0);
        assert_eq!(compute_reward(&[0.0, 0.0], &[0.03, 0.0], 0.05).unwrap(), 0.0);
        assert!(compute_reward(&[0.0], &[0.0, 0.0], 0.05).is_err());
    }

    #[test]
    fn success_boundary_is_inclusive() {
        assert!(is_success(&[0.0, 0.0], &[0.0, 0.0], 0.05).unwrap());
        assert!(is_success(&[0.0, 0.0], &[0.05, 0.0], 0.05).unwrap());
        assert!(!is_success(&[0.0, 0.0], &[0.0500001, 0.0], 0.05).unwrap());
    }

    #[test]
    fn reach_reset_starts_at_rest() {
        let mut env = PointReach::new(params());
        for seed in 0..200 {
            let obs = env.reset(seed);
            assert_eq!(obs.observation, vec![0.0; 4]);
            assert!(obs.desired_goal.iter().all(|g| g.abs() <= REACH_GOAL_RANGE));
        }
    }

    #[test]
    fn equal_seeds_give_equal_resets() {
        for task in Task::ALL {
            let mut a = task.make_env(&params());
            let mut b = task.make_env(&params());
            assert_eq!(a.reset(17), b.reset(17));
            assert_ne!(a.reset(17), a.reset(18));
        }
    }

    #[test]
    fn reach_zero_action_is_fixed_point() {
        let mut env = PointReach::new(params());
        env.set_state([0.2, -0.1], [0.0; 2], [0.5, 0.5]);
        let out = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(out.observation.observation, vec![0.2, -0.1, 0.0, 0.0]);
    }

    #[test]
    fn reach_dynamics_arithmetic() {
        let mut env = PointReach::new(params());
        env.set_state([0.0; 2], [0.0; 2], [0.5, 0.5]);
        let out = env.step(&[1.0, 0.0]).unwrap();
        assert_eq!(out.observation.observation, vec![0.05, 0.0, 0.05, 0.0]);
        // actions beyond the box are clipped
        let mut env2 = PointReach::new(params());
        env2.set_state([0.0; 2], [0.0; 2], [0.5, 0.5]);
        assert_eq!(env2.step(&[7.0, 0.0]).unwrap(), {
            let mut e = PointReach::new(params());
            e.set_state([0.0; 2], [0.0; 2], [0.5, 0.5]);
            e.step(&[1.0, 0.0]).unwrap()
        });
    }

    #[test]
    fn wrong_action_length_is_rejected() {
        let mut env = PointPush::new(params());
        env.reset(0);
        assert!(matches!(
            env.step(&[0.0]).unwrap_err(),
            Error::DimensionMismatch { expected: 2, actual: 1, .. }
        ));
    }

    #[test]
    fn episodes_end_exactly_at_length() {
        for task in Task::ALL {
            let mut env = task.make_env(&params());
            env.reset(3);
            for t in 1..=50 {
                let out = env.step(&[0.3, -0.4]).unwrap();
                assert_eq!(out.done, t == 50);
            }
        }
    }

    #[test]
    fn push_box_does_not_move_without_contact() {
        let mut env = PointPush::new(params());
        env.set_state([0.0; 2], [0.0; 2], [0.5, 0.5], [0.0, 0.0]);
        for _ in 0..5 {
            env.step(&[-1.0, 0.0]).unwrap();
        }
        assert_eq!(env.box_position(), [0.5, 0.5]);
    }

    #[test]
    fn push_contact_moves_box_to_radius() {
        let mut env = PointPush::new(params());
        env.set_state([0.0; 2], [0.1, 0.0], [0.2, 0.0], [0.9, 0.0]);
        let out = env.step(&[1.0, 0.0]).unwrap();
        // point moves to 0.15, box pushed to 0.25
        let o = out.observation.observation;
        assert!((o[0] - 0.15).abs() < 1e-12);
        assert!((o[4] - 0.25).abs() < 1e-12);
        assert!((o[5]).abs() < 1e-12);
    }

    #[test]
    fn slide_agent_stays_left() {
        let mut env = PointSlide::new(params());
        env.reset(4);
        for _ in 0..50 {
            let out = env.step(&[1.0, 0.2]).unwrap();
            assert!(out.observation.observation[0] <= 0.0);
        }
    }

    #[test]
    fn slide_box_keeps_moving_after_impact() {
        let mut env = PointSlide::new(params());
        env.set_state([-0.4, 0.0], [-0.25, 0.0], [0.0; 2], [0.6, 0.0]);
        let first = env.step(&[1.0, 0.0]).unwrap().observation.observation;
        assert!(first[4] > 0.0);
        let second = env.step(&[-1.0, 0.0]).unwrap().observation.observation;
        assert!(second[2] > first[2]);
        assert!(second[4] < first[4]);
        assert!((second[4] - first[4] * SLIDE_VELOCITY_DECAY).abs() < 1e-12);
    }

    #[test]
    fn achieved_goal_extraction_matches_env() {
        for task in Task::ALL {
            let mut env = task.make_env(&params());
            env.reset(11);
            let out = env.step(&[0.5, 0.5]).unwrap();
            assert_eq!(
                task.achieved_goal(&out.observation.observation),
                out.observation.achieved_goal
            );
        }
    }

    #[test]
    fn task_names_round_trip() {
        for task in Task::ALL {
            assert_eq!(task.name().parse::<Task>().unwrap(), task);
        }
        assert!("fetch-push".parse::<Task>().is_err());
    }
}
