//! Ground-truth environment: holonomic kinematics, an ORCA-driven human
//! crowd, field-of-view limited observation, and episode event detection.

pub mod orca;
mod scenario;

pub use scenario::{generate_initial_state, OrcaConfig, PersonaAssignment, RadiiConfig, ScenarioConfig};

use crate::vec2::{wrap_angle, Vec2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed-limit slack for float round-trips through textual formats.
pub const SPEED_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaKind {
    MobileRobot,
    RobotDog,
    Drone,
}

impl PersonaKind {
    pub const ALL: [PersonaKind; 3] = [PersonaKind::MobileRobot, PersonaKind::RobotDog, PersonaKind::Drone];

    pub fn label(self) -> &'static str {
        match self {
            PersonaKind::MobileRobot => "mobile robot",
            PersonaKind::RobotDog => "robot dog",
            PersonaKind::Drone => "drone",
        }
    }
}

/// Per-robot character sheet: speed preference, personal-space radius,
/// body radius, and the navigation-time budget used by the global critic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPersona {
    pub kind: PersonaKind,
    /// Preferred (and maximum commanded) speed, m/s.
    pub v_pref: f64,
    /// Socially acceptable distance to keep from humans, m.
    pub rho_pref: f64,
    /// Body radius, m.
    pub rho_r: f64,
    /// Average navigation time budget, s.
    pub t_m: f64,
}

impl RobotPersona {
    /// Stock configuration for each platform type.
    pub fn standard(kind: PersonaKind) -> Self {
        let (v_pref, rho_pref, t_m) = match kind {
            PersonaKind::MobileRobot => (1.25, 0.45, 24.0),
            PersonaKind::RobotDog => (1.0, 0.3, 30.0),
            PersonaKind::Drone => (1.5, 0.85, 20.0),
        };
        RobotPersona { kind, v_pref, rho_pref, rho_r: 0.3, t_m }
    }

    /// Social distance threshold against a human of radius `rho_h`.
    pub fn social_distance(&self, rho_h: f64) -> f64 {
        self.rho_pref + self.rho_r + rho_h
    }

    /// Collision distance against a human of radius `rho_h`.
    pub fn collision_distance(&self, rho_h: f64) -> f64 {
        self.rho_r + rho_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotStatus {
    Active,
    Arrived,
    Collided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: usize,
    pub persona: RobotPersona,
    pub p: Vec2,
    pub v: Vec2,
    pub g: Vec2,
    /// Direction of the last nonzero commanded velocity, radians.
    pub heading: f64,
    pub status: RobotStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub id: usize,
    pub p: Vec2,
    pub v: Vec2,
    /// Hidden from robots: never exposed through observations.
    pub g: Vec2,
    pub rho_h: f64,
    pub v_pref_h: f64,
}

/// Ground-truth joint state of one episode tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub step_index: u64,
    pub robots: Vec<RobotState>,
    pub humans: Vec<HumanState>,
    pub rng_seed: u64,
}

impl SimState {
    pub fn active_robot_ids(&self) -> Vec<usize> {
        self.robots
            .iter()
            .filter(|r| r.status == RobotStatus::Active)
            .map(|r| r.id)
            .collect()
    }
}

/// What one robot can see: itself, plus every entity inside its field of
/// view as (id, position, velocity). Human goals and policy parameters are
/// deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalObservation {
    pub observer_id: usize,
    pub self_state: RobotState,
    pub visible_humans: Vec<(usize, Vec2, Vec2)>,
    pub visible_robots: Vec<(usize, Vec2, Vec2)>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventKind {
    Arrival { robot_id: usize },
    RobotHumanCollision { robot_id: usize, human_id: usize },
    RobotRobotCollision { robot_a: usize, robot_b: usize },
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEvent {
    #[serde(flatten)]
    pub kind: EventKind,
    pub t: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("joint action count {got} does not match {expected} active robots")]
    ActionCountMismatch { expected: usize, got: usize },
    #[error("human velocity count {got} does not match {expected} humans")]
    HumanVelocityCountMismatch { expected: usize, got: usize },
    #[error("action for robot {robot_id} has magnitude {magnitude:.4} above v_pref {v_pref:.4}")]
    ActionExceedsSpeedLimit { robot_id: usize, magnitude: f64, v_pref: f64 },
    #[error("action for robot {robot_id} has non-finite components")]
    NonFiniteAction { robot_id: usize },
}

/// Advance the world by one tick.
///
/// `joint_actions` carries one velocity command per Active robot, in
/// ascending robot-id order; `human_velocities` one per human. Every moving
/// entity follows uniform kinematics `p' = p + v * dt`; events are detected
/// on the post-step state and terminal robots are frozen in place.
pub fn step(
    state: &SimState,
    cfg: &ScenarioConfig,
    joint_actions: &[Vec2],
    human_velocities: &[Vec2],
) -> Result<(SimState, Vec<EpisodeEvent>), SimError> {
    let active: Vec<usize> = state.active_robot_ids();
    if joint_actions.len() != active.len() {
        return Err(SimError::ActionCountMismatch { expected: active.len(), got: joint_actions.len() });
    }
    if human_velocities.len() != state.humans.len() {
        return Err(SimError::HumanVelocityCountMismatch {
            expected: state.humans.len(),
            got: human_velocities.len(),
        });
    }
    for (&id, &a) in active.iter().zip(joint_actions) {
        if !a.is_finite() {
            return Err(SimError::NonFiniteAction { robot_id: id });
        }
        let v_pref = state.robots[id].persona.v_pref;
        if a.norm() > v_pref + SPEED_TOLERANCE {
            return Err(SimError::ActionExceedsSpeedLimit { robot_id: id, magnitude: a.norm(), v_pref });
        }
    }

    let mut next = state.clone();
    next.step_index = state.step_index + 1;
    next.t = next.step_index as f64 * cfg.dt_s;

    let mut action_iter = joint_actions.iter();
    for robot in next.robots.iter_mut() {
        if robot.status != RobotStatus::Active {
            robot.v = Vec2::ZERO;
            continue;
        }
        let a = *action_iter.next().expect("length checked above");
        robot.p += a * cfg.dt_s;
        robot.v = a;
        if a.norm_sq() > 0.0 {
            robot.heading = a.angle();
        }
    }
    for (human, &v) in next.humans.iter_mut().zip(human_velocities) {
        human.p += v * cfg.dt_s;
        human.v = v;
    }

    let events = detect_events(&next, cfg);
    for event in &events {
        match event.kind {
            EventKind::Arrival { robot_id } => {
                next.robots[robot_id].status = RobotStatus::Arrived;
                next.robots[robot_id].v = Vec2::ZERO;
            }
            EventKind::RobotHumanCollision { robot_id, .. } => {
                next.robots[robot_id].status = RobotStatus::Collided;
                next.robots[robot_id].v = Vec2::ZERO;
            }
            EventKind::RobotRobotCollision { robot_a, robot_b } => {
                for id in [robot_a, robot_b] {
                    if next.robots[id].status == RobotStatus::Active {
                        next.robots[id].status = RobotStatus::Collided;
                        next.robots[id].v = Vec2::ZERO;
                    }
                }
            }
            EventKind::Timeout => {}
        }
    }

    Ok((next, events))
}

/// Classify the current state into episode events.
///
/// Collision beats arrival within the same tick, and a robot that already
/// reached a terminal status is never reclassified.
pub fn detect_events(state: &SimState, cfg: &ScenarioConfig) -> Vec<EpisodeEvent> {
    let mut events = Vec::new();
    let mut classified = vec![false; state.robots.len()];

    // Robot-human collisions: the nearest offending human classifies the robot.
    for robot in &state.robots {
        if robot.status != RobotStatus::Active {
            continue;
        }
        let mut worst: Option<(f64, usize)> = None;
        for human in &state.humans {
            let d = robot.p.dist(human.p);
            if d < robot.persona.rho_r + human.rho_h {
                if worst.map_or(true, |(bd, _)| d < bd) {
                    worst = Some((d, human.id));
                }
            }
        }
        if let Some((_, human_id)) = worst {
            events.push(EpisodeEvent {
                kind: EventKind::RobotHumanCollision { robot_id: robot.id, human_id },
                t: state.t,
            });
            classified[robot.id] = true;
        }
    }

    // Robot-robot collisions: any pair with at least one active participant.
    for i in 0..state.robots.len() {
        for j in (i + 1)..state.robots.len() {
            let (a, b) = (&state.robots[i], &state.robots[j]);
            if a.status != RobotStatus::Active && b.status != RobotStatus::Active {
                continue;
            }
            if a.p.dist(b.p) < a.persona.rho_r + b.persona.rho_r {
                events.push(EpisodeEvent {
                    kind: EventKind::RobotRobotCollision { robot_a: i, robot_b: j },
                    t: state.t,
                });
                if a.status == RobotStatus::Active {
                    classified[i] = true;
                }
                if b.status == RobotStatus::Active {
                    classified[j] = true;
                }
            }
        }
    }

    // Arrivals, unless the same tick already classified the robot.
    for robot in &state.robots {
        if robot.status != RobotStatus::Active || classified[robot.id] {
            continue;
        }
        if robot.p.dist(robot.g) < robot.persona.rho_r {
            events.push(EpisodeEvent { kind: EventKind::Arrival { robot_id: robot.id }, t: state.t });
        }
    }

    if state.t >= cfg.t_max_s
        && state.robots.iter().any(|r| r.status == RobotStatus::Active)
    {
        events.push(EpisodeEvent { kind: EventKind::Timeout, t: state.t });
    }

    events
}

/// Extract one robot's local observation.
///
/// An entity is visible iff the absolute bearing from the robot's heading
/// is at most `fov_rad / 2`; with a full 2*pi field of view everything is
/// visible. Lists are ordered by entity id.
pub fn observe(state: &SimState, cfg: &ScenarioConfig, robot_id: usize) -> LocalObservation {
    let robot = &state.robots[robot_id];
    let half_fov = cfg.fov_rad / 2.0;
    let in_fov = |p: Vec2| -> bool {
        let rel = p - robot.p;
        if rel.norm_sq() == 0.0 {
            return true;
        }
        wrap_angle(rel.angle() - robot.heading).abs() <= half_fov + 1e-12
    };

    let visible_humans = state
        .humans
        .iter()
        .filter(|h| in_fov(h.p))
        .map(|h| (h.id, h.p, h.v))
        .collect();
    let visible_robots = state
        .robots
        .iter()
        .filter(|r| r.id != robot_id && in_fov(r.p))
        .map(|r| (r.id, r.p, r.v))
        .collect();

    LocalObservation {
        observer_id: robot_id,
        self_state: *robot,
        visible_humans,
        visible_robots,
        t: state.t,
    }
}

/// Compute the next commanded velocity for every human and resample any
/// goal that was reached or hit the per-step re-goal probability.
///
/// Humans run ORCA against each other with the reciprocal 0.5 split and
/// against robots (of any status) with full avoidance responsibility.
pub fn human_policy_step(state: &mut SimState, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let half = cfg.arena_side_m / 2.0;
    for human in state.humans.iter_mut() {
        // Draw unconditionally so the stream does not depend on positions.
        let roll: f64 = rng.gen();
        if human.p.dist(human.g) < human.rho_h || roll < cfg.orca.p_regoal {
            human.g = Vec2::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
        }
    }

    let snapshot = state.clone();
    snapshot
        .humans
        .iter()
        .map(|human| {
            let me = orca::OrcaAgent { position: human.p, velocity: human.v, radius: human.rho_h };
            let mut neighbors: Vec<(orca::OrcaAgent, f64)> = Vec::new();
            for other in &snapshot.humans {
                if other.id == human.id || other.p.dist(human.p) > cfg.orca.neighbor_dist {
                    continue;
                }
                neighbors.push((
                    orca::OrcaAgent { position: other.p, velocity: other.v, radius: other.rho_h },
                    0.5,
                ));
            }
            for robot in &snapshot.robots {
                if robot.p.dist(human.p) > cfg.orca.neighbor_dist {
                    continue;
                }
                neighbors.push((
                    orca::OrcaAgent { position: robot.p, velocity: robot.v, radius: robot.persona.rho_r },
                    1.0,
                ));
            }
            let to_goal = human.g - human.p;
            let pref_speed = human.v_pref_h.min(to_goal.norm() / cfg.dt_s);
            let pref = to_goal.normalized_or_zero() * pref_speed;
            orca::orca_velocity(&me, &neighbors, pref, human.v_pref_h, cfg.orca.tau, cfg.dt_s)
        })
        .collect()
}
