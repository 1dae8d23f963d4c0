//! Scenario configuration and the circle-crossing layout generator.

use super::{HumanState, PersonaKind, RobotPersona, RobotState, RobotStatus, SimState};
use crate::vec2::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// ORCA crowd parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrcaConfig {
    /// Collision time horizon, s.
    pub tau: f64,
    /// Neighbor cutoff distance, m.
    pub neighbor_dist: f64,
    /// Per-step probability of a spontaneous goal change.
    pub p_regoal: f64,
}

impl Default for OrcaConfig {
    fn default() -> Self {
        OrcaConfig { tau: 2.0, neighbor_dist: 10.0, p_regoal: 0.01 }
    }
}

/// Body radii applied at generation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiiConfig {
    pub robot: f64,
    pub human: f64,
}

impl Default for RadiiConfig {
    fn default() -> Self {
        RadiiConfig { robot: 0.3, human: 0.3 }
    }
}

/// How robot personas are chosen at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PersonaAssignment {
    /// The literal string "random": draw uniformly from the three types.
    Mode(String),
    /// Explicit list, cycled when shorter than the robot count.
    Explicit(Vec<PersonaKind>),
}

impl Default for PersonaAssignment {
    fn default() -> Self {
        PersonaAssignment::Mode("random".to_string())
    }
}

/// Episode scenario: arena, clock, field of view, population, and crowd
/// policy parameters. Serialized as the scenario JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub arena_side_m: f64,
    pub dt_s: f64,
    pub t_max_s: f64,
    pub fov_rad: f64,
    pub n_humans: usize,
    pub n_robots: usize,
    pub persona_assignment: PersonaAssignment,
    pub seed: u64,
    pub orca: OrcaConfig,
    pub radii: RadiiConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            arena_side_m: 12.0,
            dt_s: 0.25,
            t_max_s: 40.0,
            fov_rad: std::f64::consts::TAU,
            n_humans: 5,
            n_robots: 3,
            persona_assignment: PersonaAssignment::default(),
            seed: 0,
            orca: OrcaConfig::default(),
            radii: RadiiConfig::default(),
        }
    }
}

fn persona_for(cfg: &ScenarioConfig, index: usize, rng: &mut ChaCha8Rng) -> RobotPersona {
    let kind = match &cfg.persona_assignment {
        PersonaAssignment::Mode(_) => PersonaKind::ALL[rng.gen_range(0..PersonaKind::ALL.len())],
        PersonaAssignment::Explicit(kinds) if !kinds.is_empty() => kinds[index % kinds.len()],
        PersonaAssignment::Explicit(_) => PersonaKind::MobileRobot,
    };
    let mut persona = RobotPersona::standard(kind);
    persona.rho_r = cfg.radii.robot;
    persona
}

/// Build the initial joint state for one episode seed.
///
/// Robots start evenly spaced on a circle with goals across it (small
/// seeded jitter breaks exact symmetry); humans are rejection-sampled
/// uniformly in the arena with a clearance margin, goals uniform.
pub fn generate_initial_state(cfg: &ScenarioConfig, episode_seed: u64) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let half = cfg.arena_side_m / 2.0;
    let circle_r = 0.4 * cfg.arena_side_m;

    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut robots = Vec::with_capacity(cfg.n_robots);
    for i in 0..cfg.n_robots {
        let persona = persona_for(cfg, i, &mut rng);
        let angle = phase + i as f64 * std::f64::consts::TAU / cfg.n_robots.max(1) as f64;
        let p = Vec2::from_angle(angle) * circle_r;
        let jitter = Vec2::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let g = -p + jitter;
        robots.push(RobotState {
            id: i,
            persona,
            p,
            v: Vec2::ZERO,
            g,
            heading: (g - p).angle(),
            status: RobotStatus::Active,
        });
    }

    let mut humans: Vec<HumanState> = Vec::with_capacity(cfg.n_humans);
    for i in 0..cfg.n_humans {
        let mut p = Vec2::ZERO;
        for attempt in 0..1000 {
            p = Vec2::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
            let clear_of_robots = robots
                .iter()
                .all(|r| r.p.dist(p) >= r.persona.rho_r + cfg.radii.human + 0.3);
            let clear_of_humans = humans.iter().all(|h| h.p.dist(p) >= 2.0 * cfg.radii.human + 0.3);
            if (clear_of_robots && clear_of_humans) || attempt == 999 {
                break;
            }
        }
        let g = Vec2::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
        humans.push(HumanState {
            id: i,
            p,
            v: Vec2::ZERO,
            g,
            rho_h: cfg.radii.human,
            v_pref_h: 1.0,
        });
    }

    SimState { t: 0.0, step_index: 0, robots, humans, rng_seed: episode_seed }
}
