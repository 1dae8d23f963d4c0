//! Batch experiment runner: scenario generation, episode execution in
//! decentralized / centralized / no-critic modes, success-rate and
//! social-score metrics, and artifact export.

mod export;

pub use export::{load_metrics_rows, write_report, EpisodeRow, SummaryRow};

use crate::actor::{
    build_centralized_prompt, parse_joint_actions, task_config_text, Actor, TaskConfigText,
};
use crate::critic::CriticParams;
use crate::fusion::{build_chain, FusionParams};
use crate::gateway::{BackendConfig, BackendKind, Gateway, GatewayError};
use crate::orchestrator::{propose_all, verification_round, RoundLog, StepContext};
use crate::sim::{
    generate_initial_state, human_policy_step, observe, step, EpisodeEvent, EventKind,
    LocalObservation, RobotStatus, ScenarioConfig, SimState,
};
use crate::vec2::Vec2;
use crate::worldmodel::{build_graph, textualize, TextualWorldModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Full pipeline: parallel actors, two-tier critics, entropy fusion,
    /// bounded re-query.
    Decentralized,
    /// Baseline: one prompt over all robots' world models, joint action
    /// array, no verification.
    Centralized,
    /// Ablation: decentralized actors with verification skipped entirely.
    NoCritic,
}

/// Weights of the composite social score. Non-canonical and
/// config-overridable; they must sum to 1 for the nominal 0-100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocialScoreWeights {
    pub discomfort: f64,
    pub path: f64,
    pub time: f64,
}

impl Default for SocialScoreWeights {
    fn default() -> Self {
        SocialScoreWeights { discomfort: 0.5, path: 0.3, time: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub mode: RunMode,
    pub backend: BackendConfig,
    pub episodes: usize,
    /// Master seed; per-episode seeds derive from it so every method sees
    /// the same test cases.
    pub seed: u64,
    pub fusion: FusionParams,
    pub critic: CriticParams,
    pub ss_weights: SocialScoreWeights,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            mode: RunMode::Decentralized,
            backend: BackendConfig::default(),
            episodes: 50,
            seed: 0,
            fusion: FusionParams::default(),
            critic: CriticParams::default(),
            ss_weights: SocialScoreWeights::default(),
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Success,
    Collision,
    Timeout,
    /// A gateway hard error ended the episode early.
    AbortedByBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    pub outcome: EpisodeOutcome,
    /// Arrival time per robot (t_max for robots that never arrived), s.
    pub nav_times: Vec<f64>,
    pub path_lengths: Vec<f64>,
    pub straight_line: Vec<f64>,
    /// Count of (robot, step) pairs with a human inside the robot's
    /// social distance.
    pub discomfort_steps: u64,
    pub total_robot_steps: u64,
    pub requery_count: u64,
    pub forced_count: u64,
    /// Mean navigation-time budget of the personas in this episode, s.
    pub t_m_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRobot {
    pub id: usize,
    pub p: Vec2,
    pub v: Vec2,
    pub status: RobotStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryHuman {
    pub id: usize,
    pub p: Vec2,
    pub v: Vec2,
}

/// One trajectory-log line per step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub t: f64,
    pub robots: Vec<TrajectoryRobot>,
    pub humans: Vec<TrajectoryHuman>,
    pub events: Vec<EpisodeEvent>,
}

#[derive(Debug, Default)]
pub struct EpisodeLogs {
    pub trajectory: Vec<TrajectoryRecord>,
    pub rounds: Vec<RoundLog>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("IO error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("gateway error: {0}")]
    Gateway(#[from] GatewayError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-episode seed: a fixed mix of the master seed and the episode index,
/// so identical master seeds give every method the same test cases.
pub fn derive_episode_seed(master: u64, episode_index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(episode_index.wrapping_add(0x5eed)))
}

fn trajectory_record(state: &SimState, events: &[EpisodeEvent]) -> TrajectoryRecord {
    TrajectoryRecord {
        step: state.step_index,
        t: state.t,
        robots: state
            .robots
            .iter()
            .map(|r| TrajectoryRobot { id: r.id, p: r.p, v: r.v, status: r.status })
            .collect(),
        humans: state
            .humans
            .iter()
            .map(|h| TrajectoryHuman { id: h.id, p: h.p, v: h.v })
            .collect(),
        events: events.to_vec(),
    }
}

struct StepDecision {
    actions: Vec<Vec2>,
    rounds: Vec<RoundLog>,
    requeries: u64,
    forced: u64,
}

fn decide_step(
    cfg: &ExperimentConfig,
    ctx: &StepContext<'_>,
    shared: &TaskConfigText,
    gateway: &Gateway,
) -> Result<StepDecision, GatewayError> {
    // Feedback buffers are cleared at each environment step: actors are
    // rebuilt fresh and live only for this step's re-query loop.
    let mut actors: Vec<Actor> = ctx
        .robot_ids
        .iter()
        .zip(ctx.personas)
        .map(|(&id, &persona)| Actor::new(id, persona, cfg.fusion.max_requery.max(1) as usize))
        .collect();

    match cfg.mode {
        RunMode::NoCritic => {
            let proposals = propose_all(ctx, &mut actors, shared, gateway, 0)?;
            Ok(StepDecision {
                actions: proposals.iter().map(|p| p.action).collect(),
                rounds: Vec::new(),
                requeries: 0,
                forced: 0,
            })
        }
        RunMode::Decentralized => {
            let proposals = propose_all(ctx, &mut actors, shared, gateway, 0)?;
            let chain = build_chain(
                &ctx.robot_ids
                    .iter()
                    .zip(ctx.observations)
                    .map(|(&id, obs)| (id, obs.self_state.p))
                    .collect::<Vec<_>>(),
            );
            let outcome = verification_round(
                ctx,
                proposals,
                &chain,
                &mut actors,
                shared,
                gateway,
                &cfg.fusion,
                &cfg.critic,
            )?;
            Ok(StepDecision {
                actions: outcome.proposals.iter().map(|p| p.action).collect(),
                rounds: outcome.logs,
                requeries: outcome.requeries as u64,
                forced: outcome.forced as u64,
            })
        }
        RunMode::Centralized => {
            let team: Vec<(usize, &TextualWorldModel, &crate::sim::RobotPersona)> = ctx
                .robot_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, &ctx.texts[i], &ctx.personas[i]))
                .collect();
            let mut parse_feedback: Option<String> = None;
            for attempt in 0..2u32 {
                let prompt = build_centralized_prompt(&team, shared, parse_feedback.as_deref(), attempt);
                let completion = gateway.complete(&prompt)?;
                match parse_joint_actions(&completion.text, ctx.personas) {
                    Ok(actions) => {
                        return Ok(StepDecision { actions, rounds: Vec::new(), requeries: 0, forced: 0 })
                    }
                    Err(err) => {
                        parse_feedback = Some(format!(
                            "your previous response could not be parsed ({err}); reply with exactly \
                             one JSON object {{\"reasoning\": [...], \"actions\": [[vx, vy], ...]}}"
                        ));
                    }
                }
            }
            // Degraded: hold every robot still rather than aborting.
            Ok(StepDecision {
                actions: vec![Vec2::ZERO; ctx.robot_ids.len()],
                rounds: Vec::new(),
                requeries: 0,
                forced: 0,
            })
        }
    }
}

/// Run one seeded episode: observe, build world models, propose (per
/// mode), verify (unless disabled), and step until every robot is
/// terminal or the clock runs out.
pub fn run_episode(
    cfg: &ExperimentConfig,
    episode_index: usize,
    gateway: &Gateway,
) -> (EpisodeResult, EpisodeLogs) {
    let episode_seed = derive_episode_seed(cfg.seed, episode_index as u64);
    let state = generate_initial_state(&cfg.scenario, episode_seed);
    run_episode_from(cfg, episode_index, state, gateway)
}

/// Episode loop over an explicit initial state (seed taken from
/// `state.rng_seed`); the normal entry point generates the state first.
pub fn run_episode_from(
    cfg: &ExperimentConfig,
    episode_index: usize,
    initial: SimState,
    gateway: &Gateway,
) -> (EpisodeResult, EpisodeLogs) {
    let scenario = &cfg.scenario;
    let episode_seed = initial.rng_seed;
    let mut state = initial;
    let mut human_rng = ChaCha8Rng::seed_from_u64(splitmix64(episode_seed ^ 0x68756d616e));
    let shared = task_config_text(scenario.dt_s);

    let n_robots = state.robots.len();
    let mut nav_times: Vec<Option<f64>> = vec![None; n_robots];
    let mut path_lengths = vec![0.0f64; n_robots];
    let straight_line: Vec<f64> = state.robots.iter().map(|r| r.p.dist(r.g)).collect();
    let t_m_mean = if n_robots > 0 {
        state.robots.iter().map(|r| r.persona.t_m).sum::<f64>() / n_robots as f64
    } else {
        0.0
    };
    let mut discomfort_steps = 0u64;
    let mut total_robot_steps = 0u64;
    let mut requery_count = 0u64;
    let mut forced_count = 0u64;
    let mut logs = EpisodeLogs::default();
    logs.trajectory.push(trajectory_record(&state, &[]));
    let mut prev_obs: Vec<Option<LocalObservation>> = vec![None; n_robots];
    let mut aborted = false;

    let max_steps = (scenario.t_max_s / scenario.dt_s).ceil() as u64 + 1;
    'episode: for _ in 0..max_steps {
        let active_ids = state.active_robot_ids();
        if active_ids.is_empty() {
            break;
        }

        let observations: Vec<LocalObservation> =
            active_ids.iter().map(|&id| observe(&state, scenario, id)).collect();
        let personas: Vec<crate::sim::RobotPersona> =
            active_ids.iter().map(|&id| state.robots[id].persona).collect();
        let texts: Vec<TextualWorldModel> = observations
            .iter()
            .zip(&personas)
            .map(|(obs, persona)| {
                let graph = build_graph(obs, prev_obs[obs.observer_id].as_ref(), scenario.dt_s);
                textualize(&graph, persona)
            })
            .collect();
        for obs in &observations {
            prev_obs[obs.observer_id] = Some(obs.clone());
        }

        let ctx = StepContext {
            step_index: state.step_index,
            t: state.t,
            dt: scenario.dt_s,
            rho_h: scenario.radii.human,
            robot_ids: &active_ids,
            observations: &observations,
            texts: &texts,
            personas: &personas,
        };

        let decision = match decide_step(cfg, &ctx, &shared, gateway) {
            Ok(decision) => decision,
            Err(err) => {
                eprintln!("episode {episode_index}: backend error aborted the episode: {err}");
                aborted = true;
                break 'episode;
            }
        };
        logs.rounds.extend(decision.rounds);
        requery_count += decision.requeries;
        forced_count += decision.forced;

        let human_velocities = human_policy_step(&mut state, scenario, &mut human_rng);
        let (next, events) = step(&state, scenario, &decision.actions, &human_velocities)
            .expect("proposal pipeline keeps the step contract");

        for &id in &active_ids {
            let robot = &next.robots[id];
            path_lengths[id] += robot.p.dist(state.robots[id].p);
            total_robot_steps += 1;
            let dis_s = robot.persona.social_distance(scenario.radii.human);
            if next.humans.iter().any(|h| h.p.dist(robot.p) < dis_s) {
                discomfort_steps += 1;
            }
        }
        for event in &events {
            if let EventKind::Arrival { robot_id } = event.kind {
                nav_times[robot_id] = Some(next.t);
            }
        }

        logs.trajectory.push(trajectory_record(&next, &events));
        let timed_out = events.iter().any(|e| e.kind == EventKind::Timeout);
        state = next;
        if timed_out {
            break;
        }
    }

    let outcome = if aborted {
        EpisodeOutcome::AbortedByBackend
    } else if state.robots.iter().any(|r| r.status == RobotStatus::Collided) {
        EpisodeOutcome::Collision
    } else if !state.robots.is_empty() && state.robots.iter().all(|r| r.status == RobotStatus::Arrived) {
        EpisodeOutcome::Success
    } else if state.robots.is_empty() {
        EpisodeOutcome::Success
    } else {
        EpisodeOutcome::Timeout
    };

    let result = EpisodeResult {
        episode: episode_index,
        seed: episode_seed,
        outcome,
        nav_times: nav_times.into_iter().map(|t| t.unwrap_or(scenario.t_max_s)).collect(),
        path_lengths,
        straight_line,
        discomfort_steps,
        total_robot_steps,
        requery_count,
        forced_count,
        t_m_mean,
    };
    (result, logs)
}

/// Per-episode social score in [0, 100]; failed episodes contribute 0.
///
/// Successful episodes blend three saturating terms: freedom from
/// discomfort, path straightness, and timeliness against the persona
/// time budget.
pub fn episode_social_score(result: &EpisodeResult, weights: &SocialScoreWeights) -> f64 {
    if result.outcome != EpisodeOutcome::Success {
        return 0.0;
    }
    let discomfort_term = if result.total_robot_steps == 0 {
        1.0
    } else {
        1.0 - (result.discomfort_steps as f64 / result.total_robot_steps as f64).min(1.0)
    };
    let straight_total: f64 = result.straight_line.iter().sum();
    let path_total: f64 = result.path_lengths.iter().sum();
    let path_term =
        if straight_total > 0.0 { straight_total / path_total.max(straight_total) } else { 1.0 };
    let mean_nav: f64 = if result.nav_times.is_empty() {
        0.0
    } else {
        result.nav_times.iter().sum::<f64>() / result.nav_times.len() as f64
    };
    let time_term = if mean_nav > 0.0 { (result.t_m_mean / mean_nav).min(1.0) } else { 1.0 };
    100.0 * (weights.discomfort * discomfort_term + weights.path * path_term + weights.time * time_term)
}

/// Batch social score: mean per-episode score over all episodes, rounded
/// to an integer.
pub fn social_score(results: &[EpisodeResult], weights: &SocialScoreWeights) -> i64 {
    if results.is_empty() {
        return 0;
    }
    let total: f64 = results.iter().map(|r| episode_social_score(r, weights)).sum();
    (total / results.len() as f64).round() as i64
}

/// Success rate as a percentage. Aborted episodes leave the denominator
/// only when they are at least 10% of the batch; otherwise they count as
/// failures.
pub fn success_rate(results: &[EpisodeResult]) -> f64 {
    let episodes = results.len();
    if episodes == 0 {
        return 0.0;
    }
    let aborted = results.iter().filter(|r| r.outcome == EpisodeOutcome::AbortedByBackend).count();
    let successes = results.iter().filter(|r| r.outcome == EpisodeOutcome::Success).count();
    let denominator = if aborted * 10 >= episodes { episodes - aborted } else { episodes };
    if denominator == 0 {
        return 0.0;
    }
    100.0 * successes as f64 / denominator as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: f64,
    pub ss: i64,
    pub episodes: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub aborted: usize,
    pub results: Vec<EpisodeResult>,
}

impl MetricsReport {
    pub fn from_results(results: Vec<EpisodeResult>, weights: &SocialScoreWeights) -> Self {
        let count = |outcome: EpisodeOutcome| results.iter().filter(|r| r.outcome == outcome).count();
        MetricsReport {
            sr: success_rate(&results),
            ss: social_score(&results, weights),
            episodes: results.len(),
            successes: count(EpisodeOutcome::Success),
            collisions: count(EpisodeOutcome::Collision),
            timeouts: count(EpisodeOutcome::Timeout),
            aborted: count(EpisodeOutcome::AbortedByBackend),
            results,
        }
    }
}

fn episode_gateway(cfg: &ExperimentConfig, episode_index: usize) -> Result<Gateway, GatewayError> {
    let mut backend = cfg.backend.clone();
    if backend.mode != BackendKind::Replay {
        backend.transcript_path = cfg
            .out_dir
            .as_ref()
            .map(|dir| dir.join("transcripts").join(format!("ep_{episode_index:04}.jsonl")));
        // dt for the scripted oracle's predictions follows the scenario.
        backend.scripted.dt = cfg.scenario.dt_s;
        backend.scripted.lookahead_steps = cfg.critic.lookahead_steps;
    }
    Gateway::new(backend)
}

/// Run `episodes` seeded episodes (concurrently), aggregate SR/SS, and
/// export all artifacts when an output directory is configured.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<MetricsReport, HarnessError> {
    if cfg.episodes == 0 {
        return Err(HarnessError::Config("episodes must be >= 1".into()));
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir.join("trajectories"))?;
        std::fs::create_dir_all(dir.join("rounds"))?;
        if cfg.backend.mode != BackendKind::Replay {
            std::fs::create_dir_all(dir.join("transcripts"))?;
        }
    }

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(cfg.episodes).max(1);
    let mut slots: Vec<Option<(EpisodeResult, EpisodeLogs)>> = Vec::new();
    slots.resize_with(cfg.episodes, || None);

    let chunks: Vec<Vec<usize>> = (0..workers)
        .map(|w| (0..cfg.episodes).filter(|i| i % workers == w).collect())
        .collect();
    let outputs: Vec<Result<Vec<(usize, EpisodeResult, EpisodeLogs)>, HarnessError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        let mut done = Vec::with_capacity(chunk.len());
                        for &index in chunk {
                            let gateway = episode_gateway(cfg, index)?;
                            let (result, logs) = run_episode(cfg, index, &gateway);
                            done.push((index, result, logs));
                        }
                        Ok(done)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("episode worker panicked")).collect()
        });
    for output in outputs {
        for (index, result, logs) in output? {
            slots[index] = Some((result, logs));
        }
    }

    let mut results = Vec::with_capacity(cfg.episodes);
    for (index, slot) in slots.into_iter().enumerate() {
        let (result, logs) = slot.expect("every episode index filled");
        if let Some(dir) = &cfg.out_dir {
            export::write_jsonl(&dir.join("trajectories").join(format!("ep_{index:04}.jsonl")), &logs.trajectory)?;
            export::write_jsonl(&dir.join("rounds").join(format!("ep_{index:04}.jsonl")), &logs.rounds)?;
        }
        results.push(result);
    }

    let report = MetricsReport::from_results(results, &cfg.ss_weights);
    if let Some(dir) = &cfg.out_dir {
        export::write_metrics_csv(&dir.join("metrics.csv"), &report, cfg)?;
        let echo = serde_json::to_string_pretty(cfg)
            .map_err(|e| HarnessError::Config(format!("config echo failed: {e}")))?;
        std::fs::write(dir.join("config.json"), echo + "\n")?;
    }
    Ok(report)
}
