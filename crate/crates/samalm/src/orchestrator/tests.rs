use super::*;
use crate::fusion::build_chain;
use crate::gateway::{BackendConfig, Gateway, ScriptedProfile};
use crate::sim::{
    observe, HumanState, PersonaKind, RobotState, RobotStatus, ScenarioConfig, SimState,
};
use crate::vec2::Vec2;
use crate::worldmodel::{build_graph, textualize};

struct Fixture {
    robot_ids: Vec<usize>,
    observations: Vec<crate::sim::LocalObservation>,
    texts: Vec<crate::worldmodel::TextualWorldModel>,
    personas: Vec<crate::sim::RobotPersona>,
    shared: TaskConfigText,
}

impl Fixture {
    fn ctx(&self) -> StepContext<'_> {
        StepContext {
            step_index: 0,
            t: 0.0,
            dt: 0.25,
            rho_h: 0.3,
            robot_ids: &self.robot_ids,
            observations: &self.observations,
            texts: &self.texts,
            personas: &self.personas,
        }
    }

    fn actors(&self) -> Vec<Actor> {
        self.robot_ids
            .iter()
            .zip(&self.personas)
            .map(|(&id, &persona)| Actor::new(id, persona, 3))
            .collect()
    }
}

fn robot(id: usize, p: Vec2, g: Vec2) -> RobotState {
    let persona = crate::sim::RobotPersona::standard(PersonaKind::MobileRobot);
    RobotState { id, persona, p, v: Vec2::ZERO, g, heading: (g - p).angle(), status: RobotStatus::Active }
}

fn fixture_from_state(state: &SimState) -> Fixture {
    let cfg = ScenarioConfig::default();
    let robot_ids = state.active_robot_ids();
    let observations: Vec<_> = robot_ids.iter().map(|&id| observe(state, &cfg, id)).collect();
    let personas: Vec<_> = robot_ids.iter().map(|&id| state.robots[id].persona).collect();
    let texts: Vec<_> = observations
        .iter()
        .zip(&personas)
        .map(|(obs, persona)| textualize(&build_graph(obs, None, 0.25), persona))
        .collect();
    Fixture { robot_ids, observations, texts, personas, shared: crate::actor::task_config_text(0.25) }
}

/// Robot 0 faces a five-human wall; robot 1 is far away and clean. An
/// unsafe charge by robot 0 collects five near-collisions plus the
/// crowding lookahead (Q = 40), dragging Z below the threshold.
fn cluster_fixture(jitter: f64) -> Fixture {
    let humans: Vec<HumanState> = (0..5)
        .map(|i| HumanState {
            id: i,
            p: Vec2::new(0.81 + jitter, (i as f64 - 2.0) * 0.1 + jitter * 0.5),
            v: Vec2::ZERO,
            g: Vec2::new(0.81, 5.0),
            rho_h: 0.3,
            v_pref_h: 1.0,
        })
        .collect();
    let state = SimState {
        t: 0.0,
        step_index: 0,
        robots: vec![
            robot(0, Vec2::ZERO, Vec2::new(4.0, 0.0)),
            robot(1, Vec2::new(6.0, 6.0), Vec2::new(7.0, 6.0)),
        ],
        humans,
        rng_seed: 1,
    };
    fixture_from_state(&state)
}

fn open_fixture() -> Fixture {
    let state = SimState {
        t: 0.0,
        step_index: 0,
        robots: vec![
            robot(0, Vec2::ZERO, Vec2::new(4.0, 0.0)),
            robot(1, Vec2::new(0.0, 5.0), Vec2::new(4.0, 5.0)),
        ],
        humans: vec![],
        rng_seed: 1,
    };
    fixture_from_state(&state)
}

fn gateway_with(profile_for_robot_0: Option<ScriptedProfile>) -> Gateway {
    let mut cfg = BackendConfig::default();
    if let Some(profile) = profile_for_robot_0 {
        cfg.scripted.per_robot.insert(0, profile);
    }
    Gateway::new(cfg).unwrap()
}

fn run_round(fixture: &Fixture, gateway: &Gateway) -> (RoundOutcome, Vec<Actor>) {
    let ctx = fixture.ctx();
    let mut actors = fixture.actors();
    let shared = fixture.shared.clone();
    let initial = propose_all(&ctx, &mut actors, &shared, gateway, 0).unwrap();
    let chain = build_chain(
        &ctx.robot_ids
            .iter()
            .zip(ctx.observations)
            .map(|(&id, obs)| (id, obs.self_state.p))
            .collect::<Vec<_>>(),
    );
    let fusion_params = FusionParams::default();
    let critic_params = CriticParams::default();
    let outcome = verification_round(
        &ctx,
        initial,
        &chain,
        &mut actors,
        &shared,
        gateway,
        &fusion_params,
        &critic_params,
    )
    .unwrap();
    (outcome, actors)
}

#[test]
fn clean_proposals_are_accepted_verbatim_on_round_one() {
    let fixture = open_fixture();
    let gateway = gateway_with(None);
    let ctx = fixture.ctx();
    let mut actors = fixture.actors();
    let initial = propose_all(&ctx, &mut actors, &fixture.shared, &gateway, 0).unwrap();
    let chain = build_chain(&[(0, Vec2::ZERO), (1, Vec2::new(0.0, 5.0))]);
    let outcome = verification_round(
        &ctx,
        initial.clone(),
        &chain,
        &mut actors,
        &fixture.shared,
        &gateway,
        &FusionParams::default(),
        &CriticParams::default(),
    )
    .unwrap();
    assert_eq!(outcome.requeries, 0);
    assert!(!outcome.forced);
    assert_eq!(outcome.logs.len(), 1);
    assert!(outcome.final_z >= 80.0);
    // Monotone acceptance: the executed actions equal the proposals verbatim.
    assert_eq!(outcome.proposals, initial);
}

#[test]
fn adversarial_actor_is_requeried_exactly_once() {
    let fixture = cluster_fixture(0.01);
    let gateway = gateway_with(Some(ScriptedProfile::AdversarialFirst));
    let (outcome, actors) = run_round(&fixture, &gateway);
    assert_eq!(outcome.requeries, 1, "logs: {:?}", outcome.logs);
    assert!(!outcome.forced);
    assert!(outcome.final_z >= 80.0, "final Z = {}", outcome.final_z);
    assert_eq!(outcome.logs.len(), 2);
    assert_eq!(outcome.logs[0].targets, vec![0]);
    assert!(outcome.logs[0].z < 80.0);
    // The first evaluation charged near-collisions on the unsafe charge.
    assert!(outcome.logs[0].q[0] <= 50.0);
    assert_eq!(outcome.logs[0].q[1], 100.0);
    // The requeried robot received both critics' reasoning.
    let entries: Vec<_> = actors[0].feedback.iter().collect();
    assert_eq!(entries.len(), 1);
    assert!(entries[0].local_reason.contains("human-"));
    assert!(!entries[0].global_reason.is_empty());
    assert!(actors[1].feedback.is_empty());
}

#[test]
fn incorrigible_actor_exhausts_budget_and_forces() {
    let fixture = cluster_fixture(0.0);
    let gateway = gateway_with(Some(ScriptedProfile::Incorrigible));
    let (outcome, _) = run_round(&fixture, &gateway);
    let budget = FusionParams::default().max_requery;
    assert_eq!(outcome.requeries, budget);
    assert!(outcome.forced);
    assert_eq!(outcome.logs.len(), budget as usize + 1);
    assert!(outcome.logs.last().unwrap().forced);
    assert!(outcome.logs.iter().take(budget as usize).all(|l| !l.forced));
    assert!(outcome.final_z < 80.0);
    // Best-Z-so-far is executed: all attempts scored the same here, so the
    // accepted joint action is the first one seen.
    assert_eq!(outcome.proposals.len(), 2);
}

#[test]
fn single_low_scoring_robot_cannot_trigger_requery_alone() {
    // With one robot, Z equals its own score, so "Q_i < Z" never holds:
    // the round spins through its budget and force-accepts.
    let state = SimState {
        t: 0.0,
        step_index: 0,
        robots: vec![robot(0, Vec2::ZERO, Vec2::new(4.0, 0.0))],
        humans: (0..5)
            .map(|i| HumanState {
                id: i,
                p: Vec2::new(0.81, (i as f64 - 2.0) * 0.1),
                v: Vec2::ZERO,
                g: Vec2::new(0.81, 5.0),
                rho_h: 0.3,
                v_pref_h: 1.0,
            })
            .collect(),
        rng_seed: 1,
    };
    let fixture = fixture_from_state(&state);
    let gateway = gateway_with(Some(ScriptedProfile::Incorrigible));
    let (outcome, _) = run_round(&fixture, &gateway);
    assert!(outcome.forced);
    assert!(outcome.logs.iter().all(|l| l.targets.is_empty()));
}

#[test]
fn chain_aggregation_orders_payloads_leader_first() {
    let chain = build_chain(&[
        (0, Vec2::new(0.0, 0.0)),
        (1, Vec2::new(5.0, 0.0)),
        (2, Vec2::new(1.0, 0.0)),
    ]);
    let payloads = vec![(0, "a"), (1, "b"), (2, "c")];
    let aggregated = aggregate_along_chain(&chain, &payloads);
    assert_eq!(aggregated, vec![(0, "a"), (2, "c"), (1, "b")]);
}

#[test]
fn round_logs_serialize_per_external_schema() {
    let fixture = open_fixture();
    let gateway = gateway_with(None);
    let (outcome, _) = run_round(&fixture, &gateway);
    let json = serde_json::to_value(&outcome.logs[0]).unwrap();
    for key in ["step", "attempt", "q", "q_global", "c", "h", "omega", "z", "targets", "forced"] {
        assert!(json.get(key).is_some(), "missing key {key}");
    }
}
