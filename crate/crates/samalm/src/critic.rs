//! Deterministic penalty engines for the two-tier verification step, plus
//! the LLM wrappers that turn itemized penalties into reasoning text.
//!
//! Scores are authoritative here: the LLM only narrates. A local verdict
//! deducts per-human social-zone / near-collision penalties (most severe
//! branch wins per human) and a crowding-lookahead penalty; the global
//! verdict deducts robot-pair proximity, overtime, and group crowding.
//! Every score is `100 - sum(magnitudes)`, in `(-inf, 100]`.

use crate::gateway::{Gateway, Prompt, PromptTag};
use crate::sim::{LocalObservation, RobotPersona};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};

/// Rule-based checklist shipped with the crate and shown to the local
/// critic LLM.
pub const LOCAL_CRITIC_CHECKLIST: &str = include_str!("../assets/local_critic_checklist.txt");
/// Checklist shown to the global critic LLM.
pub const GLOBAL_CRITIC_CHECKLIST: &str = include_str!("../assets/global_critic_checklist.txt");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticParams {
    /// Crowding threshold on human counts.
    pub n_th: usize,
    /// Lookahead horizon in steps for the long-term branches.
    pub lookahead_steps: usize,
    /// Episode time that triggers the overtime branch, s.
    pub t_soft: f64,
    pub score_base: f64,
    pub w_social_zone: f64,
    pub w_near_collision: f64,
    pub w_high_risk: f64,
    pub w_robot_proximity: f64,
    pub w_overtime: f64,
    pub w_group_crowding: f64,
}

impl Default for CriticParams {
    fn default() -> Self {
        CriticParams {
            n_th: 3,
            lookahead_steps: 2,
            t_soft: 30.0,
            score_base: 100.0,
            w_social_zone: 5.0,
            w_near_collision: 10.0,
            w_high_risk: 5.0,
            w_robot_proximity: 10.0,
            w_overtime: 1.25,
            w_group_crowding: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyBranch {
    SocialZone,
    NearCollision,
    HighRiskArea,
    RobotProximity,
    Overtime,
    GroupCrowding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyItem {
    pub branch: PenaltyBranch,
    pub magnitude: f64,
    /// Offending entity ids: human ids for the local branches, robot ids
    /// for the global ones.
    pub subjects: Vec<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scope", content = "robot_id")]
pub enum CriticScope {
    Local(usize),
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub scope: CriticScope,
    pub score: f64,
    pub penalties: Vec<PenaltyItem>,
    pub reasoning: String,
}

/// Template reasoning from itemized penalties; also the degradation path
/// when the critic LLM is unreachable.
pub fn render_reasoning(scope: CriticScope, items: &[PenaltyItem]) -> String {
    if items.is_empty() {
        return match scope {
            CriticScope::Local(_) => "Action approved: no social violations detected.".to_string(),
            CriticScope::Global => "Team actions approved: no cooperative violations detected.".to_string(),
        };
    }
    items.iter().map(|i| format!("- {}", i.detail)).collect::<Vec<_>>().join("\n")
}

fn verdict(scope: CriticScope, items: Vec<PenaltyItem>, params: &CriticParams) -> CriticVerdict {
    let total: f64 = items.iter().map(|i| i.magnitude).sum();
    CriticVerdict {
        scope,
        score: params.score_base - total,
        reasoning: render_reasoning(scope, &items),
        penalties: items,
    }
}

/// Local critic: evaluate one robot's proposed action on the post-action
/// predicted state (self at `p + a*dt`, humans extrapolated one step).
///
/// Per human the most severe short-term branch applies: near collision
/// inside `dis_c + 0.1`, otherwise social zone inside `dis_s`. The
/// long-term branch extrapolates `lookahead_steps` at constant velocity
/// and charges `w_high_risk * (n - n_th)` when more than `n_th` humans
/// land inside the social distance.
pub fn local_penalty(
    obs: &LocalObservation,
    action: Vec2,
    persona: &RobotPersona,
    rho_h: f64,
    dt: f64,
    params: &CriticParams,
) -> CriticVerdict {
    let dis_c = persona.collision_distance(rho_h);
    let dis_s = persona.social_distance(rho_h);
    let next_self = obs.self_state.p + action * dt;
    let horizon = params.lookahead_steps as f64 * dt;
    let self_k = obs.self_state.p + action * horizon;

    let mut items = Vec::new();
    let mut crowd: Vec<usize> = Vec::new();
    for &(human_id, p, v) in &obs.visible_humans {
        let d = next_self.dist(p + v * dt);
        if d < dis_c + 0.1 {
            items.push(PenaltyItem {
                branch: PenaltyBranch::NearCollision,
                magnitude: params.w_near_collision,
                subjects: vec![human_id],
                detail: format!(
                    "action brings the robot too close to human-{human_id} (predicted distance {d:.2} m, collision margin {:.2} m)",
                    dis_c + 0.1
                ),
            });
        } else if d < dis_s {
            items.push(PenaltyItem {
                branch: PenaltyBranch::SocialZone,
                magnitude: params.w_social_zone,
                subjects: vec![human_id],
                detail: format!(
                    "action enters the social zone of human-{human_id} (predicted distance {d:.2} m, social distance {dis_s:.2} m)"
                ),
            });
        }
        if self_k.dist(p + v * horizon) < dis_s {
            crowd.push(human_id);
        }
    }
    if crowd.len() > params.n_th {
        let magnitude = params.w_high_risk * (crowd.len() - params.n_th) as f64;
        items.push(PenaltyItem {
            branch: PenaltyBranch::HighRiskArea,
            magnitude,
            detail: format!(
                "high-risk area: {} humans predicted inside the social distance within {} steps (threshold {})",
                crowd.len(),
                params.lookahead_steps,
                params.n_th
            ),
            subjects: crowd,
        });
    }

    verdict(CriticScope::Local(obs.observer_id), items, params)
}

/// One robot's contribution to the global critique, as aggregated along
/// the message chain.
#[derive(Debug, Clone, Copy)]
pub struct TeamMember<'a> {
    pub robot_id: usize,
    pub obs: &'a LocalObservation,
    pub action: Vec2,
    pub persona: &'a RobotPersona,
}

/// Global critic: robot-pair proximity on predicted next positions,
/// overtime past `t_soft` against the persona-averaged time budget, and
/// group crowding when more than half the robots are each predicted to
/// have more than `n_th` humans inside their social distance.
pub fn global_penalty(
    team: &[TeamMember<'_>],
    t: f64,
    rho_h: f64,
    dt: f64,
    params: &CriticParams,
) -> CriticVerdict {
    let mut members: Vec<&TeamMember<'_>> = team.iter().collect();
    members.sort_by_key(|m| m.robot_id);
    let horizon = params.lookahead_steps as f64 * dt;

    let mut items = Vec::new();
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let (a, b) = (members[i], members[j]);
            let pa = a.obs.self_state.p + a.action * dt;
            let pb = b.obs.self_state.p + b.action * dt;
            let dis_c = a.persona.rho_r + b.persona.rho_r;
            let d = pa.dist(pb);
            if d < dis_c + 0.1 {
                items.push(PenaltyItem {
                    branch: PenaltyBranch::RobotProximity,
                    magnitude: params.w_robot_proximity,
                    subjects: vec![a.robot_id, b.robot_id],
                    detail: format!(
                        "robots {} and {} predicted within {d:.2} m of each other (margin {:.2} m)",
                        a.robot_id,
                        b.robot_id,
                        dis_c + 0.1
                    ),
                });
            }
        }
    }

    if t > params.t_soft && !members.is_empty() {
        let t_m_mean: f64 = members.iter().map(|m| m.persona.t_m).sum::<f64>() / members.len() as f64;
        let magnitude = (params.w_overtime * (t - t_m_mean)).max(0.0);
        items.push(PenaltyItem {
            branch: PenaltyBranch::Overtime,
            magnitude,
            subjects: Vec::new(),
            detail: format!(
                "episode time {t:.2} s exceeds the soft limit {:.0} s (team time budget {t_m_mean:.2} s)",
                params.t_soft
            ),
        });
    }

    let crowded: Vec<usize> = members
        .iter()
        .filter(|m| {
            let self_k = m.obs.self_state.p + m.action * horizon;
            let dis_s = m.persona.social_distance(rho_h);
            let n = m
                .obs
                .visible_humans
                .iter()
                .filter(|&&(_, p, v)| self_k.dist(p + v * horizon) < dis_s)
                .count();
            n > params.n_th
        })
        .map(|m| m.robot_id)
        .collect();
    if 2 * crowded.len() > members.len() {
        items.push(PenaltyItem {
            branch: PenaltyBranch::GroupCrowding,
            magnitude: params.w_group_crowding * crowded.len() as f64,
            detail: format!(
                "group crowding: robots {crowded:?} are each predicted near more than {} humans at the lookahead",
                params.n_th
            ),
            subjects: crowded,
        });
    }

    verdict(CriticScope::Global, items, params)
}

/// Wrap a deterministic verdict with LLM-authored reasoning.
///
/// The deterministic engine keeps score authority; only the narration
/// changes. The scripted backend short-circuits to the template, and any
/// gateway failure degrades to it as well.
pub fn critique_with_llm(
    deterministic: CriticVerdict,
    context_text: &str,
    checklist: &str,
    gateway: &Gateway,
    nonce: u32,
) -> CriticVerdict {
    use crate::gateway::BackendKind;
    if gateway.config().mode == BackendKind::Scripted {
        return deterministic;
    }

    let tag = match deterministic.scope {
        CriticScope::Local(id) => PromptTag::LocalCritic(id),
        CriticScope::Global => PromptTag::GlobalCritic,
    };
    let findings = if deterministic.penalties.is_empty() {
        "(none)".to_string()
    } else {
        render_reasoning(deterministic.scope, &deterministic.penalties)
    };
    let prompt = Prompt {
        system: checklist.to_string(),
        user: format!("{context_text}\n\nDeterministic verification findings:\n{findings}"),
        tag,
        nonce,
    };
    match gateway.complete(&prompt) {
        Ok(completion) => CriticVerdict { reasoning: completion.text, ..deterministic },
        Err(_) => deterministic,
    }
}
