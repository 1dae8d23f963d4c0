//! Deterministic scripted oracle: a drop-in stand-in for the LLM backends
//! that reads the same prompts and emits the same response schema.
//!
//! The actor policy parses the textual world model out of the prompt,
//! scores a fixed candidate set (24 headings x 3 speed fractions plus the
//! zero velocity) by goal progress minus a penalty mirror of the local
//! critic, and emits the argmax. Fault-injection profiles produce unsafe
//! or unparseable output for verification-loop tests.

use super::{GatewayError, Prompt, PromptTag, ScriptedConfig, ScriptedProfile};
use crate::actor::{CENTRALIZED_MARKER, FEEDBACK_HEADER, JOINT_BLOCK_PREFIX};
use crate::vec2::{wrap_angle, Vec2};
use crate::worldmodel::fmt2;
use sha2::{Digest, Sha256};

/// Radius the oracle assumes for bodies it cannot measure from the text.
const ASSUMED_RADIUS: f64 = 0.3;
/// Robot-robot clearance margin applied at the lookahead horizon.
const ROBOT_BUFFER_DIST: f64 = 1.2;
pub const HEADING_COUNT: usize = 24;
pub const SPEED_FRACTIONS: [f64; 3] = [1.0, 0.5, 0.25];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedEntity {
    pub id: usize,
    pub pos: Vec2,
    pub vel: Vec2,
}

/// Fields the oracle needs from the canonical world-model text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedWorldModel {
    pub self_pos: Vec2,
    pub self_vel: Vec2,
    pub goal: Vec2,
    pub pref_speed: f64,
    pub social_dist: f64,
    pub robots: Vec<ParsedEntity>,
    pub humans: Vec<ParsedEntity>,
}

fn parse_vec(s: &str) -> Option<Vec2> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    let (x, y) = inner.split_once(',')?;
    Some(Vec2::new(x.parse().ok()?, y.parse().ok()?))
}

fn parse_fields(rest: &str) -> Vec<(&str, &str)> {
    rest.split_whitespace().filter_map(|tok| tok.split_once('=')).collect()
}

/// Parse every world-model line found in `text`; other lines are ignored.
pub fn parse_world_model(text: &str) -> Option<ParsedWorldModel> {
    let mut wm: Option<ParsedWorldModel> = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("self:") {
            let mut self_pos = Vec2::ZERO;
            let mut self_vel = Vec2::ZERO;
            let mut goal = Vec2::ZERO;
            let mut pref_speed = 0.0;
            let mut social_dist = 0.0;
            for (key, value) in parse_fields(rest) {
                match key {
                    "pos" => self_pos = parse_vec(value)?,
                    "vel" => self_vel = parse_vec(value)?,
                    "goal" => goal = parse_vec(value)?,
                    "pref_speed" => pref_speed = value.parse().ok()?,
                    "social_dist" => social_dist = value.parse().ok()?,
                    _ => {}
                }
            }
            wm = Some(ParsedWorldModel {
                self_pos,
                self_vel,
                goal,
                pref_speed,
                social_dist,
                robots: Vec::new(),
                humans: Vec::new(),
            });
        } else if line.starts_with("robot-") || line.starts_with("human-") {
            let (label, rest) = line.split_once(':')?;
            let (kind, id) = label.split_once('-')?;
            let id: usize = id.parse().ok()?;
            let mut pos = Vec2::ZERO;
            let mut vel = Vec2::ZERO;
            for (key, value) in parse_fields(rest) {
                match key {
                    "pos" => pos = parse_vec(value)?,
                    "vel" => vel = parse_vec(value)?,
                    _ => {}
                }
            }
            let entity = ParsedEntity { id, pos, vel };
            if let Some(wm) = wm.as_mut() {
                if kind == "robot" {
                    wm.robots.push(entity);
                } else {
                    wm.humans.push(entity);
                }
            }
        }
    }
    wm.filter(|w| w.pref_speed > 0.0)
}

/// The fixed candidate set: zero velocity plus 24 headings (anchored at the
/// goal bearing) times three speed fractions of the preferred speed.
pub fn candidate_actions(wm: &ParsedWorldModel) -> Vec<Vec2> {
    let goal_bearing = goal_bearing(wm);
    let mut out = Vec::with_capacity(1 + HEADING_COUNT * SPEED_FRACTIONS.len());
    out.push(Vec2::ZERO);
    for k in 0..HEADING_COUNT {
        let heading = goal_bearing + k as f64 * std::f64::consts::TAU / HEADING_COUNT as f64;
        for frac in SPEED_FRACTIONS {
            out.push(Vec2::from_angle(heading) * (wm.pref_speed * frac));
        }
    }
    out
}

fn goal_bearing(wm: &ParsedWorldModel) -> f64 {
    let to_goal = wm.goal - wm.self_pos;
    if to_goal.norm_sq() > 0.0 {
        to_goal.angle()
    } else {
        0.0
    }
}

/// Penalty mirror used to score candidates: the local critic's human
/// branches (near collision 10, social zone 5, crowding lookahead) plus
/// robot-proximity terms so the oracle also keeps clear of teammates.
pub fn mirror_penalty(wm: &ParsedWorldModel, action: Vec2, dt: f64, lookahead_steps: usize) -> f64 {
    let dis_c = 2.0 * ASSUMED_RADIUS;
    let dis_s = wm.social_dist + 2.0 * ASSUMED_RADIUS;
    let horizon = lookahead_steps as f64 * dt;
    let next_self = wm.self_pos + action * dt;
    let self_k = wm.self_pos + action * horizon;

    let mut total = 0.0;
    let mut crowd = 0usize;
    for h in &wm.humans {
        let d = next_self.dist(h.pos + h.vel * dt);
        if d < dis_c + 0.1 {
            total += 10.0;
        } else if d < dis_s {
            total += 5.0;
        }
        if self_k.dist(h.pos + h.vel * horizon) < dis_s {
            crowd += 1;
        }
    }
    if crowd > 3 {
        total += 5.0 * (crowd - 3) as f64;
    }
    for r in &wm.robots {
        // Other robots re-decide simultaneously, so a pure constant-velocity
        // prediction oscillates: hedge against the robot also stopping by
        // taking the worst case of the two models.
        let d1 = next_self.dist(r.pos + r.vel * dt).min(next_self.dist(r.pos));
        if d1 < dis_c + 0.1 {
            total += 10.0;
        } else {
            let dk = self_k.dist(r.pos + r.vel * horizon).min(self_k.dist(r.pos));
            if dk < ROBOT_BUFFER_DIST {
                total += 5.0;
            }
        }
    }
    total
}

#[derive(Debug, Clone, Copy)]
pub struct ScoredCandidate {
    pub action: Vec2,
    pub score: f64,
    pub penalty: f64,
    pub heading_change: f64,
}

/// Argmax by score; exact ties go to the smaller heading change, then to
/// the earlier candidate.
pub fn pick_best(scored: &[ScoredCandidate]) -> usize {
    let mut best = 0;
    for (i, c) in scored.iter().enumerate().skip(1) {
        let b = &scored[best];
        if c.score > b.score || (c.score == b.score && c.heading_change < b.heading_change) {
            best = i;
        }
    }
    best
}

pub fn score_candidates(wm: &ParsedWorldModel, dt: f64, lookahead_steps: usize) -> Vec<ScoredCandidate> {
    let goal_dist = wm.self_pos.dist(wm.goal);
    let current_heading = if wm.self_vel.norm_sq() > 1e-18 {
        wm.self_vel.angle()
    } else {
        goal_bearing(wm)
    };
    candidate_actions(wm)
        .into_iter()
        .map(|action| {
            let penalty = mirror_penalty(wm, action, dt, lookahead_steps);
            let progress = goal_dist - (wm.self_pos + action * dt).dist(wm.goal);
            let heading_change = if action.norm_sq() > 0.0 {
                wrap_angle(action.angle() - current_heading).abs()
            } else {
                0.0
            };
            ScoredCandidate { action, score: progress - penalty, penalty, heading_change }
        })
        .collect()
}

/// Penalty-aware action selection over the fixed candidate set.
pub fn scripted_actor_policy(wm: &ParsedWorldModel, dt: f64, lookahead_steps: usize) -> (Vec2, Vec<String>) {
    let scored = score_candidates(wm, dt, lookahead_steps);
    let best = scored[pick_best(&scored)];
    let reasoning = vec![
        format!(
            "goal at bearing {} rad, distance {} m; {} humans and {} robots in view",
            fmt2(goal_bearing(wm)),
            fmt2(wm.self_pos.dist(wm.goal)),
            wm.humans.len(),
            wm.robots.len()
        ),
        if best.penalty > 0.0 {
            format!("no penalty-free candidate dominates; accepting penalty {}", fmt2(best.penalty))
        } else {
            "selected candidate keeps clear of all social and collision zones".to_string()
        },
        format!("command velocity [{}, {}]", fmt2(best.action.x), fmt2(best.action.y)),
    ];
    (best.action, reasoning)
}

/// Unsafe stand-in behavior: head straight for the nearest human at full
/// speed (goalward when nobody is visible).
pub fn unsafe_action(wm: &ParsedWorldModel) -> Vec2 {
    let target = wm
        .humans
        .iter()
        .min_by(|a, b| {
            a.pos
                .dist_sq(wm.self_pos)
                .partial_cmp(&b.pos.dist_sq(wm.self_pos))
                .expect("distances are finite")
        })
        .map(|h| h.pos);
    let dir = match target {
        Some(pos) => (pos - wm.self_pos).normalized_or_zero(),
        None => (wm.goal - wm.self_pos).normalized_or_zero(),
    };
    dir * wm.pref_speed
}

fn fault_roll(seed: u64, prompt: &Prompt) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(prompt.system.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt.user.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes) as f64 / u64::MAX as f64
}

fn render_actor_json(action: Vec2, reasoning: &[String]) -> String {
    let reasoning_json = serde_json::to_string(reasoning).expect("strings serialize");
    format!(
        "{{\"reasoning\": {}, \"action\": [{}, {}]}}",
        reasoning_json,
        fmt2(action.x),
        fmt2(action.y)
    )
}

fn actor_completion(prompt: &Prompt, robot_id: usize, cfg: &ScriptedConfig) -> Result<String, GatewayError> {
    let profile = cfg.profile_for(robot_id);
    if profile == ScriptedProfile::Garbage {
        return Ok("I cannot produce a velocity right now.".to_string());
    }
    let wm = parse_world_model(&prompt.user).ok_or_else(|| GatewayError::MalformedResponse {
        detail: "scripted oracle found no world model in the prompt".into(),
    })?;
    let has_feedback = prompt.user.contains(FEEDBACK_HEADER);
    let go_unsafe = match profile {
        ScriptedProfile::Normal | ScriptedProfile::Garbage => false,
        ScriptedProfile::AdversarialFirst => !has_feedback,
        ScriptedProfile::Incorrigible => true,
        ScriptedProfile::Faulty => fault_roll(cfg.fault_seed, prompt) < cfg.fault_rate,
    };
    if go_unsafe {
        let action = unsafe_action(&wm);
        let reasoning = vec!["heading straight for the closest gap at full speed".to_string()];
        Ok(render_actor_json(action, &reasoning))
    } else {
        let (action, reasoning) = scripted_actor_policy(&wm, cfg.dt, cfg.lookahead_steps);
        Ok(render_actor_json(action, &reasoning))
    }
}

fn centralized_completion(prompt: &Prompt, cfg: &ScriptedConfig) -> Result<String, GatewayError> {
    let mut blocks: Vec<(usize, String)> = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for line in prompt.user.lines() {
        if let Some(rest) = line.strip_prefix(JOINT_BLOCK_PREFIX) {
            if let Some(block) = current.take() {
                blocks.push(block);
            }
            let id: usize = rest
                .split_whitespace()
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| GatewayError::MalformedResponse {
                    detail: format!("bad robot block header: {line}"),
                })?;
            current = Some((id, String::new()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    if let Some(block) = current.take() {
        blocks.push(block);
    }
    if blocks.is_empty() {
        return Err(GatewayError::MalformedResponse {
            detail: "centralized prompt contains no robot blocks".into(),
        });
    }
    let mut actions = Vec::with_capacity(blocks.len());
    let mut reasoning = Vec::with_capacity(blocks.len());
    for (id, body) in &blocks {
        let wm = parse_world_model(body).ok_or_else(|| GatewayError::MalformedResponse {
            detail: format!("no world model in block for robot {id}"),
        })?;
        let (action, _) = scripted_actor_policy(&wm, cfg.dt, cfg.lookahead_steps);
        reasoning.push(format!("robot {id}: command [{}, {}]", fmt2(action.x), fmt2(action.y)));
        actions.push(action);
    }
    let reasoning_json = serde_json::to_string(&reasoning).expect("strings serialize");
    let actions_json: Vec<String> = actions
        .iter()
        .map(|a| format!("[{}, {}]", fmt2(a.x), fmt2(a.y)))
        .collect();
    Ok(format!(
        "{{\"reasoning\": {}, \"actions\": [{}]}}",
        reasoning_json,
        actions_json.join(", ")
    ))
}

fn critic_completion(prompt: &Prompt) -> String {
    let findings: Vec<&str> = prompt
        .user
        .lines()
        .map(str::trim)
        .filter(|l| l.starts_with("- "))
        .collect();
    if findings.is_empty() {
        "All checks passed: no violations found.".to_string()
    } else {
        findings.join("\n")
    }
}

/// Backend dispatch for the scripted oracle.
pub fn scripted_completion(prompt: &Prompt, cfg: &ScriptedConfig) -> Result<String, GatewayError> {
    match prompt.tag {
        PromptTag::Actor(robot_id) => {
            if prompt.system.contains(CENTRALIZED_MARKER) {
                centralized_completion(prompt, cfg)
            } else {
                actor_completion(prompt, robot_id, cfg)
            }
        }
        PromptTag::LocalCritic(_) | PromptTag::GlobalCritic => Ok(critic_completion(prompt)),
    }
}
