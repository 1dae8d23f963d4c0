//! Per-robot LLM actors: persona-conditioned prompt assembly over the
//! shared task text, the robot's world model, and its critic-feedback
//! buffer, plus parsing and clamping of the returned velocity command.

use crate::gateway::{Gateway, GatewayError, Prompt, PromptTag};
use crate::sim::RobotPersona;
use crate::vec2::Vec2;
use crate::worldmodel::{fmt2, TextualWorldModel};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Header introducing rendered feedback entries in the user prompt; the
/// scripted backend keys its "has feedback" behavior off this line.
pub const FEEDBACK_HEADER: &str = "Critic feedback from previous attempts:";
/// Block header for per-robot sections of the centralized baseline prompt.
pub const JOINT_BLOCK_PREFIX: &str = "## robot ";
/// Phrase that marks a prompt as requesting a joint action array.
pub const CENTRALIZED_MARKER: &str = "one action per robot";

/// Task description shared verbatim by every actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfigText(pub String);

/// Build the shared task text for a control interval of `dt` seconds.
pub fn task_config_text(dt: f64) -> TaskConfigText {
    TaskConfigText(format!(
        "You control one robot navigating a shared planar workspace with humans and other robots.\n\
         Coordinates are meters in a fixed frame (+x right, +y up); velocities are m/s.\n\
         Each control cycle lasts {dt} s. The world model lists one entity per line:\n\
         `self`, `robot-<id>`, and `human-<id>` with positions, velocities, distances,\n\
         distance trends, and one-step position predictions.\n\
         Objective: reach your goal position as quickly as possible without ever colliding,\n\
         while keeping your socially acceptable distance from every human and staying clear\n\
         of other robots.\n\
         Respond with exactly one JSON object: {{\"reasoning\": [\"...\"], \"action\": [vx, vy]}}\n\
         where [vx, vy] is your velocity command in m/s, no faster than your preferred speed."
    ))
}

/// Persona fragment rendered into the system prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaPromptFragment(pub String);

pub fn persona_fragment(persona: &RobotPersona) -> PersonaPromptFragment {
    PersonaPromptFragment(format!(
        "You are a {} with preferred speed {} m/s; keep a socially acceptable distance of {} m from every human.",
        persona.kind.label(),
        fmt2(persona.v_pref),
        fmt2(persona.rho_pref),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub attempt: u32,
    pub local_reason: String,
    pub global_reason: String,
}

/// Critic-feedback buffer `D_i`: ordered by attempt, FIFO-bounded, and
/// cleared at every environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackBuffer {
    entries: VecDeque<FeedbackEntry>,
    capacity: usize,
}

impl FeedbackBuffer {
    pub fn new(capacity: usize) -> Self {
        FeedbackBuffer { entries: VecDeque::new(), capacity: capacity.max(1) }
    }

    pub fn push(&mut self, entry: FeedbackEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeedbackEntry> {
        self.entries.iter()
    }

    fn render(&self) -> String {
        let mut out = String::new();
        if self.entries.is_empty() {
            return out;
        }
        out.push_str("\n\n");
        out.push_str(FEEDBACK_HEADER);
        for entry in &self.entries {
            if !entry.local_reason.is_empty() {
                out.push_str(&format!("\n[attempt {}] local critic: {}", entry.attempt, entry.local_reason));
            }
            if !entry.global_reason.is_empty() {
                out.push_str(&format!("\n[attempt {}] global critic: {}", entry.attempt, entry.global_reason));
            }
        }
        out
    }
}

/// One robot's proposed control command plus the chain that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProposal {
    pub robot_id: usize,
    pub action: Vec2,
    pub reasoning_chain: Vec<String>,
    pub attempt: u32,
    pub raw_text: String,
    /// True when repeated parse failures forced the zero-velocity fallback.
    pub degraded: bool,
}

impl ActionProposal {
    pub fn degraded_zero(robot_id: usize, attempt: u32, raw_text: String) -> Self {
        ActionProposal {
            robot_id,
            action: Vec2::ZERO,
            reasoning_chain: vec!["unparseable actor output; holding position".to_string()],
            attempt,
            raw_text,
            degraded: true,
        }
    }
}

/// Deterministic actor prompt template.
pub fn build_actor_prompt(
    robot_id: usize,
    world_model: &TextualWorldModel,
    shared: &TaskConfigText,
    persona: &PersonaPromptFragment,
    feedback: &FeedbackBuffer,
    attempt: u32,
) -> Prompt {
    let system = format!(
        "{}\n{}\nThink step by step: list the entities that constrain you, weigh goal progress \
         against social and collision risk, then decide. Put the numbered reasoning steps in the \
         \"reasoning\" array and finish with the \"action\" array.",
        shared.0, persona.0
    );
    let user = format!("Current world model:\n{}{}", world_model.text, feedback.render());
    Prompt { system, user, tag: PromptTag::Actor(robot_id), nonce: attempt }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no well-formed JSON object with an action array found")]
    NoActionObject,
    #[error("action array malformed: {detail}")]
    BadActionArray { detail: String },
    #[error("action components are not finite")]
    NonFiniteAction,
}

fn reasoning_strings(value: &serde_json::Value) -> Vec<String> {
    value
        .get("reasoning")
        .and_then(|r| r.as_array())
        .map(|items| {
            items
                .iter()
                .map(|item| match item.as_str() {
                    Some(s) => s.to_string(),
                    None => item.to_string(),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn extract_json_objects(raw: &str) -> impl Iterator<Item = serde_json::Value> + '_ {
    raw.char_indices().filter(|(_, c)| *c == '{').filter_map(move |(start, _)| {
        serde_json::Deserializer::from_str(&raw[start..])
            .into_iter::<serde_json::Value>()
            .next()
            .and_then(Result::ok)
    })
}

fn action_from_value(value: &serde_json::Value, key: &str) -> Option<Result<Vec2, ParseError>> {
    let arr = value.get(key)?.as_array()?;
    if arr.len() != 2 {
        return Some(Err(ParseError::BadActionArray {
            detail: format!("expected 2 components, got {}", arr.len()),
        }));
    }
    let (Some(x), Some(y)) = (arr[0].as_f64(), arr[1].as_f64()) else {
        return Some(Err(ParseError::BadActionArray { detail: "components are not numbers".into() }));
    };
    if !x.is_finite() || !y.is_finite() {
        return Some(Err(ParseError::NonFiniteAction));
    }
    Some(Ok(Vec2::new(x, y)))
}

/// Extract the first well-formed `{"reasoning": [...], "action": [vx, vy]}`
/// object from raw model output and clamp the action to the persona's
/// preferred speed, preserving direction.
pub fn parse_action(raw: &str, persona: &RobotPersona) -> Result<(Vec2, Vec<String>), ParseError> {
    for value in extract_json_objects(raw) {
        match action_from_value(&value, "action") {
            Some(Ok(action)) => {
                return Ok((action.clamp_norm(persona.v_pref), reasoning_strings(&value)));
            }
            Some(Err(err)) => return Err(err),
            None => continue,
        }
    }
    Err(ParseError::NoActionObject)
}

/// Parse the centralized baseline's joint response: one action per robot,
/// in the same order as the prompt's robot blocks.
pub fn parse_joint_actions(raw: &str, personas: &[RobotPersona]) -> Result<Vec<Vec2>, ParseError> {
    for value in extract_json_objects(raw) {
        let Some(actions) = value.get("actions").and_then(|a| a.as_array()) else {
            continue;
        };
        if actions.len() != personas.len() {
            return Err(ParseError::BadActionArray {
                detail: format!("expected {} actions, got {}", personas.len(), actions.len()),
            });
        }
        let mut out = Vec::with_capacity(personas.len());
        for (item, persona) in actions.iter().zip(personas) {
            let wrapped = serde_json::json!({ "action": item });
            match action_from_value(&wrapped, "action") {
                Some(Ok(action)) => out.push(action.clamp_norm(persona.v_pref)),
                Some(Err(err)) => return Err(err),
                None => return Err(ParseError::BadActionArray { detail: "non-array element".into() }),
            }
        }
        return Ok(out);
    }
    Err(ParseError::NoActionObject)
}

/// Prompt for the centralized baseline: aggregated world models of all
/// robots and a joint action schema, no actor-critic structure.
pub fn build_centralized_prompt(
    team: &[(usize, &TextualWorldModel, &RobotPersona)],
    shared: &TaskConfigText,
    parse_feedback: Option<&str>,
    attempt: u32,
) -> Prompt {
    let persona_lines: Vec<String> = team
        .iter()
        .map(|(id, _, persona)| {
            format!(
                "robot {id} is a {} (preferred speed {} m/s, social distance {} m)",
                persona.kind.label(),
                fmt2(persona.v_pref),
                fmt2(persona.rho_pref)
            )
        })
        .collect();
    let system = format!(
        "{}\nYou command the whole team at once. Team roster:\n{}\n\
         Respond with exactly one JSON object: {{\"reasoning\": [\"...\"], \"actions\": [[vx, vy], ...]}} \
         containing {CENTRALIZED_MARKER}, in the order the robots are listed.",
        shared.0,
        persona_lines.join("\n"),
    );
    let mut user = String::new();
    for (id, text, _) in team {
        user.push_str(&format!("{JOINT_BLOCK_PREFIX}{id}\n{}\n\n", text.text));
    }
    if let Some(feedback) = parse_feedback {
        user.push_str(&format!("\n{FEEDBACK_HEADER}\n{feedback}\n"));
    }
    let leader = team.first().map(|(id, _, _)| *id).unwrap_or(0);
    Prompt { system, user, tag: PromptTag::Actor(leader), nonce: attempt }
}

/// One robot's acting side: owns the feedback buffer across re-queries
/// within a step.
#[derive(Debug)]
pub struct Actor {
    pub robot_id: usize,
    pub persona: RobotPersona,
    pub feedback: FeedbackBuffer,
}

impl Actor {
    pub fn new(robot_id: usize, persona: RobotPersona, feedback_capacity: usize) -> Self {
        Actor { robot_id, persona, feedback: FeedbackBuffer::new(feedback_capacity) }
    }

    /// Compose, query, and parse one proposal. A parse failure is retried
    /// once with the error surfaced as feedback; a second failure degrades
    /// to the zero-velocity proposal. Gateway hard errors propagate.
    pub fn propose(
        &mut self,
        world_model: &TextualWorldModel,
        shared: &TaskConfigText,
        gateway: &Gateway,
        attempt: u32,
    ) -> Result<ActionProposal, GatewayError> {
        let fragment = persona_fragment(&self.persona);
        let mut last_raw = String::new();
        for parse_try in 0..2 {
            let prompt =
                build_actor_prompt(self.robot_id, world_model, shared, &fragment, &self.feedback, attempt);
            let completion = gateway.complete(&prompt)?;
            last_raw = completion.text.clone();
            match parse_action(&completion.text, &self.persona) {
                Ok((action, reasoning_chain)) => {
                    return Ok(ActionProposal {
                        robot_id: self.robot_id,
                        action,
                        reasoning_chain,
                        attempt,
                        raw_text: completion.text,
                        degraded: false,
                    });
                }
                Err(err) if parse_try == 0 => {
                    self.feedback.push(FeedbackEntry {
                        attempt,
                        local_reason: format!(
                            "your previous response could not be parsed ({err}); reply with exactly \
                             one JSON object {{\"reasoning\": [...], \"action\": [vx, vy]}}"
                        ),
                        global_reason: String::new(),
                    });
                }
                Err(_) => break,
            }
        }
        Ok(ActionProposal::degraded_zero(self.robot_id, attempt, last_raw))
    }
}
