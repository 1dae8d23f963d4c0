//! The per-step control loop: verify proposals with both critic tiers,
//! fuse the scores, re-query failing actors with critic feedback, and
//! release the executed joint action.
//!
//! Re-queries are bounded: after `max_requery` iterations the best-scoring
//! joint action seen so far is accepted and flagged `forced`, so a round
//! always terminates.

use crate::actor::{ActionProposal, Actor, FeedbackEntry, TaskConfigText};
use crate::critic::{
    critique_with_llm, global_penalty, local_penalty, CriticParams, CriticVerdict, TeamMember,
    GLOBAL_CRITIC_CHECKLIST, LOCAL_CRITIC_CHECKLIST,
};
use crate::fusion::{fuse, ChainTopology, FusionParams};
use crate::gateway::{Gateway, GatewayError};
use crate::sim::{LocalObservation, RobotPersona};
use crate::worldmodel::{fmt2, TextualWorldModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Everything the verification round needs to know about the current
/// step, aligned by index over the active robots (ascending id).
#[derive(Debug)]
pub struct StepContext<'a> {
    pub step_index: u64,
    pub t: f64,
    pub dt: f64,
    pub rho_h: f64,
    pub robot_ids: &'a [usize],
    pub observations: &'a [LocalObservation],
    pub texts: &'a [TextualWorldModel],
    pub personas: &'a [RobotPersona],
}

/// One fusion evaluation, serialized per line into the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub step: u64,
    pub attempt: u32,
    pub q: Vec<f64>,
    pub q_global: f64,
    pub c: Vec<f64>,
    pub h: f64,
    pub omega: f64,
    pub z: f64,
    /// Robot ids selected for re-query at this attempt.
    pub targets: Vec<usize>,
    pub forced: bool,
}

/// Result of one verification round.
#[derive(Debug)]
pub struct RoundOutcome {
    /// Accepted joint action, aligned with the step context.
    pub proposals: Vec<ActionProposal>,
    pub local_verdicts: Vec<CriticVerdict>,
    pub global_verdict: CriticVerdict,
    pub logs: Vec<RoundLog>,
    pub requeries: u32,
    pub forced: bool,
    pub final_z: f64,
}

/// Query every actor concurrently; results align with the context order.
pub fn propose_all(
    ctx: &StepContext<'_>,
    actors: &mut [Actor],
    shared: &TaskConfigText,
    gateway: &Gateway,
    attempt: u32,
) -> Result<Vec<ActionProposal>, GatewayError> {
    let results: Vec<Result<ActionProposal, GatewayError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = actors
            .iter_mut()
            .enumerate()
            .map(|(i, actor)| {
                let text = &ctx.texts[i];
                scope.spawn(move || actor.propose(text, shared, gateway, attempt))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("actor thread panicked")).collect()
    });
    results.into_iter().collect()
}

fn repropose_targets(
    ctx: &StepContext<'_>,
    actors: &mut [Actor],
    targets: &BTreeSet<usize>,
    proposals: &mut [ActionProposal],
    shared: &TaskConfigText,
    gateway: &Gateway,
    attempt: u32,
) -> Result<(), GatewayError> {
    let results: Vec<(usize, Result<ActionProposal, GatewayError>)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (i, actor) in actors.iter_mut().enumerate() {
            if !targets.contains(&i) {
                continue;
            }
            let text = &ctx.texts[i];
            handles.push((i, scope.spawn(move || actor.propose(text, shared, gateway, attempt))));
        }
        handles
            .into_iter()
            .map(|(i, h)| (i, h.join().expect("actor thread panicked")))
            .collect()
    });
    for (i, result) in results {
        proposals[i] = result?;
    }
    Ok(())
}

/// Deliver per-robot payloads to the leader along the chain.
///
/// The leader's aggregate lists entries in chain order (leader first,
/// then each hop outward), spanning every active robot.
pub fn aggregate_along_chain<T: Clone>(chain: &ChainTopology, payloads: &[(usize, T)]) -> Vec<(usize, T)> {
    chain
        .order
        .iter()
        .filter_map(|id| payloads.iter().find(|(pid, _)| pid == id).cloned())
        .collect()
}

fn evaluate_verdicts(
    ctx: &StepContext<'_>,
    proposals: &[ActionProposal],
    chain: &ChainTopology,
    gateway: &Gateway,
    critic_params: &CriticParams,
    attempt: u32,
) -> (Vec<CriticVerdict>, CriticVerdict) {
    let local_verdicts: Vec<CriticVerdict> = (0..proposals.len())
        .map(|i| {
            let deterministic = local_penalty(
                &ctx.observations[i],
                proposals[i].action,
                &ctx.personas[i],
                ctx.rho_h,
                ctx.dt,
                critic_params,
            );
            let context = format!(
                "{}\nProposed action: [{}, {}]",
                ctx.texts[i].text,
                fmt2(proposals[i].action.x),
                fmt2(proposals[i].action.y)
            );
            critique_with_llm(deterministic, &context, LOCAL_CRITIC_CHECKLIST, gateway, attempt)
        })
        .collect();

    // Team data travels the message chain to the leader, which runs the
    // global critique over the aggregate.
    let payloads: Vec<(usize, usize)> = ctx.robot_ids.iter().copied().map(|id| (id, id)).collect();
    let aggregated = aggregate_along_chain(chain, &payloads);
    let team: Vec<TeamMember<'_>> = aggregated
        .iter()
        .map(|&(robot_id, _)| {
            let i = ctx
                .robot_ids
                .iter()
                .position(|&id| id == robot_id)
                .expect("chain spans the active robots");
            TeamMember {
                robot_id,
                obs: &ctx.observations[i],
                action: proposals[i].action,
                persona: &ctx.personas[i],
            }
        })
        .collect();
    let deterministic = global_penalty(&team, ctx.t, ctx.rho_h, ctx.dt, critic_params);
    let team_context: Vec<String> = team
        .iter()
        .map(|m| {
            format!(
                "robot {} at ({},{}) proposes [{}, {}]",
                m.robot_id,
                fmt2(m.obs.self_state.p.x),
                fmt2(m.obs.self_state.p.y),
                fmt2(m.action.x),
                fmt2(m.action.y)
            )
        })
        .collect();
    let context = format!("t = {} s\n{}", fmt2(ctx.t), team_context.join("\n"));
    let global_verdict =
        critique_with_llm(deterministic, &context, GLOBAL_CRITIC_CHECKLIST, gateway, attempt);
    (local_verdicts, global_verdict)
}

/// Run one verification round over the initial proposals.
///
/// While the fused score misses the threshold and budget remains, the
/// actors whose local score falls below the fused score are re-queried
/// with both critics' reasoning pushed into their feedback buffers. On
/// budget exhaustion the best joint action seen is accepted and flagged.
pub fn verification_round(
    ctx: &StepContext<'_>,
    initial: Vec<ActionProposal>,
    chain: &ChainTopology,
    actors: &mut [Actor],
    shared: &TaskConfigText,
    gateway: &Gateway,
    fusion_params: &FusionParams,
    critic_params: &CriticParams,
) -> Result<RoundOutcome, GatewayError> {
    assert_eq!(initial.len(), ctx.robot_ids.len(), "one proposal per active robot");

    let mut proposals = initial;
    let mut logs: Vec<RoundLog> = Vec::new();
    let mut requeries: u32 = 0;
    let mut attempt: u32 = 0;
    let mut best: Option<(f64, Vec<ActionProposal>, Vec<CriticVerdict>, CriticVerdict)> = None;

    loop {
        let (local_verdicts, global_verdict) =
            evaluate_verdicts(ctx, &proposals, chain, gateway, critic_params, attempt);
        let q: Vec<f64> = local_verdicts.iter().map(|v| v.score).collect();
        let fusion = fuse(&q, global_verdict.score, fusion_params);

        let accepted = fusion.fused >= fusion_params.z_th;
        let exhausted = requeries >= fusion_params.max_requery;
        let forced = !accepted && exhausted;
        logs.push(RoundLog {
            step: ctx.step_index,
            attempt,
            q: q.clone(),
            q_global: global_verdict.score,
            c: fusion.confidence.clone(),
            h: fusion.entropy,
            omega: fusion.omega,
            z: fusion.fused,
            targets: fusion.requery_targets.iter().map(|&i| ctx.robot_ids[i]).collect(),
            forced,
        });

        if best.as_ref().map_or(true, |(z, ..)| fusion.fused > *z) {
            best = Some((fusion.fused, proposals.clone(), local_verdicts.clone(), global_verdict.clone()));
        }

        if accepted {
            return Ok(RoundOutcome {
                proposals,
                local_verdicts,
                global_verdict,
                logs,
                requeries,
                forced: false,
                final_z: fusion.fused,
            });
        }
        if exhausted {
            let (z, proposals, local_verdicts, global_verdict) =
                best.expect("at least one evaluation ran");
            return Ok(RoundOutcome {
                proposals,
                local_verdicts,
                global_verdict,
                logs,
                requeries,
                forced: true,
                final_z: z,
            });
        }

        for &i in &fusion.requery_targets {
            actors[i].feedback.push(FeedbackEntry {
                attempt,
                local_reason: local_verdicts[i].reasoning.clone(),
                global_reason: global_verdict.reasoning.clone(),
            });
        }
        requeries += 1;
        attempt += 1;
        repropose_targets(ctx, actors, &fusion.requery_targets, &mut proposals, shared, gateway, attempt)?;
    }
}

#[cfg(test)]
mod tests;
