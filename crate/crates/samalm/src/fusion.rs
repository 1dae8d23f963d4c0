//! Entropy-based fusion of local and global critic scores, the re-query
//! target rule, and the nearest-neighbor message chain.
//!
//! Local scores are clamped to `[eps_clamp, 100]` and normalized into a
//! confidence distribution; its Shannon entropy, normalized by the
//! maximum `kappa * ln(N)`, weights the blend between the mean raw local
//! score and the global score. High entropy (local critics agree) favors
//! the locals; low entropy (disagreement) hands weight to the global
//! critic.

use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// Entropy scale hyperparameter; cancels in the weight but kept
    /// configurable.
    pub kappa: f64,
    /// Acceptance threshold on the fused score.
    pub z_th: f64,
    /// Score floor applied before normalization (raw scores can be
    /// arbitrarily negative).
    pub eps_clamp: f64,
    /// Re-query budget per verification round.
    pub max_requery: u32,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams { kappa: 1.0, z_th: 80.0, eps_clamp: 1.0, max_requery: 3 }
    }
}

/// Output of one fusion evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    /// Confidence distribution over the local critics (sums to 1).
    pub confidence: Vec<f64>,
    /// Shannon entropy of the confidence distribution, scaled by kappa.
    pub entropy: f64,
    /// Disagreement weight in [0, 1].
    pub omega: f64,
    /// Fused score Z.
    pub fused: f64,
    /// Indices (into the score list) due for re-query; empty when the
    /// fused score clears the threshold.
    pub requery_targets: BTreeSet<usize>,
}

/// Normalized confidence distribution over clamped local scores.
pub fn confidence(scores: &[f64], params: &FusionParams) -> Vec<f64> {
    let clamped: Vec<f64> = scores.iter().map(|q| q.clamp(params.eps_clamp, 100.0)).collect();
    let total: f64 = clamped.iter().sum();
    clamped.into_iter().map(|q| q / total).collect()
}

/// Fuse local scores with the global score.
///
/// With a single robot the local score stands alone (omega = 1).
/// Re-query targets are exactly the raw scores strictly below the fused
/// score, and only when the fused score misses the threshold.
pub fn fuse(scores: &[f64], global_score: f64, params: &FusionParams) -> FusionResult {
    assert!(!scores.is_empty(), "fusion needs at least one local score");
    let n = scores.len();
    let c = confidence(scores, params);
    let entropy: f64 = -params.kappa * c.iter().map(|p| p * p.ln()).sum::<f64>();
    let omega = if n == 1 {
        1.0
    } else {
        (entropy / (params.kappa * (n as f64).ln())).clamp(0.0, 1.0)
    };
    let mean_local: f64 = scores.iter().sum::<f64>() / n as f64;
    let fused = omega * mean_local + (1.0 - omega) * global_score;
    let requery_targets = if fused < params.z_th {
        select_requery_targets(scores, fused)
    } else {
        BTreeSet::new()
    };
    FusionResult { confidence: c, entropy, omega, fused, requery_targets }
}

/// Indices of local scores strictly below the fused score.
pub fn select_requery_targets(scores: &[f64], fused: f64) -> BTreeSet<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &q)| q < fused)
        .map(|(i, _)| i)
        .collect()
}

/// Communication chain: a permutation of the active robots with the
/// leader at the head; team data flows along it to the leader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTopology {
    pub order: Vec<usize>,
    pub leader: usize,
}

/// Greedy nearest-neighbor chain over `(robot_id, position)` pairs,
/// starting from (and led by) the lowest id; distance ties break to the
/// lower id. Rebuilt every step from current positions.
pub fn build_chain(positions: &[(usize, Vec2)]) -> ChainTopology {
    assert!(!positions.is_empty(), "chain needs at least one robot");
    let mut remaining: Vec<(usize, Vec2)> = positions.to_vec();
    remaining.sort_by_key(|(id, _)| *id);
    let mut order = vec![remaining.remove(0)];
    while !remaining.is_empty() {
        let tail = order.last().expect("order is non-empty").1;
        let mut best = 0;
        for (i, (id, p)) in remaining.iter().enumerate() {
            let (best_id, best_p) = remaining[best];
            let (d, bd) = (p.dist_sq(tail), best_p.dist_sq(tail));
            if d < bd || (d == bd && *id < best_id) {
                best = i;
            }
        }
        order.push(remaining.remove(best));
    }
    let order: Vec<usize> = order.into_iter().map(|(id, _)| id).collect();
    ChainTopology { leader: order[0], order }
}
