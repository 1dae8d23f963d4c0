//! Per-robot spatio-temporal interaction graphs and their canonical
//! textual serialization.
//!
//! Each robot builds a graph over itself and every visible entity from its
//! local observation (plus one step of history for speed changes), then
//! serializes it into the fixed-grammar text consumed by actors and
//! critics. Serialization is canonical: field-equal graphs produce
//! byte-identical text.

use crate::sim::{LocalObservation, RobotPersona};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Dead-band for classifying relative-distance trends, m/s.
pub const TREND_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    SelfNode,
    RobotNode,
    HumanNode,
}

/// Graph-local identity of a node: entity class plus per-class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub id: usize,
}

impl NodeRef {
    pub fn label(&self) -> String {
        match self.kind {
            NodeKind::SelfNode => "self".to_string(),
            NodeKind::RobotNode => format!("robot-{}", self.id),
            NodeKind::HumanNode => format!("human-{}", self.id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmNode {
    pub node: NodeRef,
    pub p: Vec2,
    pub v: Vec2,
    /// Goal: carried by the self node only.
    pub g: Option<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Approaching,
    Receding,
    Static,
}

impl Trend {
    pub fn label(self) -> &'static str {
        match self {
            Trend::Approaching => "approaching",
            Trend::Receding => "receding",
            Trend::Static => "static",
        }
    }
}

/// Spatial edge from the self node to one observed entity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmSpatialEdge {
    pub to: NodeRef,
    pub distance: f64,
    pub trend: Trend,
    /// Rate at which the separation shrinks; positive when approaching.
    pub closing_speed: f64,
}

/// Temporal edge: goal linkage for the self node, motion extrapolation for
/// everyone else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WmTemporalEdge {
    SelfGoal { goal_distance: f64 },
    Motion { node: NodeRef, accel: f64, p_next: Vec2 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelGraph {
    pub nodes: Vec<WmNode>,
    pub spatial_edges: Vec<WmSpatialEdge>,
    pub temporal_edges: Vec<WmTemporalEdge>,
    pub t: f64,
}

/// Canonical text form of a graph plus a label -> line lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextualWorldModel {
    pub text: String,
    pub line_index: BTreeMap<String, usize>,
}

fn trend_of(d_dist_dt: f64) -> Trend {
    if d_dist_dt < -TREND_EPSILON {
        Trend::Approaching
    } else if d_dist_dt > TREND_EPSILON {
        Trend::Receding
    } else {
        Trend::Static
    }
}

fn spatial_edge(self_p: Vec2, self_v: Vec2, to: NodeRef, p: Vec2, v: Vec2) -> WmSpatialEdge {
    let rel_p = p - self_p;
    let rel_v = v - self_v;
    let distance = rel_p.norm();
    let d_dist_dt = if distance > 0.0 { rel_p.dot(rel_v) / distance } else { 0.0 };
    WmSpatialEdge { to, distance, trend: trend_of(d_dist_dt), closing_speed: -d_dist_dt }
}

fn speed_in(prev: &LocalObservation, node: NodeRef) -> Option<f64> {
    let list = match node.kind {
        NodeKind::RobotNode => &prev.visible_robots,
        NodeKind::HumanNode => &prev.visible_humans,
        NodeKind::SelfNode => return Some(prev.self_state.v.norm()),
    };
    list.iter().find(|(id, _, _)| *id == node.id).map(|(_, _, v)| v.norm())
}

/// Build the robot's interaction graph from its observation and, when
/// available, the same robot's observation from exactly one step earlier.
///
/// Entities that were not visible in `prev_obs` carry zero speed change.
pub fn build_graph(obs: &LocalObservation, prev_obs: Option<&LocalObservation>, dt: f64) -> WorldModelGraph {
    if let Some(prev) = prev_obs {
        debug_assert_eq!(prev.observer_id, obs.observer_id, "history must come from the same robot");
        debug_assert!((obs.t - prev.t - dt).abs() < 1e-9, "history must be exactly one step old");
    }

    let me = &obs.self_state;
    let self_ref = NodeRef { kind: NodeKind::SelfNode, id: me.id };

    let mut nodes = vec![WmNode { node: self_ref, p: me.p, v: me.v, g: Some(me.g) }];
    let mut spatial_edges = Vec::new();
    let mut temporal_edges = vec![WmTemporalEdge::SelfGoal { goal_distance: me.p.dist(me.g) }];

    let mut push_entity = |kind: NodeKind, id: usize, p: Vec2, v: Vec2| {
        let node = NodeRef { kind, id };
        nodes.push(WmNode { node, p, v, g: None });
        spatial_edges.push(spatial_edge(me.p, me.v, node, p, v));
        let accel = match prev_obs.and_then(|prev| speed_in(prev, node)) {
            Some(prev_speed) => (v.norm() - prev_speed) / dt,
            None => 0.0,
        };
        temporal_edges.push(WmTemporalEdge::Motion { node, accel, p_next: p + v * dt });
    };

    for &(id, p, v) in &obs.visible_robots {
        push_entity(NodeKind::RobotNode, id, p, v);
    }
    for &(id, p, v) in &obs.visible_humans {
        push_entity(NodeKind::HumanNode, id, p, v);
    }

    WorldModelGraph { nodes, spatial_edges, temporal_edges, t: obs.t }
}

/// Two-decimal fixed formatting with negative zero normalized away.
pub fn fmt2(x: f64) -> String {
    let s = format!("{:.2}", x);
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn fmt_vec(v: Vec2) -> String {
    format!("({},{})", fmt2(v.x), fmt2(v.y))
}

/// Serialize a graph into the canonical line grammar.
///
/// One entity per line, self first, then robots by id, then humans by id:
///
/// ```text
/// self: pos=(x,y) vel=(x,y) goal=(x,y) goal_dist=D pref_speed=S social_dist=P
/// robot-<id>: pos=(x,y) vel=(x,y) dist=D trend=<approaching|receding|static> accel=A next=(x,y)
/// human-<id>: pos=(x,y) vel=(x,y) dist=D trend=T accel=A next=(x,y)
/// ```
pub fn textualize(graph: &WorldModelGraph, persona: &RobotPersona) -> TextualWorldModel {
    let mut lines: Vec<String> = Vec::with_capacity(graph.nodes.len());
    let mut line_index = BTreeMap::new();

    let mut ordered: Vec<&WmNode> = graph.nodes.iter().collect();
    ordered.sort_by_key(|n| n.node);

    for node in ordered {
        let label = node.node.label();
        line_index.insert(label.clone(), lines.len());
        match node.node.kind {
            NodeKind::SelfNode => {
                let goal = node.g.unwrap_or(node.p);
                let goal_dist = graph
                    .temporal_edges
                    .iter()
                    .find_map(|e| match e {
                        WmTemporalEdge::SelfGoal { goal_distance } => Some(*goal_distance),
                        _ => None,
                    })
                    .unwrap_or_else(|| node.p.dist(goal));
                lines.push(format!(
                    "self: pos={} vel={} goal={} goal_dist={} pref_speed={} social_dist={}",
                    fmt_vec(node.p),
                    fmt_vec(node.v),
                    fmt_vec(goal),
                    fmt2(goal_dist),
                    fmt2(persona.v_pref),
                    fmt2(persona.rho_pref),
                ));
            }
            NodeKind::RobotNode | NodeKind::HumanNode => {
                let spatial = graph
                    .spatial_edges
                    .iter()
                    .find(|e| e.to == node.node)
                    .expect("one spatial edge per non-self node");
                let (accel, p_next) = graph
                    .temporal_edges
                    .iter()
                    .find_map(|e| match e {
                        WmTemporalEdge::Motion { node: n, accel, p_next } if *n == node.node => {
                            Some((*accel, *p_next))
                        }
                        _ => None,
                    })
                    .expect("one temporal edge per node");
                lines.push(format!(
                    "{}: pos={} vel={} dist={} trend={} accel={} next={}",
                    label,
                    fmt_vec(node.p),
                    fmt_vec(node.v),
                    fmt2(spatial.distance),
                    spatial.trend.label(),
                    fmt2(accel),
                    fmt_vec(p_next),
                ));
            }
        }
    }

    TextualWorldModel { text: lines.join("\n"), line_index }
}
