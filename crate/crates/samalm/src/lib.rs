//! SAMALM: a decentralized multi-robot socially-aware navigation simulator
//! driven by a multi-agent LLM actor-critic pipeline.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`sim`]: ground-truth environment (kinematics, ORCA crowd, FOV
//!   observation, episode events)
//! - [`worldmodel`]: per-robot spatio-temporal graphs and their canonical
//!   textual serialization
//! - [`gateway`]: uniform completion interface over HTTP, scripted, and
//!   record/replay backends
//! - [`actor`]: persona-conditioned prompts and control-command parsing
//! - [`critic`]: deterministic local/global penalty engines plus LLM
//!   reasoning wrappers
//! - [`fusion`]: entropy-based score fusion and the verification/re-query
//!   round
//! - [`harness`]: batch experiment runner, metrics, and artifact export

pub mod actor;
pub mod critic;
pub mod fusion;
pub mod gateway;
pub mod harness;
pub mod orchestrator;
pub mod sim;
pub mod vec2;
pub mod worldmodel;

pub use vec2::Vec2;
