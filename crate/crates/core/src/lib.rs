//! Insight-driven engine for hierarchical (multi-level header) tables.
//!
//! The crate is organised bottom-up:
//!
//! - [`table`]: heading trees, the cell grid, blocks and the canonical JSON format.
//! - [`transform`]: the fourteen agent actions (six transformations, eight selection moves).
//! - [`insight`]: twelve single-block detectors plus multi-block recommendation.
//! - [`env`]: the two-stage episode, metrics (AR/IR/ER) and rewards.
//! - [`agent`]: heading-graph and content encoders, actor-critic PPO with RND curiosity,
//!   and random/greedy/beam baselines.
//! - [`experiments`]: sweep, robustness and per-kind counting harnesses.

pub mod agent;
pub mod config;
pub mod env;
pub mod experiments;
pub mod insight;
pub mod table;
pub mod transform;

pub use config::EngineConfig;
pub use env::{EpisodeConfig, Metrics, RewardBreakdown, RewardWeights, TableEnv};
pub use insight::{ChartTag, DetectorConfig, Finding, InsightKind, InsightRecord, Provenance};
pub use table::{parse_table, serialize_table, Block, NodeId, RecordId, Side, TableDocument, TableState};
pub use transform::{ActionKind, ActionMask, Stage};
