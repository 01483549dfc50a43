//! Actor-critic agent: heading-graph and grid encoders, two stage-masked heads,
//! curiosity by random network distillation, PPO training and baselines.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod encoders;
pub mod features;
pub mod nn;
pub mod params;
pub mod policy;
pub mod rnd;
pub mod train;

pub use baselines::{run_baseline, run_episode, BaselinePolicy, EpisodeTrace, TraceStep};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use encoders::{ContentEncoder, ContentMode, Gcn};
pub use features::{featurize, Features};
pub use nn::embed_text;
pub use params::{Adam, AdamConfig, ParamId, Params};
pub use policy::{NetConfig, PolicyError, PolicyNet, PolicyOutput};
pub use rnd::{Rnd, RndConfig, RunningStd};
pub use train::{evaluate, train, Agent, EvalReport, IterationMetrics, TrainConfig, TrainError, Trainer};
