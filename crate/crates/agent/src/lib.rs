//! Decision layer over the feeder simulator: the control MDP, the
//! multi-grained spatial-temporal graph encoder, the DDPG agent, and the
//! per-step metaheuristic baselines.

pub mod baselines;
pub mod ddpg;
pub mod encoder;
pub mod env;

pub use baselines::{
    evaluate_policy, metaheuristic_step, random_action, MetaheuristicKind, PolicyEvaluation,
    SearchBudget, SearchOutcome,
};
pub use ddpg::{train, DdpgAgent, DdpgConfig, ReplayBuffer, TrainLog, Transition};
pub use encoder::{Encoder, EncoderConfig, MgAstgcn, MlpEncoder, StComponent};
pub use env::{
    ActionBounds, EnvConfig, Environment, SegmentSet, StepRecord, ThermalUnitState, WarmupMode,
};
