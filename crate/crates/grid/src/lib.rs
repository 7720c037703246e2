//! Radial distribution network laboratory: case model, graph matrices,
//! Newton-Raphson AC power flow, stochastic renewable availability with
//! mismatch costs, and the dispatch objectives built on top of them.

pub mod case;
pub mod dispatch;
pub mod graph;
pub mod linalg;
pub mod objectives;
pub mod power_flow;
pub mod stochastic;

pub use case::{
    load_case, validate_case, Bus, Branch, CaseError, CostParams, Generator, GeneratorKind,
    NetworkCase, ValidationReport,
};
pub use dispatch::{ControlMode, DispatchAction, GenSetpoint};
pub use graph::{build_matrices, GraphMatrices};
pub use objectives::{
    evaluation_metrics, renewable_accommodation, step_reward, voltage_fluctuation,
    EvaluationMetrics, ObjectiveWeights, StepOutcome,
};
pub use power_flow::{
    check_constraints, solve_power_flow, system_losses, ConstraintKind, ConstraintReport,
    PowerFlowOptions, PowerFlowSolution,
};
pub use stochastic::{
    mismatch_costs, sample_availability, thermal_cost, total_generation_cost, AvailabilitySample,
    GenAvailability, PowerDensity, SolarParams, WindParams,
};
