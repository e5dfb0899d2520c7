//! Soft-constrained vehicle routing solver.
//!
//! Routes for CVRP, TSPTW and CVRPTW are improved by repeated 2-exchange
//! moves chosen by a learned policy. Capacity and time-window constraints
//! are soft: violations carry a finite cost weighted by Lagrangian
//! multipliers that are adapted on a slow timescale during training.

pub mod adam;
pub mod eval;
pub mod exec;
pub mod init;
pub mod instance;
pub mod model;
pub mod route;
pub mod trainer;
pub mod trajectory;

pub use eval::{evaluate_policy, random_policy_eval, InstanceMetrics, ReportRow};
pub use exec::ExecMode;
pub use instance::{generate_instance, load_instance, save_instance, Node, ProblemInstance, Variant};
pub use model::{ModelDims, ModelParams, NeuralPolicy, SelectMode};
pub use route::{Constraint, CostModel, Objective, RouteState, StepSignal, SwapAction, TwCostForm};
pub use trainer::{train, LagrangianState, TrainConfig, TrainOutcome};
pub use trajectory::{rollout, Policy, RandomPolicy, ReturnConfig, ReturnForm, Trajectory, Transition};
