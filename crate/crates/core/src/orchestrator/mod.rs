//! Turns a validated workflow configuration into phases and drives them
//! across the site agents.

mod execute;
mod plan;
mod stop;

pub use execute::{
    artifact_base_name, execute, parse_commands, ExecuteError, ExecutionObserver, ExecutionOutcome,
    ExecutionRequest, NullObserver, SiteClient, SiteError, COMMANDS_ARTIFACT, TASK_INPUT_PRODUCER,
};
pub use plan::{plan, routing_has_cycle, ExecutionPlan, Phase, PlanError, PlannedStep};
pub use stop::{evaluate_stop, StopDecision, EPSILON};
