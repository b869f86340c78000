//! Standard-library side of agentmesh: file formats, the deterministic
//! scenario simulator and the pieces the `agentmesh` binary is built from.
//! The algorithms themselves live in [`agentmesh_core`].

pub mod cli;
pub mod corpus;
pub mod error;
pub mod files;
pub mod simnet;

pub use error::{AppError, Diagnostic};
pub use simnet::{
    run_scenario, RunOptions, ScenarioConfig, ScenarioInputs, ScenarioKind, ScenarioReport,
};
