//! Fixture workflows reproducing the two motivating use cases at desk
//! scale, their seeded datasets, reference oracles, and a harness that runs
//! them on an in-process fabric.

pub mod assets;
pub mod deploy;
pub mod generate;
pub mod oracle;
pub mod workflows;

pub use assets::{FixtureWorkflow, ALL, EARTH_EXTRACT, EARTH_SUMMARY, LIGHT_SWITCH};
pub use deploy::FixtureError;
pub use generate::{generate_datasets, write_datasets};
pub use workflows::{run_acceptance_workflows, Criterion, Harness, Report};
