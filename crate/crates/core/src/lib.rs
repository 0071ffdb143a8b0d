//! Core of the analysis fabric: the shared domain model, the workflow
//! repository, key-based authentication and role authorization, the task
//! lifecycle, multi-site orchestration and result analytics.

pub mod analytics;
pub mod auth;
pub mod domain;
pub mod orchestrator;
pub mod repo;
pub mod tasks;
pub mod wire;
