use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use async_trait::async_trait;
use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio_util::sync::CancellationToken;

use super::plan::{ExecutionPlan, Phase, PlannedStep};
use super::stop::{evaluate_stop, StopDecision};
use crate::domain::{
    render_command_file, Command, DatasetId, FileSet, SiteId, StepBundle, StepOutput, TaskId, UserId, WorkflowConfig,
    COMMAND_FILE,
};

/// Coordinator artifact selecting each worker's next command, one
/// `site=Command` per line.
pub const COMMANDS_ARTIFACT: &str = "commands.txt";
/// Producer prefix for artifacts supplied with the task itself.
pub const TASK_INPUT_PRODUCER: &str = "input";

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SiteError {
    #[error("site {site} unreachable: {detail}")]
    Unreachable { site: SiteId, detail: String },
    #[error("step {step} on {site} failed: {message}")]
    StepFailed { site: SiteId, step: String, message: String },
    #[error("site {site} rejected the request ({code}): {message}")]
    Rejected { site: SiteId, code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecuteError {
    #[error("site {site} unreachable: {detail}")]
    SiteUnreachable { site: SiteId, detail: String },
    #[error("step {step} on {site} failed: {message}")]
    StepFailed { site: SiteId, step: String, message: String },
    #[error("execution canceled")]
    Canceled,
}

impl From<SiteError> for ExecuteError {
    fn from(e: SiteError) -> Self {
        match e {
            SiteError::Unreachable { site, detail } => ExecuteError::SiteUnreachable { site, detail },
            SiteError::StepFailed { site, step, message } => ExecuteError::StepFailed { site, step, message },
            SiteError::Rejected { site, code, message } => ExecuteError::StepFailed {
                site,
                step: code,
                message,
            },
        }
    }
}

/// Transport to the site agents.
#[async_trait]
pub trait SiteClient: Send + Sync {
    async fn run_step(&self, bundle: StepBundle) -> Result<StepOutput, SiteError>;
    /// Best-effort abort of everything the site holds for `task`.
    async fn terminate(&self, site: &SiteId, task: &TaskId) -> Result<(), SiteError>;
}

pub trait ExecutionObserver: Send + Sync {
    fn step_finished(&self, _output: &StepOutput, _completed: usize, _planned: usize) {}
    fn log(&self, _message: &str) {}
}

pub struct NullObserver;
impl ExecutionObserver for NullObserver {}

pub struct ExecutionRequest {
    pub task_id: TaskId,
    pub user: UserId,
    pub plan: ExecutionPlan,
    pub config: WorkflowConfig,
    pub scripts: FileSet,
    pub task_inputs: FileSet,
    pub cancel: CancellationToken,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub final_outputs: Vec<StepOutput>,
    pub iterations: u32,
    pub metric_history: Vec<f64>,
    pub steps_run: usize,
    /// Terminate acknowledgements per site.
    pub terminated: BTreeMap<SiteId, bool>,
}

/// Strips the `.<epoch>` suffix added when results are timestamped.
pub fn artifact_base_name(name: &str, timestamped: bool) -> &str {
    if !timestamped {
        return name;
    }
    match name.rsplit_once('.') {
        Some((base, digits)) if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) => base,
        _ => name,
    }
}

pub fn parse_commands(text: &str) -> BTreeMap<SiteId, Command> {
    text.lines()
        .filter_map(|line| {
            let (site, cmd) = line.trim().split_once('=')?;
            Some((SiteId::new(site.trim()), cmd.trim().parse().ok()?))
        })
        .collect()
}

struct Run<'a> {
    req: &'a ExecutionRequest,
    client: Arc<dyn SiteClient>,
    observer: &'a dyn ExecutionObserver,
    /// Latest artifacts per producer; newer names overwrite older ones.
    latest: BTreeMap<SiteId, FileSet>,
    completed: usize,
    planned: usize,
}

impl Run<'_> {
    fn datasets_for(&self, site: &SiteId) -> Vec<DatasetId> {
        self.req
            .config
            .dataset_ids
            .iter()
            .filter(|d| &d.site == site)
            .map(|d| d.dataset.clone())
            .collect()
    }

    fn bundle(&self, step: &PlannedStep, command: Command, iteration: u32) -> StepBundle {
        let spec = &self.req.config.steps[step.step_index];
        let mut inputs = FileSet::new();
        inputs.insert(COMMAND_FILE.into(), render_command_file(command, iteration).into_bytes());
        for (name, bytes) in &self.req.task_inputs {
            inputs.insert(format!("{TASK_INPUT_PRODUCER}/{name}"), bytes.clone());
        }
        for producer in self.req.plan.producers_for(&step.site) {
            for (name, bytes) in self.latest.get(&producer).into_iter().flatten() {
                inputs.insert(format!("{producer}/{name}"), bytes.clone());
            }
        }
        StepBundle {
            task_id: self.req.task_id.clone(),
            user: self.req.user.clone(),
            iteration,
            site_id: step.site.clone(),
            step_index: step.step_index,
            script_name: spec.script.clone(),
            scripts: self.req.scripts.clone(),
            params: spec.params.clone(),
            command,
            inputs,
            dataset_ids: self.datasets_for(&step.site),
            keep_local_copy: self.req.config.keep_local_copy,
            timestamp_results: self.req.config.timestamp_results,
        }
    }

    async fn run_phase(
        &mut self,
        phase: &Phase,
        iteration: u32,
        commands: &BTreeMap<SiteId, Command>,
    ) -> Result<Vec<StepOutput>, ExecuteError> {
        let mut chains: BTreeMap<SiteId, Vec<StepBundle>> = BTreeMap::new();
        for step in &phase.steps {
            let command = commands.get(&step.site).copied().unwrap_or(step.command);
            let b = self.bundle(step, command, iteration);
            self.observer.log(&format!(
                "dispatch {} step {} ({}) {}={}",
                step.site, step.step_index, b.script_name, command, iteration
            ));
            chains.entry(step.site.clone()).or_default().push(b);
        }
        let client = self.client.clone();
        let futures = chains.into_values().map(|bundles| {
            let client = client.clone();
            async move {
                let mut outs = Vec::with_capacity(bundles.len());
                for b in bundles {
                    outs.push(client.run_step(b).await?);
                }
                Ok::<_, SiteError>(outs)
            }
        });
        let outcome = tokio::select! {
            biased;
            _ = self.req.cancel.cancelled() => return Err(ExecuteError::Canceled),
            r = try_join_all(futures) => r?,
        };
        let outputs: Vec<StepOutput> = outcome.into_iter().flatten().collect();
        let timestamped = self.req.config.timestamp_results;
        for out in &outputs {
            let slot = self.latest.entry(out.site_id.clone()).or_default();
            for (name, bytes) in &out.artifacts {
                // A newer timestamped copy replaces every older one.
                let base = artifact_base_name(name, timestamped);
                slot.retain(|old, _| artifact_base_name(old, timestamped) != base);
                slot.insert(name.clone(), bytes.clone());
            }
            self.completed += 1;
            self.observer.step_finished(out, self.completed, self.planned);
        }
        Ok(outputs)
    }

    async fn terminate_all(&self, iteration: u32, retired: &BTreeSet<SiteId>) -> BTreeMap<SiteId, bool> {
        let mut acks = BTreeMap::new();
        let futures = self.req.plan.sites.iter().filter(|s| !retired.contains(*s)).map(|site| {
            let step_index = self
                .req
                .config
                .steps
                .iter()
                .rposition(|s| &s.site == site)
                .unwrap_or_default();
            let step = PlannedStep {
                site: site.clone(),
                step_index,
                command: Command::Terminate,
            };
            let mut bundle = self.bundle(&step, Command::Terminate, iteration);
            bundle.scripts.clear();
            bundle.inputs.retain(|name, _| name == COMMAND_FILE);
            let client = self.client.clone();
            async move { (bundle.site_id.clone(), client.run_step(bundle).await.map(|o| o.local_copy_kept)) }
        });
        for (site, result) in futures::future::join_all(futures).await {
            match result {
                Ok(_) => {
                    acks.insert(site, true);
                }
                Err(e) => {
                    self.observer.log(&format!("terminate {site}: {e}"));
                    acks.insert(site, false);
                }
            }
        }
        for site in retired {
            acks.insert(site.clone(), true);
        }
        acks
    }

    async fn abort_all(&self) {
        let task = &self.req.task_id;
        let futures = self.req.plan.sites.iter().map(|site| {
            let client = self.client.clone();
            async move { (site, client.terminate(site, task).await) }
        });
        for (site, r) in futures::future::join_all(futures).await {
            if let Err(e) = r {
                self.observer.log(&format!("abort {site}: {e}"));
            }
        }
    }

    async fn drive(&mut self) -> Result<(Vec<StepOutput>, u32, Vec<f64>, BTreeSet<SiteId>), ExecuteError> {
        let plan = self.req.plan.clone();
        let none = BTreeMap::new();
        let mut all_setup = Vec::new();
        for phase in &plan.setup {
            all_setup.extend(self.run_phase(phase, 0, &none).await?);
        }
        let Some(coordinator) = plan.coordinator.clone() else {
            let sinks: Vec<StepOutput> = plan
                .sites
                .iter()
                .filter(|s| plan.routing.get(*s).is_none_or(|t| t.is_empty()))
                .filter_map(|s| all_setup.iter().rev().find(|o| &o.site_id == s).cloned())
                .collect();
            return Ok((sinks, 0, Vec::new(), BTreeSet::new()));
        };

        let timestamped = self.req.config.timestamp_results;
        let metric = plan.stop.metric_name.clone();
        let mut commands: BTreeMap<SiteId, Command> = BTreeMap::new();
        let mut retired = BTreeSet::new();
        let mut history = Vec::new();
        let mut last = Vec::new();
        let mut iteration = 0;
        for k in 1..=plan.stop.max_iterations {
            iteration = k;
            for phase in &plan.iteration {
                let active = Phase {
                    steps: phase.steps.iter().filter(|s| !retired.contains(&s.site)).cloned().collect(),
                };
                if active.steps.is_empty() {
                    continue;
                }
                let outs = self.run_phase(&active, k, &commands).await?;
                for s in &active.steps {
                    if commands.get(&s.site) == Some(&Command::Terminate) {
                        retired.insert(s.site.clone());
                    }
                }
                if let Some(out) = outs.iter().find(|o| o.site_id == coordinator) {
                    last = vec![out.clone()];
                }
            }
            let out = last.first().filter(|o| o.iteration == k).ok_or_else(|| ExecuteError::StepFailed {
                site: coordinator.clone(),
                step: format!("iteration {k}"),
                message: "coordinator produced no output".into(),
            })?;
            let value = *out.metrics.get(&metric).ok_or_else(|| ExecuteError::StepFailed {
                site: coordinator.clone(),
                step: format!("iteration {k}"),
                message: format!("coordinator did not report metric {metric}"),
            })?;
            history.push(value);
            commands = out
                .artifacts
                .iter()
                .find(|(name, _)| artifact_base_name(name, timestamped) == COMMANDS_ARTIFACT)
                .map(|(_, bytes)| parse_commands(&String::from_utf8_lossy(bytes)))
                .unwrap_or_default();
            commands.retain(|site, cmd| *site != coordinator && *cmd != Command::Aggregate);
            self.observer.log(&format!("iteration {k} {metric}={value}"));
            if evaluate_stop(&history, &plan.stop) == StopDecision::Stop {
                break;
            }
        }
        Ok((last, iteration, history, retired))
    }
}

pub async fn execute(
    req: &ExecutionRequest,
    client: Arc<dyn SiteClient>,
    observer: &dyn ExecutionObserver,
) -> Result<ExecutionOutcome, ExecuteError> {
    let mut run = Run {
        req,
        client,
        observer,
        latest: BTreeMap::new(),
        completed: 0,
        planned: req.plan.planned_steps(),
    };
    match run.drive().await {
        Ok((final_outputs, iterations, metric_history, retired)) => {
            let terminated = run.terminate_all(iterations + 1, &retired).await;
            Ok(ExecutionOutcome {
                final_outputs,
                iterations,
                metric_history,
                steps_run: run.completed,
                terminated,
            })
        }
        Err(e) => {
            run.abort_all().await;
            Err(e)
        }
    }
}
