use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Command, SiteId, StoppingCondition, WorkflowConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("routing is cyclic within one iteration: {0}")]
    CyclicRouting(String),
    #[error("iterative configuration has no coordinator site routing to and from every worker")]
    NoCoordinator,
    #[error("unsupported workflow shape: {0}")]
    UnsupportedShape(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub site: SiteId,
    /// Index into the configuration's `steps`.
    pub step_index: usize,
    pub command: Command,
}

/// Steps that may run concurrently. Steps of one site inside a phase run
/// sequentially in plan order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub steps: Vec<PlannedStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    /// Phases that run exactly once, before any iteration.
    pub setup: Vec<Phase>,
    /// Phases repeated every iteration; empty for non-iterative plans.
    pub iteration: Vec<Phase>,
    pub coordinator: Option<SiteId>,
    pub routing: BTreeMap<SiteId, Vec<SiteId>>,
    pub stop: StoppingCondition,
    pub sites: Vec<SiteId>,
}

impl ExecutionPlan {
    pub fn is_iterative(&self) -> bool {
        self.coordinator.is_some()
    }

    /// Steps the plan will run if every iteration executes.
    pub fn planned_steps(&self) -> usize {
        let count = |phases: &[Phase]| phases.iter().map(|p| p.steps.len()).sum::<usize>();
        let iterations = if self.is_iterative() {
            self.stop.max_iterations as usize
        } else {
            0
        };
        count(&self.setup) + count(&self.iteration) * iterations
    }

    /// Sites with a routing edge into `site`.
    pub fn producers_for(&self, site: &SiteId) -> Vec<SiteId> {
        self.routing
            .iter()
            .filter(|(_, tos)| tos.contains(site))
            .map(|(from, _)| from.clone())
            .collect()
    }

    pub fn workers(&self) -> Vec<SiteId> {
        self.iteration
            .iter()
            .flat_map(|p| p.steps.iter())
            .map(|s| s.site.clone())
            .filter(|s| Some(s) != self.coordinator.as_ref())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// DFS cycle check over a site routing map.
pub fn routing_has_cycle(routing: &BTreeMap<SiteId, Vec<SiteId>>) -> bool {
    find_cycle(routing).is_some()
}

fn find_cycle(routing: &BTreeMap<SiteId, Vec<SiteId>>) -> Option<Vec<SiteId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit(
        node: &SiteId,
        routing: &BTreeMap<SiteId, Vec<SiteId>>,
        marks: &mut BTreeMap<SiteId, Mark>,
        stack: &mut Vec<SiteId>,
    ) -> Option<Vec<SiteId>> {
        match marks.get(node) {
            Some(Mark::Done) => return None,
            Some(Mark::Active) => {
                let start = stack.iter().position(|s| s == node).unwrap_or(0);
                let mut cycle = stack[start..].to_vec();
                cycle.push(node.clone());
                return Some(cycle);
            }
            None => {}
        }
        marks.insert(node.clone(), Mark::Active);
        stack.push(node.clone());
        for next in routing.get(node).into_iter().flatten() {
            if let Some(c) = visit(next, routing, marks, stack) {
                return Some(c);
            }
        }
        stack.pop();
        marks.insert(node.clone(), Mark::Done);
        None
    }
    let mut marks = BTreeMap::new();
    for node in routing.keys() {
        let mut stack = Vec::new();
        if let Some(c) = visit(node, routing, &mut marks, &mut stack) {
            return Some(c);
        }
    }
    None
}

fn render_cycle(cycle: &[SiteId]) -> String {
    cycle.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("->")
}

/// Kahn layering of `nodes` under `edges`; errors on a cycle.
fn layers(nodes: &[SiteId], edges: &BTreeMap<SiteId, Vec<SiteId>>) -> Result<Vec<Vec<SiteId>>, PlanError> {
    let mut indegree: BTreeMap<&SiteId, usize> = nodes.iter().map(|n| (n, 0)).collect();
    for (from, tos) in edges {
        if !indegree.contains_key(from) {
            continue;
        }
        for to in tos {
            if let Some(d) = indegree.get_mut(to) {
                *d += 1;
            }
        }
    }
    let mut remaining: Vec<&SiteId> = nodes.iter().collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let ready: Vec<&SiteId> = remaining.iter().copied().filter(|n| indegree[*n] == 0).collect();
        if ready.is_empty() {
            let sub: BTreeMap<SiteId, Vec<SiteId>> = edges
                .iter()
                .filter(|(k, _)| remaining.contains(k))
                .map(|(k, v)| (k.clone(), v.iter().filter(|t| remaining.contains(t)).cloned().collect()))
                .collect();
            let cycle = find_cycle(&sub).unwrap_or_default();
            return Err(PlanError::CyclicRouting(render_cycle(&cycle)));
        }
        for n in &ready {
            for to in edges.get(*n).into_iter().flatten() {
                if let Some(d) = indegree.get_mut(to) {
                    *d -= 1;
                }
            }
        }
        remaining.retain(|n| !ready.contains(n));
        // Keep plan order stable: layers follow first appearance order.
        out.push(nodes.iter().filter(|n| ready.contains(n)).cloned().collect());
    }
    Ok(out)
}

pub fn plan(config: &WorkflowConfig) -> Result<ExecutionPlan, PlanError> {
    let sites = config.sites();
    let mut steps_by_site: BTreeMap<SiteId, Vec<usize>> = BTreeMap::new();
    for (i, step) in config.steps.iter().enumerate() {
        steps_by_site.entry(step.site.clone()).or_default().push(i);
    }
    let stepping_sites: Vec<SiteId> = sites.iter().filter(|s| steps_by_site.contains_key(*s)).cloned().collect();

    let Some(cycle) = find_cycle(&config.routing) else {
        let mut setup = Vec::new();
        for layer in layers(&stepping_sites, &config.routing)? {
            let depth = layer.iter().map(|s| steps_by_site[s].len()).max().unwrap_or(0);
            for j in 0..depth {
                let steps = layer
                    .iter()
                    .filter_map(|s| {
                        steps_by_site[s].get(j).map(|&i| PlannedStep {
                            site: s.clone(),
                            step_index: i,
                            command: Command::Fit,
                        })
                    })
                    .collect();
                setup.push(Phase { steps });
            }
        }
        return Ok(ExecutionPlan {
            setup,
            iteration: Vec::new(),
            coordinator: None,
            routing: config.routing.clone(),
            stop: config.stop_or_single_pass(),
            sites: stepping_sites,
        });
    };

    let iterating: Vec<SiteId> = stepping_sites
        .iter()
        .filter(|s| steps_by_site[*s].len() >= 2)
        .cloned()
        .collect();
    if iterating.is_empty() {
        return Err(PlanError::CyclicRouting(render_cycle(&cycle)));
    }
    if let Some(s) = stepping_sites.iter().find(|s| steps_by_site[*s].len() > 2) {
        return Err(PlanError::UnsupportedShape(format!(
            "site {s} has more than two steps in an iterative workflow"
        )));
    }
    let routes = |from: &SiteId, to: &SiteId| config.routing.get(from).is_some_and(|t| t.contains(to));
    let candidates: Vec<&SiteId> = iterating
        .iter()
        .filter(|c| {
            iterating
                .iter()
                .filter(|s| s != c)
                .all(|s| routes(s, c) && routes(c, s))
                && config.routing.get(*c).is_some_and(|t| !t.is_empty())
        })
        .collect();
    // With several candidates the one configured last aggregates.
    let coordinator = (*candidates.last().ok_or(PlanError::NoCoordinator)?).clone();

    let intra: BTreeMap<SiteId, Vec<SiteId>> = config
        .routing
        .iter()
        .filter(|(from, _)| **from != coordinator)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if let Some(cycle) = find_cycle(&intra) {
        return Err(PlanError::CyclicRouting(render_cycle(&cycle)));
    }

    let setup = vec![Phase {
        steps: stepping_sites
            .iter()
            .map(|s| PlannedStep {
                site: s.clone(),
                step_index: steps_by_site[s][0],
                command: Command::Fit,
            })
            .collect(),
    }];
    let workers: Vec<SiteId> = iterating.iter().filter(|s| **s != coordinator).cloned().collect();
    let mut iteration: Vec<Phase> = layers(&workers, &intra)?
        .into_iter()
        .map(|layer| Phase {
            steps: layer
                .into_iter()
                .map(|s| PlannedStep {
                    step_index: steps_by_site[&s][1],
                    site: s,
                    command: Command::Fit,
                })
                .collect(),
        })
        .collect();
    iteration.push(Phase {
        steps: vec![PlannedStep {
            site: coordinator.clone(),
            step_index: steps_by_site[&coordinator][1],
            command: Command::Aggregate,
        }],
    });
    Ok(ExecutionPlan {
        setup,
        iteration,
        coordinator: Some(coordinator),
        routing: config.routing.clone(),
        stop: config.stop_or_single_pass(),
        sites: stepping_sites,
    })
}
