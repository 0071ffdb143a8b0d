use std::collections::{BTreeMap, VecDeque};

use crate::domain::{SiteId, TaskId};

/// Pending tasks in submission order plus per-site in-flight counts.
#[derive(Debug, Default)]
pub struct TaskQueue {
    pending: VecDeque<(TaskId, Vec<SiteId>)>,
    in_flight: BTreeMap<SiteId, usize>,
    limit: usize,
}

impl TaskQueue {
    pub fn new(limit: usize) -> Self {
        TaskQueue {
            limit: limit.max(1),
            ..Default::default()
        }
    }

    pub fn push(&mut self, task: TaskId, sites: Vec<SiteId>) {
        self.pending.push_back((task, sites));
    }

    pub fn remove(&mut self, task: &TaskId) -> bool {
        let before = self.pending.len();
        self.pending.retain(|(t, _)| t != task);
        before != self.pending.len()
    }

    pub fn pending(&self) -> Vec<TaskId> {
        self.pending.iter().map(|(t, _)| t.clone()).collect()
    }

    pub fn in_flight(&self, site: &SiteId) -> usize {
        self.in_flight.get(site).copied().unwrap_or(0)
    }

    /// Takes the earliest pending task whose sites all have spare capacity,
    /// and counts it as in flight on those sites.
    pub fn next_ready(&mut self) -> Option<(TaskId, Vec<SiteId>)> {
        let idx = self
            .pending
            .iter()
            .position(|(_, sites)| sites.iter().all(|s| self.in_flight(s) < self.limit))?;
        let (task, sites) = self.pending.remove(idx)?;
        for s in &sites {
            *self.in_flight.entry(s.clone()).or_default() += 1;
        }
        Some((task, sites))
    }

    pub fn release(&mut self, sites: &[SiteId]) {
        for s in sites {
            if let Some(n) = self.in_flight.get_mut(s) {
                *n = n.saturating_sub(1);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(names: &[&str]) -> Vec<SiteId> {
        names.iter().map(|n| SiteId::new(*n)).collect()
    }

    #[test]
    fn fifo_with_site_limits() {
        let mut q = TaskQueue::new(2);
        for (i, sites) in [&["a"][..], &["a"], &["a"], &["b"], &["a", "b"]].iter().enumerate() {
            q.push(TaskId::new(format!("t{i}")), s(sites));
        }
        let order: Vec<String> = std::iter::from_fn(|| q.next_ready()).map(|(t, _)| t.to_string()).collect();
        assert_eq!(order, vec!["t0", "t1", "t3"]);
        assert_eq!(q.in_flight(&SiteId::new("a")), 2);
        q.release(&s(&["a"]));
        assert_eq!(q.next_ready().unwrap().0.as_str(), "t2");
        q.release(&s(&["a"]));
        assert_eq!(q.next_ready().unwrap().0.as_str(), "t4");
        assert!(q.next_ready().is_none());
        assert!(!q.remove(&TaskId::new("t4")));
    }
}
