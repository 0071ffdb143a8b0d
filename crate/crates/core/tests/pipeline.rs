//! Public-API integration across auth, repo, tasks, orchestrator and
//! analytics, with sites simulated in memory.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use proptest::prelude::*;

use fabric_core::analytics::{correlations, numeric_stats};
use fabric_core::auth::{AuthService, CanonicalRequest, RequestSigner};
use fabric_core::domain::{
    Action, Command, FileSet, ParamMap, Permission, Principal, RepoPath, ResourcePattern, Role, Root, SiteId,
    StepBundle, StepOutput, TaskId, TaskState,
};
use fabric_core::orchestrator::{SiteClient, SiteError};
use fabric_core::repo::RepoStore;
use fabric_core::tasks::{TaskManager, TaskManagerConfig};

/// Workers emit a table row per iteration; the coordinator reports a loss
/// that halves every iteration until it flattens out.
#[derive(Default)]
struct Simulated {
    seen: Mutex<Vec<(SiteId, u32, Command)>>,
}

#[async_trait]
impl SiteClient for Simulated {
    async fn run_step(&self, b: StepBundle) -> Result<StepOutput, SiteError> {
        self.seen.lock().push((b.site_id.clone(), b.iteration, b.command));
        let mut artifacts = FileSet::new();
        let mut metrics = BTreeMap::new();
        if b.command != Command::Terminate {
            let k = f64::from(b.iteration);
            let csv = format!("iteration,x,y\n{k},{},{}\n{k},{},{}\n", k, 2.0 * k + 1.0, k + 0.5, 2.0 * k + 2.0);
            artifacts.insert("summary.csv".into(), csv.into_bytes());
            if b.site_id.as_str() == "siteC" {
                metrics.insert("loss".into(), 1.0 + 0.5f64.powi(b.iteration as i32));
            }
        }
        Ok(StepOutput {
            task_id: b.task_id,
            iteration: b.iteration,
            site_id: b.site_id,
            step_index: b.step_index,
            artifacts,
            metrics,
            local_copy_kept: b.keep_local_copy,
        })
    }

    async fn terminate(&self, _site: &SiteId, _task: &TaskId) -> Result<(), SiteError> {
        Ok(())
    }
}

const CONF: &str = concat!(
    "name: loop\ndas_endpoint: loopback\ncredential_ref: KEY\ndatasets: []\nsteps:\n",
    "  - {site: siteA, script: init.py}\n",
    "  - {site: siteA, script: refine.py}\n",
    "  - {site: siteC, script: init.py}\n",
    "  - {site: siteC, script: aggregate.py}\n",
    "routing: {siteA: [siteC], siteC: [siteA]}\n",
    "stop: {max_iterations: 20, metric: loss, rtol: 1.0e-3}\n",
    "results_destination: uc/loop\n",
);

struct World {
    _dir: tempfile::TempDir,
    auth: Arc<AuthService>,
    analyst: Principal,
    manager: TaskManager,
    sites: Arc<Simulated>,
    conf: RepoPath,
}

fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let auth = Arc::new(AuthService::in_memory());
    let admin = Principal::bootstrap_admin("root");
    let designer = Principal::new("dana", [Role::WorkflowDesigner]);
    let analyst = Principal::new("ana", [Role::DataAnalyst]);
    for p in [&admin, &designer, &analyst] {
        auth.install_principal(p.clone());
    }
    let (das_key, _) = auth.issue_key(&admin, &designer.user_id, None).unwrap();
    let repo = Arc::new(RepoStore::open(dir.path().join("repo"), auth.clone()).unwrap());
    let sites = [SiteId::new("siteA"), SiteId::new("siteC")];
    repo.create_use_case(&designer, Root::Shared, "uc", sites.to_vec()).unwrap();
    let v1 = repo.add_version(&designer, &RepoPath::parse("/shared/uc/loop").unwrap()).unwrap();
    for script in ["init.py", "refine.py", "aggregate.py"] {
        repo.upload(&designer, &v1, script, b"pass\n").unwrap();
    }
    repo.upload(&designer, &v1, "conf.yml", CONF.replace("KEY", das_key.as_str()).as_bytes())
        .unwrap();
    repo.set_enabled(&designer, &v1, true).unwrap();
    auth.grant_permission(
        &admin,
        Permission {
            principal: analyst.user_id.clone(),
            resource: ResourcePattern::RepoPrefix(RepoPath::parse("/shared/uc").unwrap()),
            actions: [Action::Read].into(),
        },
    )
    .unwrap();
    let simulated = Arc::new(Simulated::default());
    let registry: BTreeSet<SiteId> = sites.into();
    let manager = TaskManager::open(
        TaskManagerConfig::new(dir.path().join("state")),
        repo,
        auth.clone(),
        Arc::new(registry),
        simulated.clone(),
    )
    .unwrap();
    World {
        conf: v1.child("conf.yml").unwrap(),
        _dir: dir,
        auth,
        analyst,
        manager,
        sites: simulated,
    }
}

#[test]
fn signed_requests_authenticate_as_the_key_owner() {
    let w = world();
    let admin = Principal::bootstrap_admin("root");
    let (key, secret) = w.auth.issue_key(&admin, &w.analyst.user_id, None).unwrap();
    let signer = RequestSigner::new(key.clone(), &secret);
    let now = chrono::Utc::now().timestamp();
    let body = br#"{"config_path":"/shared/uc/loop/v1/conf.yml"}"#;
    let headers = signer.sign("POST", "/v1/tasks", body, now);
    let canonical = CanonicalRequest::new("POST", "/v1/tasks", body, now);
    let who = w.auth.authenticate(&headers.signature, &key, &canonical).unwrap();
    assert_eq!(who.user_id, w.analyst.user_id);

    let tampered = CanonicalRequest::new("POST", "/v1/tasks", b"{}", now);
    assert!(w.auth.authenticate(&headers.signature, &key, &tampered).is_err());
}

#[tokio::test]
async fn iterative_task_runs_to_its_stopping_condition() {
    let w = world();
    w.manager.start();
    let task = w.manager.submit(&w.analyst, &w.conf, ParamMap::new()).unwrap();
    let done = w.manager.wait_terminal(&task.task_id, Duration::from_secs(20)).await.unwrap();
    assert_eq!(done.state, TaskState::Complete);
    let checkpoints: Vec<TaskState> = done.checkpoints.iter().filter_map(|c| c.checkpoint).collect();
    assert_eq!(checkpoints, TaskState::CHECKPOINTS);
    assert_eq!(done.progress, 1.0);

    // loss_k = 1 + 2^-k; relative change drops below 1e-3 once 2^-k < ~2e-3.
    let result_ref = w.manager.result_ref(&w.analyst, &task.task_id).unwrap();
    let summary = w.manager.result_summary(&w.analyst, &result_ref).unwrap();
    assert!(summary.iterations < 20, "stopped at {}", summary.iterations);
    let history = &summary.metric_history;
    let [.., prev, last] = history[..] else { panic!("history {history:?}") };
    assert!((last - prev).abs() / prev < 1e-3);
    assert!(history.windows(2).take(history.len() - 2).all(|w| (w[1] - w[0]).abs() / w[0] >= 1e-3));

    // Worker gets setup, one command per iteration, then Terminate.
    let seen = w.sites.seen.lock().clone();
    let worker: Vec<(u32, Command)> = seen
        .iter()
        .filter(|(s, ..)| s.as_str() == "siteA")
        .map(|(_, k, c)| (*k, *c))
        .collect();
    let k = summary.iterations;
    assert_eq!(worker.len() as u32, k + 2);
    assert_eq!(worker.last(), Some(&(k + 1, Command::Terminate)));

    let table = w.manager.result_table(&w.analyst, &result_ref, None).unwrap();
    let m = correlations(&table).unwrap();
    let n = m.variables.len();
    assert_eq!(m.entries.len(), n * (n - 1) / 2);
    let x: Vec<f64> = table.column("x").unwrap().numbers().collect();
    let stats = numeric_stats(&x).unwrap();
    assert!(stats.min <= stats.mean && stats.mean <= stats.max);
}

fn any_state() -> impl Strategy<Value = TaskState> {
    proptest::sample::select(TaskState::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// `advance` accepts exactly the documented relation, logs one
    /// checkpoint per accepted move and counts every refused one.
    #[test]
    fn advance_follows_the_transition_relation(moves in proptest::collection::vec(any_state(), 0..12)) {
        let w = world();
        let task = w.manager.submit(&w.analyst, &w.conf, ParamMap::new()).unwrap();
        let mut state = TaskState::Queued;
        let mut accepted = vec![TaskState::Queued];
        let mut refused = 0;
        for next in moves {
            let r = w.manager.advance(&task.task_id, next, "test");
            if state.can_transition_to(next) {
                prop_assert!(r.is_ok());
                state = next;
                accepted.push(next);
            } else {
                prop_assert!(r.is_err());
                refused += 1;
            }
        }
        let t = w.manager.get(&w.analyst, &task.task_id).unwrap();
        prop_assert_eq!(t.state, state);
        let logged: Vec<TaskState> = t.checkpoints.iter().filter_map(|c| c.checkpoint).collect();
        prop_assert_eq!(logged, accepted);
        prop_assert_eq!(w.manager.illegal_transitions(), refused);
    }
}
