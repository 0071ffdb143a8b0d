use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use fabric_agent::client::SignedHttp;
use fabric_agent::http::serve;
use fabric_agent::catalog::resolve_locator;
use fabric_agent::{AgentClient, AgentError, DatasetCatalog, PacRunnerSpec, SiteAgent, SiteTaskState, StepState};
use fabric_core::auth::{AuthService, RequestSigner, Secret};
use fabric_core::domain::{
    render_command_file, Command, DatasetId, KeyId, Principal, Role, SiteId, StepBundle, TaskId, UserId,
};
use fabric_core::orchestrator::{SiteClient, SiteError};
use reqwest::Method;
use serde_json::json;
use tokio_util::sync::CancellationToken;

struct Site {
    _dir: tempfile::TempDir,
    agent: Arc<SiteAgent>,
    client: Arc<AgentClient>,
    owner: SignedHttp,
    base: String,
    shutdown: CancellationToken,
}

const SITE: &str = "siteA";

impl Drop for Site {
    fn drop(&mut self) {
        self.shutdown.cancel();
    }
}

async fn site_with(runner: PacRunnerSpec) -> Site {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(data.join("cohort")).unwrap();
    fs::write(data.join("cohort/values.csv"), "x\n1\n2\n3\n4\n").unwrap();
    let auth = Arc::new(AuthService::in_memory());
    let mw_secret = Secret::new("middleware-secret");
    auth.install_principal(Principal::new("middleware", []));
    auth.install_key(KeyId::new("fk_mw"), &mw_secret, UserId::new("middleware"));
    let owner_secret = Secret::new("owner-secret");
    auth.install_principal(Principal::new("olga", [Role::DataOwner]).owning([SiteId::new(SITE)]));
    auth.install_key(KeyId::new("fk_olga"), &owner_secret, UserId::new("olga"));
    let catalog = DatasetCatalog::open(SiteId::new(SITE), &data, Some(dir.path().join("catalog.json"))).unwrap();
    let agent = Arc::new(
        SiteAgent::new(SiteId::new(SITE), dir.path().join("work"), catalog, runner, auth, UserId::new("middleware"), 4)
            .unwrap(),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let shutdown = CancellationToken::new();
    tokio::spawn(serve(agent.clone(), listener, shutdown.clone()));
    let client = Arc::new(AgentClient::new());
    client.add(
        SiteId::new(SITE),
        &base,
        RequestSigner::new(KeyId::new("fk_mw"), &mw_secret),
        Duration::from_secs(60),
    );
    let owner = SignedHttp::new(&base, RequestSigner::new(KeyId::new("fk_olga"), &owner_secret), Duration::from_secs(10));
    let site = Site { _dir: dir, agent, client, owner, base, shutdown };
    let r = site
        .owner
        .json(Method::POST, "/v1/datasets", Some(&json!({"dataset_id": "cohort", "locator": "cohort/values.csv"})))
        .await
        .unwrap();
    assert_eq!(r.status, 201, "{:?}", r.error_body());
    let r = site
        .owner
        .json(Method::POST, "/v1/datasets/cohort/grants", Some(&json!({"user": "ana"})))
        .await
        .unwrap();
    assert!(r.is_success());
    site
}

async fn site() -> Site {
    site_with(PacRunnerSpec::default()).await
}

fn bundle(task: &str, script: &str, body: &str) -> StepBundle {
    StepBundle {
        task_id: TaskId::new(task),
        user: UserId::new("ana"),
        iteration: 0,
        site_id: SiteId::new(SITE),
        step_index: 0,
        script_name: script.into(),
        scripts: BTreeMap::from([(script.to_string(), body.as_bytes().to_vec())]),
        params: BTreeMap::from([("alpha".to_string(), json!(0.5)), ("label".to_string(), json!("north"))]),
        command: Command::Fit,
        inputs: BTreeMap::new(),
        dataset_ids: vec![DatasetId::new("cohort")],
        keep_local_copy: false,
        timestamp_results: false,
    }
}

const SUM_SCRIPT: &str = r#"
import os
rows = open("data/cohort").read().split()[1:]
total = sum(float(r) for r in rows)
os.makedirs("out", exist_ok=True)
open("out/sum.txt", "w").write("%g %s %s" % (total, os.environ["FABRIC_PARAM_ALPHA"], os.environ["FABRIC_PARAM_LABEL"]))
open("metrics", "w").write("loss=%g\n" % (total / 10))
"#;

#[tokio::test]
async fn step_returns_derived_artifacts_and_metrics() {
    let s = site().await;
    let out = s.client.run_step(bundle("a1", "sum.py", SUM_SCRIPT)).await.unwrap();
    assert_eq!(out.artifacts["sum.txt"], b"10 0.5 north");
    assert_eq!(out.metrics["loss"], 1.0);
    assert!(!out.artifacts.keys().any(|k| k.contains("cohort")));
}

#[tokio::test]
async fn keep_local_copy_false_removes_working_tree() {
    let s = site().await;
    let b = bundle("a2", "sum.py", SUM_SCRIPT);
    let out = s.client.run_step(b.clone()).await.unwrap();
    assert!(!out.local_copy_kept);
    let task_dir = s.agent.task_dir(&b.task_id);
    assert!(!task_dir.join("0-0-sum.py").exists());
    let mut term = b.clone();
    term.command = Command::Terminate;
    term.iteration = 1;
    s.client.run_step(term).await.unwrap();
    assert!(!task_dir.exists());
    let st = s.client.status(&SiteId::new(SITE), &b.task_id).await.unwrap();
    assert_eq!(st.state, SiteTaskState::Finished);
    assert!(!st.workdir_present);
}

#[tokio::test]
async fn keep_local_copy_true_retains_working_tree() {
    let s = site().await;
    let mut b = bundle("a3", "sum.py", SUM_SCRIPT);
    b.keep_local_copy = true;
    let out = s.client.run_step(b.clone()).await.unwrap();
    assert!(out.local_copy_kept);
    let run = s.agent.task_dir(&b.task_id).join("0-0-sum.py");
    assert_eq!(fs::read(run.join("out/sum.txt")).unwrap(), b"10 0.5 north");
    let mut term = b.clone();
    term.command = Command::Terminate;
    s.client.run_step(term).await.unwrap();
    assert!(run.exists());
    let st = s.client.status(&SiteId::new(SITE), &b.task_id).await.unwrap();
    assert!(st.workdir_present);
}

#[tokio::test]
async fn timestamped_results_carry_increasing_suffixes() {
    let s = site().await;
    let mut b = bundle("a4", "sum.py", SUM_SCRIPT);
    b.timestamp_results = true;
    let first = s.client.run_step(b.clone()).await.unwrap();
    b.iteration = 1;
    let second = s.client.run_step(b).await.unwrap();
    let stamp = |o: &fabric_core::domain::StepOutput| -> u64 {
        let name = o.artifacts.keys().next().unwrap();
        let (base, digits) = name.rsplit_once('.').unwrap();
        assert_eq!(base, "sum.txt");
        digits.parse().unwrap()
    };
    assert!(stamp(&second) > stamp(&first));
}

#[tokio::test]
async fn inputs_command_file_and_local_store_are_materialized() {
    let s = site().await;
    let script = r#"
import os, json
cmd = open("command.txt").read()
routed = open("in/siteB/model.txt").read()
task_input = open("in/input/seed.txt").read()
params = json.load(open("params.json"))
store = "local/count"
n = int(open(store).read()) if os.path.exists(store) else 0
open(store, "w").write(str(n + 1))
open("out/seen.txt", "w").write("|".join([cmd, routed, task_input, str(params["alpha"]), str(n + 1)]))
"#;
    let mut b = bundle("a5", "see.py", script);
    b.dataset_ids.clear();
    b.timestamp_results = true;
    b.inputs.insert("command.txt".into(), render_command_file(Command::Fit, 0).into_bytes());
    b.inputs.insert("siteB/model.txt.100".into(), b"old".to_vec());
    b.inputs.insert("siteB/model.txt.200".into(), b"new".to_vec());
    b.inputs.insert("input/seed.txt".into(), b"7".to_vec());
    let out = s.client.run_step(b.clone()).await.unwrap();
    let text = |o: &fabric_core::domain::StepOutput| {
        String::from_utf8(o.artifacts.values().next().unwrap().clone()).unwrap()
    };
    assert_eq!(text(&out), "COMMAND=Fit\nITERATION=0|new|7|0.5|1");
    b.iteration = 1;
    b.inputs.insert("command.txt".into(), render_command_file(Command::Fit, 1).into_bytes());
    let out = s.client.run_step(b).await.unwrap();
    assert!(text(&out).ends_with("|2"), "local store persists: {}", text(&out));
}

#[tokio::test]
async fn ungranted_user_is_denied_the_dataset() {
    let s = site().await;
    let mut b = bundle("a6", "sum.py", SUM_SCRIPT);
    b.user = UserId::new("mallory");
    match s.client.run_step(b).await {
        Err(SiteError::Rejected { code, .. }) => assert_eq!(code, "DatasetDenied"),
        other => panic!("expected denial, got {other:?}"),
    }
}

#[tokio::test]
async fn only_the_middleware_drives_steps() {
    let s = site().await;
    let encoded = fabric_core::wire::encode_bundle(&bundle("a7", "sum.py", SUM_SCRIPT));
    let r = s
        .owner
        .send(Method::POST, "/v1/steps", encoded.body.to_vec(), Some(&encoded.content_type))
        .await
        .unwrap();
    assert_eq!(r.status, 403);
    assert_eq!(r.error_body().code, "PermissionDenied");
    let forged = SignedHttp::new(&s.base, RequestSigner::new(KeyId::new("fk_mw"), &Secret::new("wrong")), Duration::from_secs(5));
    let r = forged.send(Method::GET, "/v1/datasets", Vec::new(), None).await.unwrap();
    assert_eq!(r.status, 401);
    let r = reqwest::get(format!("{}/healthz", s.base)).await.unwrap();
    assert_eq!(r.status(), 200);
}

#[tokio::test]
async fn script_failure_reports_stderr_tail() {
    let s = site().await;
    let b = bundle("a8", "bad.py", "import sys\nsys.stderr.write('x' * 5000 + 'boom')\nsys.exit(3)\n");
    match s.client.run_step(b.clone()).await {
        Err(SiteError::StepFailed { step, message, .. }) => {
            assert_eq!(step, "bad.py");
            assert!(message.starts_with("ScriptError"));
            assert!(message.ends_with("boom"));
            assert!(message.len() < 2300);
        }
        other => panic!("expected failure, got {other:?}"),
    }
    let st = s.client.status(&SiteId::new(SITE), &b.task_id).await.unwrap();
    assert_eq!(st.steps[0].state, StepState::Failed);
    assert_eq!(st.steps[0].exit_code, Some(3));
}

#[tokio::test]
async fn wall_clock_limit_is_enforced() {
    let s = site_with(PacRunnerSpec { wall_clock_limit_seconds: 1, ..PacRunnerSpec::default() }).await;
    let b = bundle("a9", "spin.sh", "sleep 30\n");
    let started = std::time::Instant::now();
    match s.client.run_step(b).await {
        Err(SiteError::StepFailed { message, .. }) => assert!(message.starts_with("ResourceLimitExceeded"), "{message}"),
        other => panic!("expected limit, got {other:?}"),
    }
    assert!(started.elapsed() < Duration::from_secs(10));
}

#[tokio::test]
async fn cpu_limit_is_enforced() {
    let s = site_with(PacRunnerSpec { cpu_seconds_limit: 1, ..PacRunnerSpec::default() }).await;
    let b = bundle("aa", "burn.py", "while True:\n    pass\n");
    match s.client.run_step(b).await {
        Err(SiteError::StepFailed { message, .. }) => assert!(message.contains("cpu"), "{message}"),
        other => panic!("expected limit, got {other:?}"),
    }
}

#[tokio::test]
async fn terminate_stops_a_running_step() {
    let s = site().await;
    let b = bundle("ab", "wait.sh", "sleep 30\n");
    let task = b.task_id.clone();
    let client = s.client.clone();
    let c2 = client.clone();
    let running = tokio::spawn(async move { c2.run_step(b).await });
    tokio::time::sleep(Duration::from_millis(500)).await;
    client.terminate(&SiteId::new(SITE), &task).await.unwrap();
    match running.await.unwrap() {
        Err(SiteError::StepFailed { message, .. }) => assert!(message.starts_with("Terminated")),
        other => panic!("expected termination, got {other:?}"),
    }
    let st = client.status(&SiteId::new(SITE), &task).await.unwrap();
    assert_eq!(st.state, SiteTaskState::Terminated);
    assert!(!st.workdir_present);
    // Unknown tasks terminate trivially.
    client.terminate(&SiteId::new(SITE), &TaskId::new("ffff")).await.unwrap();
}

#[tokio::test]
async fn environment_is_scrubbed_and_network_is_unreachable() {
    let s = site().await;
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let probe = format!(
        r#"
import os, socket
keys = sorted(os.environ)
try:
    socket.create_connection(("127.0.0.1", {port}), timeout=2).close()
    net = "reached"
except OSError as e:
    net = "blocked"
open("out/probe.txt", "w").write(net + "\n" + ",".join(keys) + "\n" + os.environ["HOME"])
"#
    );
    let mut b = bundle("ac", "probe.py", &probe);
    b.dataset_ids.clear();
    let out = s.client.run_step(b).await.unwrap();
    let text = String::from_utf8(out.artifacts["probe.txt"].clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("blocked"));
    for key in lines.next().unwrap().split(',') {
        assert!(
            ["PATH", "HOME", "LANG", "OPENBLAS_NUM_THREADS", "LC_CTYPE"].contains(&key) || key.starts_with("FABRIC_"),
            "unexpected variable {key}"
        );
    }
    assert!(lines.next().unwrap().ends_with("0-0-probe.py"));
    listener.set_nonblocking(true).unwrap();
    assert!(listener.accept().is_err(), "no connection should have arrived");
}

#[tokio::test]
async fn dataset_endpoints_reject_escapes_and_non_owners() {
    let s = site().await;
    for locator in ["/etc/passwd", "../catalog.json", "cohort/../../catalog.json"] {
        let r = s
            .owner
            .json(Method::POST, "/v1/datasets", Some(&json!({"dataset_id": "evil", "locator": locator})))
            .await
            .unwrap();
        assert_eq!(r.error_body().code, "LocatorEscapesRoot", "{locator}");
    }
    std::os::unix::fs::symlink("/etc", s.agent.catalog().root().join("link")).unwrap();
    let r = s
        .owner
        .json(Method::POST, "/v1/datasets", Some(&json!({"dataset_id": "evil", "locator": "link/passwd"})))
        .await
        .unwrap();
    assert_eq!(r.error_body().code, "LocatorEscapesRoot");
    let ds = s.owner.json::<()>(Method::GET, "/v1/datasets", None).await.unwrap();
    let list: Vec<serde_json::Value> = serde_json::from_slice(&ds.body).unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0]["grants"], json!(["ana"]));
    let analyst = Principal::new("ana", [Role::DataAnalyst]);
    assert!(matches!(
        s.agent.register_dataset(&analyst, DatasetId::new("x"), "cohort/values.csv"),
        Err(AgentError::PermissionDenied(_))
    ));
}

#[test]
fn locator_resolution_stays_under_root() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("a/b")).unwrap();
    fs::write(dir.path().join("a/b/f"), "1").unwrap();
    let root: PathBuf = dir.path().into();
    assert!(resolve_locator(&root, "a/b/f").is_ok());
    assert!(resolve_locator(&root, "./a/b/f").is_ok());
    assert!(matches!(resolve_locator(&root, ""), Err(AgentError::LocatorEscapesRoot(_))));
    assert!(matches!(resolve_locator(&root, "a/../a/b/f"), Err(AgentError::LocatorEscapesRoot(_))));
    assert!(matches!(resolve_locator(&root, "missing"), Err(AgentError::BadRequest(_))));
}

#[test]
fn catalog_persists_across_reopen() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("f.csv"), "x\n").unwrap();
    let auth = AuthService::in_memory();
    let owner = Principal::new("olga", [Role::DataOwner]).owning([SiteId::new(SITE)]);
    let file = dir.path().join("catalog.json");
    let cat = DatasetCatalog::open(SiteId::new(SITE), dir.path(), Some(file.clone())).unwrap();
    cat.register(&auth, &owner, DatasetId::new("f"), "f.csv").unwrap();
    cat.grant(&auth, &owner, &DatasetId::new("f"), UserId::new("ana")).unwrap();
    let again = DatasetCatalog::open(SiteId::new(SITE), dir.path(), Some(file)).unwrap();
    assert_eq!(again.list(), cat.list());
    assert!(again.resolve_for(&UserId::new("ana"), &DatasetId::new("f")).is_ok());
    assert!(again.resolve_for(&UserId::new("bob"), &DatasetId::new("f")).is_err());
}
