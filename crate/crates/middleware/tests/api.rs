use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use fabric_agent::PacRunnerSpec;
use fabric_core::domain::{Role, TaskState};
use fabric_middleware::local::{LocalFabric, DAS_KEY_ID};
use fabric_middleware::routes::sample_uri;
use fabric_middleware::{ApiClient, MODULE_OPERATIONS, ROUTES};
use reqwest::Method;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const SCRIPT: &str = r#"
import os, time
time.sleep(float(os.environ.get("FABRIC_PARAM_DELAY", "0")))
rows = [l.strip() for l in open("data/readings").read().split("\n")[1:] if l.strip()]
with open("out/table.csv", "w") as f:
    f.write("x,y,noise,label\n")
    for i, r in enumerate(rows):
        x = float(r)
        f.write("%g,%g,%g,%s\n" % (x, 2 * x + 1, (i * 7919) % 13, "odd" if int(x) % 2 else "even"))
open("metrics", "w").write("rows=%d\n" % len(rows))
"#;

fn conf(delay: f64) -> String {
    format!(
        "name: demo\ndas_endpoint: loopback\ncredential_ref: {DAS_KEY_ID}\ndatasets: [siteA/readings]\n\
steps:\n  - {{site: siteA, script: table.py, params: {{delay: {delay}}}}}\nresults_destination: demo/results\n"
    )
}

struct Env {
    _dir: tempfile::TempDir,
    fabric: LocalFabric,
    designer: ApiClient,
    analyst: ApiClient,
    other: ApiClient,
}

const CONF_PATH: &str = "/shared/demo/wf/v1/conf.yml";

async fn env(delay: f64) -> Env {
    let dir = tempfile::tempdir().unwrap();
    let fabric = LocalFabric::start(dir.path(), &["siteA"], PacRunnerSpec::default()).await.unwrap();
    let designer = fabric.user("dana", &[Role::WorkflowDesigner]).await.unwrap();
    let analyst = fabric.user("ana", &[Role::DataAnalyst]).await.unwrap();
    let other = fabric.user("oli", &[Role::DataAnalyst]).await.unwrap();
    let readings: String = std::iter::once("x".to_string()).chain((1..=20).map(|i| i.to_string())).collect::<Vec<_>>().join("\n");
    fabric
        .add_dataset("siteA", "readings", "readings.csv", readings.as_bytes(), &["ana", "oli", "dana"])
        .await
        .unwrap();
    designer.create_use_case("shared", "demo", &["siteA".into()]).await.unwrap();
    let v = designer.add_version("/shared/demo/wf").await.unwrap();
    assert_eq!(v["path"], "/shared/demo/wf/v1");
    designer.put_file("/shared/demo/wf/v1/table.py", SCRIPT.into()).await.unwrap();
    designer.put_file(CONF_PATH, conf(delay).into_bytes()).await.unwrap();
    designer.set_enabled("/shared/demo/wf/v1", true).await.unwrap();
    fabric
        .admin()
        .grant(&json!({"principal": "ana", "resource": "/shared/demo", "actions": ["read"]}))
        .await
        .unwrap();
    Env { _dir: dir, fabric, designer, analyst, other }
}

async fn wait_state(c: &ApiClient, id: &str, want: TaskState) -> fabric_core::domain::Task {
    for _ in 0..600 {
        let t = c.task(id).await.unwrap();
        if t.state == want || t.state.is_terminal() {
            assert_eq!(t.state, want, "task ended as {:?}", t.state);
            return t;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("task {id} never reached {want:?}");
}

fn state_hash(dir: &Path) -> String {
    fn walk(base: &Path, dir: &Path, h: &mut Sha256) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap()).collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            h.update(p.strip_prefix(base).unwrap().to_string_lossy().as_bytes());
            if e.file_type().unwrap().is_dir() {
                walk(base, &p, h);
            } else {
                h.update(std::fs::read(&p).unwrap());
                h.update(format!("{:?}", e.metadata().unwrap().modified().unwrap()).as_bytes());
            }
        }
    }
    let mut h = Sha256::new();
    walk(dir, dir, &mut h);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn route_table_covers_every_operation_exactly_once() {
    for op in MODULE_OPERATIONS {
        let n = ROUTES.iter().filter(|r| r.operations.contains(op)).count();
        assert_eq!(n, 1, "operation {op} is reachable through {n} routes");
    }
    for r in ROUTES {
        for op in r.operations {
            assert!(MODULE_OPERATIONS.contains(op), "route {} {} names unknown {op}", r.method, r.path);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in ROUTES {
        assert!(seen.insert((r.method, r.path)), "duplicate route {} {}", r.method, r.path);
    }
}

#[tokio::test]
async fn every_route_is_mounted_and_signed() {
    let e = env(0.0).await;
    let http = reqwest::Client::new();
    for r in ROUTES {
        let url = format!("{}{}", e.fabric.endpoint, sample_uri(r));
        let resp = http.request(Method::from_bytes(r.method.as_bytes()).unwrap(), &url).send().await.unwrap();
        let status = resp.status().as_u16();
        let body: Value = serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap_or(Value::Null);
        if r.authenticated {
            assert_eq!(status, 401, "{} {}", r.method, r.path);
            assert_eq!(body["code"], "InvalidSignature");
        } else {
            assert_eq!(status, 200, "{} {}", r.method, r.path);
        }
    }
    let resp = http.get(format!("{}/v1/nowhere", e.fabric.endpoint)).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 404);
    let body: Value = serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap();
    assert_eq!(body["code"], "NoRoute");
}

#[tokio::test]
async fn lifecycle_results_and_analytics_over_http() {
    let e = env(0.0).await;
    let raw = e
        .analyst
        .raw(Method::POST, "/v1/tasks", serde_json::to_vec(&json!({"config_path": CONF_PATH})).unwrap())
        .await
        .unwrap();
    assert_eq!(raw.status, 201);
    let task: fabric_core::domain::Task = serde_json::from_slice(&raw.body).unwrap();
    assert_eq!(task.state, TaskState::Queued);
    assert!((task.progress - 0.05).abs() < 1e-12);
    let id = task.task_id.to_string();
    let done = wait_state(&e.analyst, &id, TaskState::Complete).await;
    assert_eq!(done.progress, 1.0);
    let checkpoints: Vec<TaskState> = e
        .analyst
        .logs(&id, Some("runtime"))
        .await
        .unwrap()
        .iter()
        .filter_map(|l| l.checkpoint)
        .collect();
    assert_eq!(
        checkpoints,
        [TaskState::Queued, TaskState::Queuing, TaskState::Created, TaskState::Sending, TaskState::Sent, TaskState::Complete]
    );
    let result = e.analyst.result(&id).await.unwrap();
    let rref = result["result_ref"].as_str().unwrap().to_string();
    assert!(result["artifacts"].as_array().unwrap().iter().any(|a| a == "table.csv"));
    let csv = e.analyst.artifact(&rref, "table.csv").await.unwrap();
    assert!(csv.starts_with(b"x,y,noise,label\n1,3,"));

    let profile = e.analyst.profile(&rref, None).await.unwrap();
    let vars = profile["report"]["variables"].as_array().unwrap();
    assert_eq!(vars.len(), 4);
    assert_eq!(vars[0]["stats"]["mean"], 10.5);

    let corr = e.analyst.correlations(&rref, None, Some((0.7, 0.4))).await.unwrap();
    let n = corr["variables"].as_array().unwrap().len();
    assert_eq!(n, 3);
    let entries = corr["entries"].as_array().unwrap();
    assert_eq!(entries.len(), n * (n - 1) / 2);
    let xy = entries.iter().find(|c| c["a"] == "y" && c["b"] == "x").unwrap();
    assert!((xy["r"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(xy["class"], "good");
    assert_eq!(xy["color"], "#1a9850");

    let rec = e.analyst.recommendations(&rref, None, &["x".into(), "y".into()]).await.unwrap();
    assert_eq!(rec[0]["kind"], "scatter_plot");
    let rec = e.analyst.recommendations(&rref, None, &["label".into()]).await.unwrap();
    assert_eq!(rec[0]["kind"], "bar_chart");
    let err = e.analyst.recommendations(&rref, None, &["nope".into()]).await.unwrap_err();
    assert_eq!(err.code(), Some("UnknownVariable"));

    let profile_body = json!({
        "save": true,
        "profile": {
            "name": "p1",
            "actions": [
                {"action": "scale", "var": "x", "by": "standardize"},
                {"action": "formula", "name": "ratio", "expression": "y / noise"}
            ],
            "thresholds": {"good": 0.7, "moderate": 0.4}
        }
    });
    let t = e.analyst.transform(&rref, &profile_body).await.unwrap();
    assert!(t["csv"].as_str().unwrap().starts_with("x,y,noise,label,ratio\n"));
    assert!(!t["division_by_zero_rows"].as_array().unwrap().is_empty());
    let saved = e.analyst.saved_profile("p1").await.unwrap();
    assert_eq!(saved["thresholds"]["good"], 0.7);
    let t2 = e.analyst.transform(&rref, &json!({"profile": saved})).await.unwrap();
    assert_eq!(t2["csv"], t["csv"]);
    let bad = e
        .analyst
        .transform(&rref, &json!({"profile": {"name": "q", "actions": [{"action": "formula", "name": "z", "expression": "x +"}]}}))
        .await
        .unwrap_err();
    assert_eq!(bad.code(), Some("FormulaParseError"));
    let bad = e.analyst.correlations(&rref, None, Some((0.3, 0.4))).await.unwrap_err();
    assert_eq!(bad.code(), Some("InvalidThresholds"));
}

#[tokio::test]
async fn module_errors_map_to_documented_codes() {
    let e = env(0.0).await;
    let code = |r: Result<Value, fabric_middleware::ClientError>| match r {
        Err(fabric_middleware::ClientError::Api { status, body }) => (status, body.code),
        other => panic!("expected an API error, got {other:?}"),
    };
    assert_eq!(code(e.designer.duplicate("/shared/demo", None).await), (409, "CloneForbidden".into()));
    assert_eq!(code(e.designer.duplicate("/shared", None).await), (409, "CloneForbidden".into()));
    assert_eq!(code(e.designer.add_version("/shared/demo").await), (422, "NotAWorkflow".into()));
    assert_eq!(code(e.designer.put_file("/shared/demo", b"x".to_vec()).await), (422, "NotAVersionDirectory".into()));
    assert_eq!(code(e.designer.create_use_case("shared", "demo", &[]).await), (409, "DuplicateName".into()));
    assert_eq!(code(e.analyst.create_use_case("shared", "x", &[]).await), (403, "PermissionDenied".into()));
    assert_eq!(code(e.analyst.issue_key("ana", None).await), (403, "PermissionDenied".into()));
    assert_eq!(code(e.fabric.admin().issue_key("ana", Some(0)).await), (422, "InvalidTtl".into()));
    assert_eq!(code(e.designer.list("/shared/../x").await), (422, "MalformedPath".into()));
    let missing = conf(0.0).replace("results_destination: demo/results\n", "");
    match e.designer.validate_config(missing.into_bytes(), None).await {
        Err(fabric_middleware::ClientError::Api { status, body }) => {
            assert_eq!((status, body.code.as_str()), (422, "MissingField"));
            assert_eq!(body.detail["key"], "results_destination");
        }
        other => panic!("{other:?}"),
    }
    let unknown = conf(0.0).replace("table.py", "missing.py");
    match e.designer.validate_config(unknown.into_bytes(), Some("/shared/demo/wf/v1")).await {
        Err(fabric_middleware::ClientError::Api { body, .. }) => {
            assert_eq!(body.code, "UnknownScript");
            assert_eq!(body.detail["key"], "missing.py");
        }
        other => panic!("{other:?}"),
    }
    let ok = e.designer.validate_config(conf(0.0).into_bytes(), Some("/shared/demo/wf/v1")).await.unwrap();
    assert_eq!(ok["name"], "demo");
    match e.designer.get_file("/shared/demo/wf/v1/nothing.py").await {
        Err(fabric_middleware::ClientError::Api { status, .. }) => assert_eq!(status, 404),
        other => panic!("{other:?}"),
    }
    let dup = e.designer.duplicate("/shared/demo/wf/v1/table.py", None).await.unwrap();
    assert_eq!(dup["path"], "/shared/demo/wf/v1/table1.py");
    assert_eq!(e.designer.get_file("/shared/demo/wf/v1/table.py").await.unwrap(), SCRIPT.as_bytes());
    let listing = e.designer.list("/shared/demo/wf/v1").await.unwrap();
    assert_eq!(listing.as_array().unwrap().len(), 3);
    let not_yet = e.analyst.submit(CONF_PATH, &BTreeMap::new()).await.unwrap();
    let early = e.analyst.result(not_yet.task_id.as_str()).await;
    if let Err(err) = early {
        assert_eq!(err.code(), Some("NotComplete"));
    }
    let foreign = e.other.task(not_yet.task_id.as_str()).await.unwrap_err();
    assert_eq!(foreign.code(), Some("PermissionDenied"));
    assert_eq!(e.analyst.task("zz-not-hex").await.unwrap_err().code(), Some("NotFound"));
}

#[tokio::test]
async fn log_stream_live_history_and_access() {
    let e = env(1.0).await;
    let task = e.analyst.submit(CONF_PATH, &BTreeMap::new()).await.unwrap();
    let id = task.task_id.to_string();
    let mut live = Vec::new();
    e.analyst
        .follow_logs(&id, None, |event, entry| live.push((event.to_string(), entry)))
        .await
        .unwrap();
    let live_checkpoints: Vec<TaskState> = live.iter().filter_map(|(_, e)| e.checkpoint).collect();
    assert!(live_checkpoints.ends_with(&[TaskState::Sent, TaskState::Complete]), "{live_checkpoints:?}");
    assert!(live.iter().all(|(ev, e)| (ev == "checkpoint") == e.checkpoint.is_some()));
    let seqs: Vec<u64> = live.iter().map(|(_, e)| e.seq).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]), "ordering preserved: {seqs:?}");

    let mut history = Vec::new();
    e.analyst
        .follow_logs(&id, Some("runtime"), |_, entry| history.push(entry))
        .await
        .unwrap();
    let checkpoints: Vec<TaskState> = history.iter().filter_map(|e| e.checkpoint).collect();
    assert_eq!(checkpoints.len(), 6);
    assert_eq!(checkpoints.last(), Some(&TaskState::Complete));

    let denied = e.other.follow_logs(&id, None, |_, _| {}).await.unwrap_err();
    assert_eq!(denied.code(), Some("PermissionDenied"));
}

#[tokio::test]
async fn get_routes_leave_state_untouched() {
    let e = env(0.0).await;
    let task = e.analyst.submit(CONF_PATH, &BTreeMap::new()).await.unwrap();
    let id = task.task_id.to_string();
    wait_state(&e.analyst, &id, TaskState::Complete).await;
    e.analyst
        .transform(&id, &json!({"save": true, "profile": {"name": "p1", "actions": []}}))
        .await
        .unwrap();
    let state = e.fabric.fabric.state_dir().to_path_buf();
    let gets = [
        "/v1/repo?path=/shared/demo/wf/v1".to_string(),
        format!("/v1/repo/files?path={CONF_PATH}"),
        "/v1/tasks".to_string(),
        format!("/v1/tasks/{id}"),
        format!("/v1/tasks/{id}/logs"),
        format!("/v1/tasks/{id}/logs?stream=error"),
        format!("/v1/tasks/{id}/logs/stream"),
        format!("/v1/tasks/{id}/result"),
        format!("/v1/results/{id}/artifacts/table.csv"),
        format!("/v1/results/{id}/profile"),
        format!("/v1/results/{id}/correlations"),
        format!("/v1/results/{id}/recommendations"),
        "/v1/profiles/p1".to_string(),
    ];
    let get_routes = ROUTES.iter().filter(|r| r.method == "GET" && r.authenticated).count();
    assert_eq!(gets.len() - 1, get_routes, "every authenticated GET route is exercised");
    for path in gets {
        let before = state_hash(&state);
        let r = e.analyst.raw(Method::GET, &path, Vec::new()).await.unwrap();
        assert!(r.is_success(), "{path}: {:?}", r.error_body());
        assert_eq!(state_hash(&state), before, "GET {path} changed persisted state");
    }
}

#[tokio::test]
async fn cancel_and_rerun_over_http() {
    let e = env(3.0).await;
    let task = e.analyst.submit(CONF_PATH, &BTreeMap::new()).await.unwrap();
    let id = task.task_id.to_string();
    wait_state_reached(&e.analyst, &id, TaskState::Sent).await;
    let fresh = e.analyst.rerun(&id, &BTreeMap::from([("delay".to_string(), json!(0))])).await.unwrap();
    assert_ne!(fresh.task_id, task.task_id);
    assert_eq!(e.analyst.task(&id).await.unwrap().state, TaskState::Canceled);
    assert_eq!(fresh.parameters["delay"], json!(0));
    wait_state(&e.analyst, fresh.task_id.as_str(), TaskState::Complete).await;
    let again = e.analyst.cancel(fresh.task_id.as_str()).await.unwrap_err();
    assert_eq!(again.code(), Some("AlreadyTerminal"));
    let foreign = e.other.cancel(&id).await.unwrap_err();
    assert_eq!(foreign.code(), Some("PermissionDenied"));
}

async fn wait_state_reached(c: &ApiClient, id: &str, want: TaskState) {
    for _ in 0..600 {
        if c.task(id).await.unwrap().state == want {
            return;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("never reached {want:?}");
}
