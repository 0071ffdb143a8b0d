use std::path::{Path, PathBuf};

use fabric_agent::PacRunnerSpec;
use fabric_middleware::local::{LocalFabric, DAS_KEY_ID};
use serde_json::Value;

const SCRIPT: &str = r#"
with open("out/table.csv", "w") as f:
    f.write("x,y,group\n")
    for i in range(1, 31):
        f.write("%d,%d,%s\n" % (i, 3 * i - 2, "ab"[i % 2]))
"#;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Out {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

struct Session {
    endpoint: String,
    key_id: String,
    secret_file: PathBuf,
}

impl Session {
    async fn run(&self, args: &[&str]) -> Out {
        let out = tokio::process::Command::new(env!("CARGO_BIN_EXE_fabric"))
            .args(args)
            .env("FABRIC_ENDPOINT", &self.endpoint)
            .env("FABRIC_KEY_ID", &self.key_id)
            .env("FABRIC_SECRET_FILE", &self.secret_file)
            .output()
            .await
            .unwrap();
        Out {
            code: out.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        }
    }

    async fn ok(&self, args: &[&str]) -> Out {
        let out = self.run(args).await;
        assert_eq!(out.code, 0, "fabric {args:?}: {}", out.stderr);
        out
    }
}

async fn login(admin: &Session, dir: &Path, user: &str, role: &str) -> Session {
    admin.ok(&["principal", "add", user, "--role", role]).await;
    let secret_file = dir.join(format!("{user}.secret"));
    let issued = admin
        .ok(&["key", "issue", user, "--secret-out", secret_file.to_str().unwrap()])
        .await;
    let v = issued.json();
    assert!(v.get("secret").is_none(), "secret must go to the file only");
    let secret = std::fs::read_to_string(&secret_file).unwrap();
    assert!(!secret.is_empty() && !issued.stdout.contains(&secret));
    Session {
        endpoint: admin.endpoint.clone(),
        key_id: v["key_id"].as_str().unwrap().to_string(),
        secret_file,
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn headless_workflow_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let lf = LocalFabric::start(&dir.path().join("fabric"), &["siteA"], PacRunnerSpec::default())
        .await
        .unwrap();
    let state = lf.fabric.state_dir();
    let admin = Session {
        endpoint: lf.endpoint.clone(),
        key_id: std::fs::read_to_string(state.join("admin.key_id")).unwrap().trim().to_string(),
        secret_file: state.join("admin.secret"),
    };
    let dana = login(&admin, dir.path(), "dana", "workflow_designer").await;
    let ana = login(&admin, dir.path(), "ana", "data_analyst").await;

    let script = dir.path().join("table.py");
    std::fs::write(&script, SCRIPT).unwrap();
    let conf = dir.path().join("conf.yml");
    std::fs::write(
        &conf,
        format!(
            "name: demo\ndas_endpoint: loopback\ncredential_ref: {DAS_KEY_ID}\ndatasets: []\n\
steps:\n  - {{site: siteA, script: table.py, params: {{k: 1}}}}\nresults_destination: demo/out\n"
        ),
    )
    .unwrap();

    dana.ok(&["usecase", "create", "demo", "--sites", "siteA"]).await;
    let v = dana.ok(&["repo", "mkver", "/shared/demo/wf"]).await.json();
    assert_eq!(v["path"], "/shared/demo/wf/v1");
    dana.ok(&["repo", "put", "/shared/demo/wf/v1/table.py", "--file", script.to_str().unwrap()])
        .await;
    dana.ok(&["repo", "put", "/shared/demo/wf/v1/conf.yml", "--file", conf.to_str().unwrap()])
        .await;
    let checked = dana
        .ok(&["config", "validate", conf.to_str().unwrap(), "--version", "/shared/demo/wf/v1"])
        .await
        .json();
    assert_eq!(checked["name"], "demo");
    dana.ok(&["repo", "enable", "/shared/demo/wf/v1"]).await;
    let listing = dana.ok(&["repo", "ls", "/shared/demo/wf", "-o", "table"]).await;
    assert!(listing.stdout.starts_with("path"));
    assert!(listing.stdout.contains("/shared/demo/wf/v1"));
    let fetched = dana.ok(&["repo", "get", "/shared/demo/wf/v1/table.py"]).await;
    assert_eq!(fetched.stdout, SCRIPT);

    let dup = dana.run(&["repo", "dup", "/shared/demo"]).await;
    assert_eq!(dup.code, 1);
    assert!(dup.stderr.contains("CloneForbidden"), "{}", dup.stderr);

    admin
        .ok(&["principal", "grant", "ana", "--resource", "/shared/demo", "--action", "read"])
        .await;
    let submitted = ana
        .ok(&["task", "submit", "--config", "/shared/demo/wf/v1/conf.yml", "-o", "table"])
        .await;
    let id = submitted.stdout.trim().to_string();
    assert!(fabric_core::domain::TaskId::new(id.clone()).is_well_formed(), "{id:?}");

    let follow = ana.ok(&["task", "logs", &id, "--follow", "-o", "table"]).await;
    let checkpoints: Vec<&str> = follow.stdout.lines().filter(|l| l.contains(" [")).collect();
    assert!(checkpoints.last().unwrap().contains("[complete]"), "{}", follow.stdout);
    let snapshot = ana.ok(&["task", "logs", &id]).await.json();
    assert!(snapshot.as_array().unwrap().len() >= 6);

    let tasks = ana.ok(&["task", "ls"]).await.json();
    assert_eq!(tasks[0]["state"], "complete");
    assert_eq!(ana.ok(&["task", "show", &id]).await.json()["progress"], 1.0);
    let result = ana.ok(&["task", "result", &id]).await.json();
    let rref = result["result_ref"].as_str().unwrap().to_string();

    let artifact = ana.ok(&["result", "artifact", &rref, "table.csv"]).await;
    assert!(artifact.stdout.starts_with("x,y,group\n1,1,b\n"));
    let profile = ana.ok(&["result", "profile", &rref]).await.json();
    assert_eq!(profile["report"]["row_count"], 30);
    let corr = ana.ok(&["result", "corr", &rref, "--good", "0.8", "--moderate", "0.5", "-o", "table"]).await;
    assert!(corr.stdout.lines().nth(1).unwrap().contains("good"), "{}", corr.stdout);
    let rec = ana.ok(&["result", "recommend", &rref, "--select", "x,y"]).await.json();
    assert_eq!(rec[0]["kind"], "scatter_plot");

    let profile_file = dir.path().join("p.json");
    std::fs::write(
        &profile_file,
        r#"{"name":"double","actions":[{"action":"formula","name":"x2","expression":"x * 2"}]}"#,
    )
    .unwrap();
    let t = ana
        .ok(&["result", "transform", &rref, "--profile", profile_file.to_str().unwrap(), "--save", "-o", "table"])
        .await;
    assert!(t.stdout.starts_with("x,y,group,x2\n1,1,b,2\n"), "{}", t.stdout);
    let saved = ana.ok(&["result", "saved-profile", "double"]).await.json();
    assert_eq!(saved["name"], "double");

    let again = ana.run(&["task", "cancel", &id]).await;
    assert_eq!(again.code, 1);
    assert!(again.stderr.contains("AlreadyTerminal"));
    let rerun = ana.ok(&["task", "rerun", &id, "--param", "k=2"]).await.json();
    assert_ne!(rerun["task_id"], id.as_str());
    assert_eq!(rerun["parameters"]["k"], 2);

    let denied = ana.run(&["usecase", "create", "nope", "--sites", "siteA"]).await;
    assert_eq!(denied.code, 1);
    assert!(denied.stderr.contains("PermissionDenied"));
    let usage = ana.run(&["task", "submit"]).await;
    assert_eq!(usage.code, 2);
    assert!(usage.stderr.contains("Usage:"));
    let bad_param = ana.run(&["task", "submit", "--config", "/shared/demo/wf/v1/conf.yml", "--param", "oops"]).await;
    assert_eq!(bad_param.code, 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn servers_start_from_config_files() {
    use std::io::{BufRead, BufReader};
    let dir = tempfile::tempdir().unwrap();
    let lf = LocalFabric::start(&dir.path().join("fabric"), &["siteA"], PacRunnerSpec::default())
        .await
        .unwrap();
    // Reuse the generated agent config on a fresh port and state directory.
    let mut cfg = lf.site("siteA").config.clone();
    cfg.listen = "127.0.0.1:0".parse().unwrap();
    cfg.state_dir = dir.path().join("agent2-state");
    cfg.work_dir = dir.path().join("agent2-work");
    let path = dir.path().join("agent.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_fabric"))
        .args(["agent", "serve", "--config", path.to_str().unwrap()])
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    assert!(line.contains("site agent siteA listening on http://127.0.0.1:"), "{line}");
    let url = line.trim().rsplit(' ').next().unwrap().to_string();
    let health = tokio::net::TcpStream::connect(url.trim_start_matches("http://")).await;
    assert!(health.is_ok());
    child.kill().unwrap();
    child.wait().unwrap();
}
