//! Runs the fixture workflows end to end and checks their documented
//! outcomes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use fabric_agent::service::SiteTaskState;
use fabric_agent::{PacRunnerSpec, TaskStatus};
use fabric_core::domain::{Command, ParamMap, SiteId, Task, TaskId, TaskState};
use fabric_middleware::local::LocalFabric;
use fabric_middleware::ApiClient;

use crate::assets::{FixtureWorkflow, ALL, EARTH_EXTRACT, EARTH_SUMMARY, LIGHT_SWITCH};
use crate::deploy::{grant_read, install, install_datasets, FixtureError};
use crate::generate::{earth_records, shbe_data, EarthSpec, ShbeSpec};
use crate::oracle::standalone_loop;

pub const SITES: [&str; 3] = ["siteA", "siteB", "siteC"];
pub const DESIGNER: &str = "dana";
pub const ANALYST: &str = "ana";

/// Agreement required between the fabric run and the central oracle.
pub const ORACLE_TOLERANCE: f64 = 1e-9;
/// Allowed distance of recovered coefficients from the generating ones.
pub const GROUND_TRUTH_TOLERANCE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Criterion {
    pub fn from_result(name: impl Into<String>, r: Result<String, String>) -> Self {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        Criterion {
            name: name.into(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub criteria: Vec<Criterion>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.criteria {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// A three-site loopback fabric with every fixture workflow and dataset
/// installed, a designer who authored them and an analyst allowed to run them.
pub struct Harness {
    pub fabric: LocalFabric,
    pub admin: ApiClient,
    pub designer: ApiClient,
    pub analyst: ApiClient,
    pub seed: u64,
}

impl Harness {
    pub async fn start(root: &Path, seed: u64) -> Result<Self, FixtureError> {
        let fabric = LocalFabric::start(root, &SITES, PacRunnerSpec::default()).await?;
        let admin = fabric.admin();
        let designer = fabric
            .user(DESIGNER, &[fabric_core::domain::Role::WorkflowDesigner])
            .await?;
        let analyst = fabric.user(ANALYST, &[fabric_core::domain::Role::DataAnalyst]).await?;
        install_datasets(&fabric, seed, &[ANALYST, DESIGNER]).await?;
        for wf in ALL {
            install(&designer, wf).await?;
        }
        let use_cases: BTreeSet<&str> = ALL.iter().map(|w| w.use_case()).collect();
        for uc in use_cases {
            grant_read(&admin, ANALYST, &format!("/shared/{uc}")).await?;
        }
        Ok(Harness {
            fabric,
            admin,
            designer,
            analyst,
            seed,
        })
    }

    pub async fn wait_terminal(&self, id: &TaskId, timeout: Duration) -> Result<Task, FixtureError> {
        let deadline = Instant::now() + timeout;
        loop {
            let t = self.analyst.task(id.as_str()).await?;
            if t.state.is_terminal() {
                return Ok(t);
            }
            if Instant::now() > deadline {
                return Err(FixtureError::Unexpected(format!("task {id} still {:?} after {timeout:?}", t.state)));
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    }

    /// Submits as the analyst and waits for a terminal state.
    pub async fn run(&self, wf: &FixtureWorkflow, overrides: ParamMap) -> Result<Task, FixtureError> {
        let task = self.analyst.submit(&wf.config_path(), &overrides).await?;
        self.wait_terminal(&task.task_id, Duration::from_secs(120)).await
    }

    /// The agent-side record of `task` on `site`.
    pub fn site_status(&self, site: &str, task: &TaskId) -> Option<TaskStatus> {
        let s = self.fabric.site(site);
        let mw = s.agent.auth().principal(&s.config.middleware.user)?;
        s.agent.status(&mw, task).ok()
    }

    async fn artifacts(&self, task: &Task) -> Result<BTreeMap<String, Vec<u8>>, FixtureError> {
        let rref = task
            .result_ref
            .clone()
            .ok_or_else(|| FixtureError::Unexpected(format!("task {} has no result", task.task_id)))?;
        let listing = self.analyst.result(task.task_id.as_str()).await?;
        let mut out = BTreeMap::new();
        for name in listing["artifacts"].as_array().into_iter().flatten() {
            let name = name.as_str().unwrap_or_default().to_string();
            let bytes = self.analyst.artifact(&rref, &name).await?;
            out.insert(name, bytes);
        }
        Ok(out)
    }
}

fn fail(e: impl fmt::Display) -> String {
    e.to_string()
}

fn expect_complete(task: &Task) -> Result<(), String> {
    if task.state == TaskState::Complete {
        Ok(())
    } else {
        Err(format!("task {} ended {:?}", task.task_id, task.state))
    }
}

fn params(pairs: &[(&str, Value)]) -> ParamMap {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Extraction for `year` emits exactly the twelve monthly contour files.
pub async fn check_extraction(h: &Harness, year: i32) -> Result<String, String> {
    let task = h.run(&EARTH_EXTRACT, params(&[("year", json!(year))])).await.map_err(fail)?;
    expect_complete(&task)?;
    let artifacts = h.artifacts(&task).await.map_err(fail)?;
    let contours: Vec<&String> = artifacts.keys().filter(|n| n.starts_with("contours_")).collect();
    let expected: Vec<String> = (1..=12).map(|m| format!("contours_{year}_{m:02}.json")).collect();
    if contours.iter().map(|s| s.as_str()).ne(expected.iter().map(|s| s.as_str())) {
        return Err(format!("artifacts {contours:?}, expected {expected:?}"));
    }
    let spec = EarthSpec::default();
    let cells = crate::generate::REGIONS.len() * spec.cells_per_region;
    for (m, name) in expected.iter().enumerate() {
        let doc: Value = serde_json::from_slice(&artifacts[name]).map_err(fail)?;
        let features = doc["features"].as_array().map(Vec::len).unwrap_or_default();
        if doc["properties"]["month"] != json!(m + 1) || features != cells {
            return Err(format!("{name}: month {} with {features} cells", doc["properties"]["month"]));
        }
    }
    Ok(format!("12 monthly artifacts for {year}, {cells} cells each"))
}

/// An unknown year fails the task with the script error in the error log.
pub async fn check_unknown_year(h: &Harness) -> Result<String, String> {
    let task = h.run(&EARTH_EXTRACT, params(&[("year", json!(1900))])).await.map_err(fail)?;
    if task.state != TaskState::Failed {
        return Err(format!("unknown year ended {:?}", task.state));
    }
    let errors = h.analyst.logs(task.task_id.as_str(), Some("error")).await.map_err(fail)?;
    let text: Vec<&str> = errors.iter().map(|e| e.message.as_str()).collect();
    let joined = text.join("\n");
    if joined.contains("ScriptError") && joined.contains("no pr data for model ccsm4 in year 1900") {
        Ok("unknown year reported as ScriptError in the error log".into())
    } else {
        Err(format!("error log lacks the script error: {joined}"))
    }
}

/// The summary groups by exactly four seasons times the configured regions,
/// and each group's means agree with a direct computation over the dataset.
pub async fn check_summary(h: &Harness) -> Result<String, String> {
    let task = h.run(&EARTH_SUMMARY, ParamMap::new()).await.map_err(fail)?;
    expect_complete(&task)?;
    let config = EARTH_SUMMARY.config();
    let step = &config.steps[0].params;
    let regions: Vec<String> = step["regions"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|v| v.as_str().map(String::from))
        .collect();
    let model = step["model"].as_str().unwrap_or_default().to_string();
    let (first, last) = (step["first_year"].as_i64().unwrap_or(0), step["last_year"].as_i64().unwrap_or(0));
    let artifacts = h.artifacts(&task).await.map_err(fail)?;
    let csv = artifacts
        .get("seasonal_summary.csv")
        .ok_or_else(|| format!("no seasonal summary among {:?}", artifacts.keys()))?;
    let text = String::from_utf8_lossy(csv);
    let mut lines = text.lines();
    if lines.next() != Some("season,region,samples,pr_mean,tas_mean") {
        return Err("unexpected seasonal summary header".into());
    }
    let season_of = |m: u32| match m {
        12 | 1 | 2 => "DJF",
        3..=5 => "MAM",
        6..=8 => "JJA",
        _ => "SON",
    };
    let mut oracle: BTreeMap<(String, String), (usize, f64, f64)> = BTreeMap::new();
    for r in earth_records(h.seed, &EarthSpec::default()) {
        if r.model != model || i64::from(r.year) < first || i64::from(r.year) > last || !regions.iter().any(|g| g == r.region) {
            continue;
        }
        let acc = oracle.entry((season_of(r.month).to_string(), r.region.to_string())).or_default();
        acc.0 += 1;
        acc.1 += r.pr;
        acc.2 += r.tas;
    }
    let mut groups = BTreeSet::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let [season, region, samples, pr, tas] = f[..] else {
            return Err(format!("malformed row {line}"));
        };
        if !groups.insert((season.to_string(), region.to_string())) {
            return Err(format!("group {season}/{region} repeated"));
        }
        let (n, spr, stas) = oracle
            .get(&(season.to_string(), region.to_string()))
            .copied()
            .ok_or_else(|| format!("unexpected group {season}/{region}"))?;
        let close = |got: &str, want: f64| got.parse::<f64>().is_ok_and(|g| (g - want).abs() <= 1e-6);
        if samples != n.to_string() || !close(pr, spr / n as f64) || !close(tas, stas / n as f64) {
            return Err(format!("group {season}/{region} disagrees with the direct computation"));
        }
    }
    let seasons: BTreeSet<&str> = groups.iter().map(|(s, _)| s.as_str()).collect();
    let seen_regions: BTreeSet<&str> = groups.iter().map(|(_, r)| r.as_str()).collect();
    let want_regions: BTreeSet<&str> = regions.iter().map(String::as_str).collect();
    if seasons != BTreeSet::from(["DJF", "MAM", "JJA", "SON"]) || seen_regions != want_regions || groups.len() != 4 * regions.len() {
        return Err(format!("groups {groups:?}"));
    }
    Ok(format!("{} records: 4 seasons x {} regions", groups.len(), regions.len()))
}

/// The three-site iterative workflow: bounded iterations, coefficients
/// matching both the central oracle and the ground truth, one-time first
/// steps and exactly one worker command per iteration.
pub async fn check_light_switch(h: &Harness) -> Result<String, String> {
    let config = LIGHT_SWITCH.config();
    let stop = config.stop.clone().ok_or("fixture has no stopping condition")?;
    let coordinator_params = &config.steps.last().ok_or("no steps")?.params;
    let step_size = coordinator_params["step_size"].as_f64().unwrap_or(0.5);

    let task = h.run(&LIGHT_SWITCH, ParamMap::new()).await.map_err(fail)?;
    expect_complete(&task)?;
    let artifacts = h.artifacts(&task).await.map_err(fail)?;
    let model: Value = serde_json::from_slice(artifacts.get("model.json").ok_or("no model.json in results")?).map_err(fail)?;
    let beta: Vec<f64> = model["beta"].as_array().into_iter().flatten().filter_map(Value::as_f64).collect();
    let iterations = model["iteration"].as_u64().unwrap_or(0) as u32;

    let spec = ShbeSpec::default();
    let data = shbe_data(h.seed, &spec);
    let oracle = standalone_loop(&data.rows, step_size, stop.max_iterations, stop.relative_tolerance);
    if iterations == 0 || iterations > stop.max_iterations {
        return Err(format!("ran {iterations} iterations (bound {})", stop.max_iterations));
    }
    if iterations != oracle.iterations {
        return Err(format!("ran {iterations} iterations, oracle stops after {}", oracle.iterations));
    }
    let oracle_gap = beta.iter().zip(oracle.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let truth_gap = beta
        .iter()
        .zip(spec.coefficients)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if beta.len() != 3 || oracle_gap > ORACLE_TOLERANCE || truth_gap > GROUND_TRUTH_TOLERANCE {
        return Err(format!(
            "beta {beta:?}: {oracle_gap:.2e} from oracle, {truth_gap:.2e} from ground truth"
        ));
    }

    let coordinator = "siteC";
    for site in SITES {
        let status = h
            .site_status(site, &task.task_id)
            .ok_or_else(|| format!("{site} holds no record of the task"))?;
        let first_steps = status.steps.iter().filter(|s| s.script == "init.py").count();
        if first_steps != 1 {
            return Err(format!("{site} ran its first step {first_steps} times"));
        }
        if status.state != SiteTaskState::Finished {
            return Err(format!("{site} ended {:?}, expected Finished by Terminate", status.state));
        }
        if site == coordinator {
            continue;
        }
        let refine_index = config
            .steps
            .iter()
            .position(|s| s.site == SiteId::new(site) && s.script == "refine.py")
            .ok_or_else(|| format!("{site} has no refine step"))?;
        for k in 1..=iterations {
            let commands: Vec<Command> = status
                .steps
                .iter()
                .filter(|s| s.iteration == k && s.script == "refine.py")
                .map(|s| s.command)
                .collect();
            if commands.len() != 1 || commands[0] == Command::Aggregate || commands[0] == Command::Terminate {
                return Err(format!("{site} iteration {k} received {commands:?}"));
            }
            let on_disk = h
                .fabric
                .site(site)
                .agent
                .task_dir(&task.task_id)
                .join(format!("{k}-{refine_index}-refine.py"))
                .join("command.txt");
            let text = std::fs::read_to_string(&on_disk).map_err(|e| format!("{}: {e}", on_disk.display()))?;
            if text != format!("COMMAND={}\nITERATION={k}", commands[0]) {
                return Err(format!("{} holds {text:?}", on_disk.display()));
            }
        }
        // After the last iteration the only delivery is the Terminate command.
        let after: Vec<(u32, Command)> = status
            .steps
            .iter()
            .filter(|s| s.iteration > iterations)
            .map(|s| (s.iteration, s.command))
            .collect();
        if after != [(iterations + 1, Command::Terminate)] {
            return Err(format!("{site} after the last iteration received {after:?}"));
        }
    }
    Ok(format!(
        "{iterations} iterations (bound {}), coefficients within {truth_gap:.1e} of ground truth and {oracle_gap:.1e} of the oracle, first steps once, one command per worker per iteration",
        stop.max_iterations
    ))
}

/// Two runs over identical data produce identical result artifacts.
pub async fn check_determinism(h: &Harness) -> Result<String, String> {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let task = h.run(&EARTH_EXTRACT, ParamMap::new()).await.map_err(fail)?;
        expect_complete(&task)?;
        let mut artifacts = h.artifacts(&task).await.map_err(fail)?;
        artifacts.retain(|name, _| !name.starts_with('_'));
        runs.push(artifacts);
    }
    if runs[0] == runs[1] {
        Ok(format!("{} artifacts byte-identical across runs", runs[0].len()))
    } else {
        Err("result artifacts differ between identical runs".into())
    }
}

/// Runs both use cases on a fresh three-site fabric under `root`.
pub async fn run_acceptance_workflows(root: &Path, seed: u64) -> Report {
    let h = match Harness::start(root, seed).await {
        Ok(h) => h,
        Err(e) => {
            return Report {
                criteria: vec![Criterion::from_result("fabric start", Err(e.to_string()))],
            }
        }
    };
    let mut report = Report::default();
    report.criteria.push(Criterion::from_result("earth extraction", check_extraction(&h, 2050).await));
    report.criteria.push(Criterion::from_result("earth unknown year", check_unknown_year(&h).await));
    report.criteria.push(Criterion::from_result("earth summary", check_summary(&h).await));
    report.criteria.push(Criterion::from_result("light switch loop", check_light_switch(&h).await));
    report.criteria.push(Criterion::from_result("determinism", check_determinism(&h).await));
    report
}
