//! `fabric`: headless client for the `/v1` API and launcher for the
//! middleware and site agents.
//!
//! Exit status is 0 on success, 1 when the fabric rejects the request or is
//! unreachable, and 2 for usage errors (including missing credentials).

pub mod output;
pub mod parity;

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};
use tokio_util::sync::CancellationToken;

use fabric_agent::{AgentConfig, SiteAgent};
use fabric_core::auth::Secret;
use fabric_core::domain::{KeyId, LogEntry, ParamMap};
use fabric_middleware::{ApiClient, ClientError, Fabric, MiddlewareConfig};

pub use output::Format;

#[derive(Debug, Parser)]
#[command(name = "fabric", version, about = "Client for the analysis fabric API")]
pub struct Cli {
    #[command(flatten)]
    pub conn: Connection,
    /// Output format; defaults to `table` on a terminal and `json` otherwise.
    #[arg(long, short = 'o', global = true, value_enum)]
    pub output: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

/// Connection settings. The secret is read from a file or the environment
/// and is never printed.
#[derive(Debug, Args)]
pub struct Connection {
    #[arg(long, global = true, env = "FABRIC_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, global = true, env = "FABRIC_KEY_ID")]
    pub key_id: Option<String>,
    #[arg(long, global = true, env = "FABRIC_SECRET_FILE")]
    pub secret_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Use-case folders.
    #[command(subcommand)]
    Usecase(UsecaseCmd),
    /// Repository browsing and editing.
    #[command(subcommand)]
    Repo(RepoCmd),
    /// Workflow configuration checks.
    #[command(subcommand)]
    Config(ConfigCmd),
    /// Task submission and monitoring.
    #[command(subcommand)]
    Task(TaskCmd),
    /// Result exploration.
    #[command(subcommand)]
    Result(ResultCmd),
    /// API keys.
    #[command(subcommand)]
    Key(KeyCmd),
    /// Principals and permissions.
    #[command(subcommand)]
    Principal(PrincipalCmd),
    /// Site agent operation.
    #[command(subcommand)]
    Agent(AgentCmd),
    /// Runs the middleware.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum UsecaseCmd {
    Create {
        name: String,
        /// Data sites the use case runs on.
        #[arg(long, value_delimiter = ',')]
        sites: Vec<String>,
        #[arg(long, default_value = "shared")]
        root: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum RepoCmd {
    Ls {
        path: String,
    },
    /// Uploads a local file (or stdin with `-`) to a repository path.
    Put {
        path: String,
        #[arg(long, default_value = "-")]
        file: PathBuf,
    },
    /// Writes a repository file to stdout or `--out`.
    Get {
        path: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Dup {
        path: String,
        /// Destination tree, e.g. `/user` to clone into your own tree.
        #[arg(long)]
        into: Option<String>,
    },
    Mkver {
        workflow: String,
    },
    Enable {
        version: String,
        #[arg(long)]
        disable: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigCmd {
    Validate {
        file: PathBuf,
        /// Version directory whose scripts the config may reference.
        #[arg(long)]
        version: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TaskCmd {
    Submit {
        #[arg(long)]
        config: String,
        /// Parameter override `key=value`; values parse as JSON when they can.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    Ls,
    Show {
        id: String,
    },
    Logs {
        id: String,
        #[arg(long)]
        stream: Option<String>,
        /// Streams entries until the task reaches a terminal state.
        #[arg(long)]
        follow: bool,
    },
    Cancel {
        id: String,
    },
    Rerun {
        id: String,
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    Result {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ResultCmd {
    Profile {
        result_ref: String,
        #[arg(long)]
        artifact: Option<String>,
    },
    Corr {
        result_ref: String,
        #[arg(long)]
        artifact: Option<String>,
        #[arg(long, requires = "moderate")]
        good: Option<f64>,
        #[arg(long, requires = "good")]
        moderate: Option<f64>,
    },
    Recommend {
        result_ref: String,
        #[arg(long)]
        artifact: Option<String>,
        #[arg(long, value_delimiter = ',')]
        select: Vec<String>,
    },
    /// Applies a transformation profile (a JSON file) to a result table.
    Transform {
        result_ref: String,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        artifact: Option<String>,
        /// Stores the profile under its name for later reuse.
        #[arg(long)]
        save: bool,
    },
    Artifact {
        result_ref: String,
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints a saved transformation profile.
    SavedProfile {
        name: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum KeyCmd {
    Issue {
        user: String,
        #[arg(long)]
        ttl: Option<u64>,
        /// Writes the new secret to this file (mode 0600) instead of stdout.
        #[arg(long)]
        secret_out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PrincipalCmd {
    Add {
        user: String,
        #[arg(long = "role", value_delimiter = ',')]
        roles: Vec<String>,
        #[arg(long = "owns", value_delimiter = ',')]
        owned_sites: Vec<String>,
    },
    Grant {
        user: String,
        /// Repository path or `dataset:<site>/<id>`.
        #[arg(long)]
        resource: String,
        #[arg(long = "action", value_delimiter = ',', required = true)]
        actions: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AgentCmd {
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api { body, .. } => Failure::Domain(format!("{}: {}", body.code, body.message)),
            other => Failure::Domain(other.to_string()),
        }
    }
}

fn io_failure(what: &Path, e: std::io::Error) -> Failure {
    Failure::Domain(format!("{}: {e}", what.display()))
}

/// Parses `key=value` overrides. Values that parse as JSON keep their type.
pub fn parse_params(items: &[String]) -> Result<ParamMap, String> {
    items
        .iter()
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| format!("parameter `{item}` must be KEY=VALUE"))?;
            if k.is_empty() {
                return Err(format!("parameter `{item}` has an empty key"));
            }
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            Ok((k.to_string(), value))
        })
        .collect()
}

fn client(conn: &Connection) -> Result<ApiClient, Failure> {
    let endpoint = conn
        .endpoint
        .as_deref()
        .ok_or_else(|| Failure::Usage("no endpoint: set --endpoint or FABRIC_ENDPOINT".into()))?;
    let key_id = conn
        .key_id
        .as_deref()
        .ok_or_else(|| Failure::Usage("no key id: set --key-id or FABRIC_KEY_ID".into()))?;
    let secret_file = conn
        .secret_file
        .as_deref()
        .ok_or_else(|| Failure::Usage("no secret: set --secret-file or FABRIC_SECRET_FILE".into()))?;
    let secret = std::fs::read_to_string(secret_file).map_err(|e| Failure::Usage(format!("{}: {e}", secret_file.display())))?;
    Ok(ApiClient::new(endpoint, KeyId::new(key_id), &Secret::new(secret.trim())))
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf).map_err(|e| io_failure(path, e))?;
        Ok(buf)
    } else {
        std::fs::read(path).map_err(|e| io_failure(path, e))
    }
}

fn write_private(path: &Path, contents: &str) -> std::io::Result<()> {
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.write_all(contents.as_bytes())
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn log_line(entry: &LogEntry) -> String {
    let checkpoint = entry
        .checkpoint
        .map(|c| format!(" [{}]", to_value(&c).as_str().unwrap_or_default()))
        .unwrap_or_default();
    format!(
        "{:>5} {} {:<7}{} {}\n",
        entry.seq,
        entry.timestamp.to_rfc3339(),
        entry.stream.as_str(),
        checkpoint,
        entry.message
    )
}

const TASK_COLUMNS: &[&str] = &["task_id", "state", "progress", "user", "config_path", "submitted_at"];

async fn shutdown_signal() -> CancellationToken {
    let token = CancellationToken::new();
    let t = token.clone();
    tokio::spawn(async move {
        let _ = tokio::signal::ctrl_c().await;
        t.cancel();
    });
    token
}

async fn execute(cli: Cli, format: Format, out: &mut dyn Write) -> Result<(), Failure> {
    let emit = |out: &mut dyn Write, v: &Value, cols: &[&str]| -> Result<(), Failure> {
        out.write_all(output::render(v, format, cols).as_bytes())
            .map_err(|e| Failure::Domain(e.to_string()))
    };
    let raw = |out: &mut dyn Write, bytes: &[u8], dest: &Option<PathBuf>| -> Result<(), Failure> {
        match dest {
            Some(p) => std::fs::write(p, bytes).map_err(|e| io_failure(p, e)),
            None => out.write_all(bytes).map_err(|e| Failure::Domain(e.to_string())),
        }
    };
    match cli.command {
        Command::Serve { config } => {
            let cfg = MiddlewareConfig::load(&config).map_err(|e| Failure::Domain(e.to_string()))?;
            let fabric = Arc::new(Fabric::open(&cfg).map_err(|e| Failure::Domain(e.to_string()))?);
            let listener = tokio::net::TcpListener::bind(cfg.listen).await.map_err(|e| Failure::Domain(e.to_string()))?;
            let addr = listener.local_addr().map_err(|e| Failure::Domain(e.to_string()))?;
            eprintln!("middleware listening on http://{addr}; admin credential in {}", cfg.state_dir.display());
            let stop = shutdown_signal().await;
            fabric_middleware::serve(fabric, listener, stop).await.map_err(|e| Failure::Domain(e.to_string()))
        }
        Command::Agent(AgentCmd::Serve { config }) => {
            let cfg = AgentConfig::load(&config).map_err(|e| Failure::Domain(e.to_string()))?;
            let agent = Arc::new(SiteAgent::from_config(&cfg).map_err(|e| Failure::Domain(e.to_string()))?);
            let listener = tokio::net::TcpListener::bind(cfg.listen).await.map_err(|e| Failure::Domain(e.to_string()))?;
            let addr = listener.local_addr().map_err(|e| Failure::Domain(e.to_string()))?;
            eprintln!("site agent {} listening on http://{addr}", cfg.site_id);
            let stop = shutdown_signal().await;
            fabric_agent::http::serve(agent, listener, stop).await.map_err(|e| Failure::Domain(e.to_string()))
        }
        command => {
            let api = client(&cli.conn)?;
            match command {
                Command::Usecase(UsecaseCmd::Create { name, sites, root }) => {
                    emit(out, &api.create_use_case(&root, &name, &sites).await?, &[])
                }
                Command::Repo(cmd) => match cmd {
                    RepoCmd::Ls { path } => emit(
                        out,
                        &api.list(&path).await?,
                        &["path", "kind", "size_bytes", "modified_at", "enabled"],
                    ),
                    RepoCmd::Put { path, file } => emit(out, &api.put_file(&path, read_input(&file)?).await?, &[]),
                    RepoCmd::Get { path, out: dest } => raw(out, &api.get_file(&path).await?, &dest),
                    RepoCmd::Dup { path, into } => emit(out, &api.duplicate(&path, into.as_deref()).await?, &[]),
                    RepoCmd::Mkver { workflow } => emit(out, &api.add_version(&workflow).await?, &[]),
                    RepoCmd::Enable { version, disable } => emit(out, &api.set_enabled(&version, !disable).await?, &[]),
                },
                Command::Config(ConfigCmd::Validate { file, version }) => {
                    let parsed = api.validate_config(read_input(&file)?, version.as_deref()).await?;
                    emit(out, &parsed, &["name", "credential_ref", "results_destination"])
                }
                Command::Task(cmd) => match cmd {
                    TaskCmd::Submit { config, params } => {
                        let overrides = parse_params(&params).map_err(Failure::Usage)?;
                        let task = api.submit(&config, &overrides).await?;
                        match format {
                            Format::Table => raw(out, format!("{}\n", task.task_id).as_bytes(), &None),
                            Format::Json => emit(out, &to_value(&task), &[]),
                        }
                    }
                    TaskCmd::Ls => emit(out, &to_value(&api.tasks().await?), TASK_COLUMNS),
                    TaskCmd::Show { id } => emit(out, &to_value(&api.task(&id).await?), TASK_COLUMNS),
                    TaskCmd::Logs { id, stream, follow } => {
                        if follow {
                            let mut write_err = None;
                            api.follow_logs(&id, stream.as_deref(), |_, entry| {
                                let line = match format {
                                    Format::Table => log_line(&entry),
                                    Format::Json => to_value(&entry).to_string() + "\n",
                                };
                                if let Err(e) = out.write_all(line.as_bytes()).and_then(|_| out.flush()) {
                                    write_err.get_or_insert(e);
                                }
                            })
                            .await?;
                            write_err.map_or(Ok(()), |e| Err(Failure::Domain(e.to_string())))
                        } else {
                            let entries = api.logs(&id, stream.as_deref()).await?;
                            match format {
                                Format::Table => {
                                    let text: String = entries.iter().map(log_line).collect();
                                    raw(out, text.as_bytes(), &None)
                                }
                                Format::Json => emit(out, &to_value(&entries), &[]),
                            }
                        }
                    }
                    TaskCmd::Cancel { id } => emit(out, &to_value(&api.cancel(&id).await?), TASK_COLUMNS),
                    TaskCmd::Rerun { id, params } => {
                        let overrides = parse_params(&params).map_err(Failure::Usage)?;
                        emit(out, &to_value(&api.rerun(&id, &overrides).await?), TASK_COLUMNS)
                    }
                    TaskCmd::Result { id } => emit(out, &api.result(&id).await?, &[]),
                },
                Command::Result(cmd) => match cmd {
                    ResultCmd::Profile { result_ref, artifact } => {
                        let v = api.profile(&result_ref, artifact.as_deref()).await?;
                        match format {
                            Format::Table => emit(out, &v["report"]["variables"], &["name", "type", "missing_count", "stats"]),
                            Format::Json => emit(out, &v, &[]),
                        }
                    }
                    ResultCmd::Corr { result_ref, artifact, good, moderate } => {
                        let thresholds = good.zip(moderate);
                        let v = api.correlations(&result_ref, artifact.as_deref(), thresholds).await?;
                        match format {
                            Format::Table => emit(out, &v["entries"], &["a", "b", "r", "pairs", "class", "color"]),
                            Format::Json => emit(out, &v, &[]),
                        }
                    }
                    ResultCmd::Recommend { result_ref, artifact, select } => {
                        emit(out, &api.recommendations(&result_ref, artifact.as_deref(), &select).await?, &[])
                    }
                    ResultCmd::Transform { result_ref, profile, artifact, save } => {
                        let text = read_input(&profile)?;
                        let profile: Value = serde_json::from_slice(&text)
                            .map_err(|e| Failure::Usage(format!("{}: {e}", profile.display())))?;
                        let v = api
                            .transform(&result_ref, &json!({ "profile": profile, "artifact": artifact, "save": save }))
                            .await?;
                        match format {
                            Format::Table => raw(out, v["csv"].as_str().unwrap_or_default().as_bytes(), &None),
                            Format::Json => emit(out, &v, &[]),
                        }
                    }
                    ResultCmd::Artifact { result_ref, name, out: dest } => {
                        raw(out, &api.artifact(&result_ref, &name).await?, &dest)
                    }
                    ResultCmd::SavedProfile { name } => emit(out, &api.saved_profile(&name).await?, &[]),
                },
                Command::Key(KeyCmd::Issue { user, ttl, secret_out }) => {
                    let mut v = api.issue_key(&user, ttl).await?;
                    if let Some(path) = secret_out {
                        let secret = v.as_object_mut().and_then(|m| m.remove("secret")).unwrap_or_default();
                        write_private(&path, secret.as_str().unwrap_or_default()).map_err(|e| io_failure(&path, e))?;
                    }
                    emit(out, &v, &[])
                }
                Command::Principal(cmd) => match cmd {
                    PrincipalCmd::Add { user, roles, owned_sites } => {
                        emit(out, &api.register_principal(&user, &roles, &owned_sites).await?, &[])
                    }
                    PrincipalCmd::Grant { user, resource, actions } => emit(
                        out,
                        &api.grant(&json!({ "principal": user, "resource": resource, "actions": actions }))
                            .await?,
                        &[],
                    ),
                },
                Command::Serve { .. } | Command::Agent(_) => unreachable!("handled above"),
            }
        }
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                2
            } else {
                let _ = out.write_all(text.as_bytes());
                0
            };
        }
    };
    let format = cli.output.unwrap_or(if std::io::stdout().is_terminal() {
        Format::Table
    } else {
        Format::Json
    });
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    match runtime.block_on(execute(cli, format, out)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\n{}", Cli::command().render_usage());
            2
        }
        Err(Failure::Domain(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}
