//! Sandboxed subprocess execution of analysis scripts.

use std::io;
use std::path::Path;
use std::process::Stdio;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt};
use tokio::process::Command;
use tokio_util::sync::CancellationToken;

pub const TAIL_BYTES: usize = 2048;
/// The only search path visible to scripts.
pub const SANDBOX_PATH: &str = "/usr/local/bin:/usr/bin:/bin";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkIsolation {
    /// Refuse to run when a private network namespace cannot be created.
    #[default]
    Required,
    BestEffort,
    Disabled,
}

/// A named interpreter and the script extensions it runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub environment_id: String,
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub extensions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PacRunnerSpec {
    pub profiles: Vec<EnvironmentProfile>,
    pub cpu_seconds_limit: u64,
    pub memory_limit_bytes: u64,
    pub wall_clock_limit_seconds: u64,
    pub network_isolation: NetworkIsolation,
}

impl Default for PacRunnerSpec {
    fn default() -> Self {
        PacRunnerSpec {
            profiles: vec![
                EnvironmentProfile {
                    environment_id: "python3".into(),
                    program: "python3".into(),
                    args: vec!["-B".into()],
                    extensions: vec!["py".into()],
                },
                EnvironmentProfile {
                    environment_id: "posix-sh".into(),
                    program: "/bin/sh".into(),
                    args: vec![],
                    extensions: vec!["sh".into()],
                },
            ],
            cpu_seconds_limit: 60,
            memory_limit_bytes: 2 << 30,
            wall_clock_limit_seconds: 120,
            network_isolation: NetworkIsolation::Required,
        }
    }
}

impl PacRunnerSpec {
    pub fn profile_for(&self, script: &str) -> Option<&EnvironmentProfile> {
        let ext = Path::new(script).extension()?.to_str()?;
        self.profiles.iter().find(|p| p.extensions.iter().any(|e| e == ext))
    }

    /// Program and argument vector for `script`.
    pub fn entry_command(&self, script: &str) -> Option<(String, Vec<String>)> {
        let p = self.profile_for(script)?;
        let mut args = p.args.clone();
        args.push(script.to_string());
        Some((p.program.clone(), args))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("no environment profile runs `{0}`")]
    NoProfile(String),
    #[error("could not start sandbox: {0}")]
    Spawn(String),
    #[error("script exited with code {exit_code}")]
    ScriptError { exit_code: i32, stderr_tail: String },
    #[error("resource limit exceeded: {limit}")]
    ResourceLimitExceeded { limit: String, stderr_tail: String },
    #[error("terminated by cancel directive")]
    Terminated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub exit_code: i32,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub elapsed_ms: u64,
}

async fn read_tail<R: AsyncRead + Unpin>(mut reader: R) -> String {
    let mut tail: Vec<u8> = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match reader.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                tail.extend_from_slice(&buf[..n]);
                if tail.len() > 2 * TAIL_BYTES {
                    tail.drain(..tail.len() - TAIL_BYTES);
                }
            }
        }
    }
    if tail.len() > TAIL_BYTES {
        tail.drain(..tail.len() - TAIL_BYTES);
    }
    String::from_utf8_lossy(&tail).into_owned()
}

fn kill_group(pid: Option<u32>) {
    if let Some(pid) = pid {
        // The child leads its own session, so its pid names the group.
        unsafe {
            libc::killpg(pid as libc::pid_t, libc::SIGKILL);
        }
    }
}

fn set_limit(resource: libc::__rlimit_resource_t, soft: u64, hard: u64) -> io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: soft as libc::rlim_t,
        rlim_max: hard as libc::rlim_t,
    };
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

/// Runs `script` inside `workdir` with a cleared environment, its own
/// session, CPU and address-space limits, no network, and a wall clock.
pub async fn run_script(
    spec: &PacRunnerSpec,
    workdir: &Path,
    script: &str,
    env: &[(String, String)],
    cancel: &CancellationToken,
) -> Result<RunReport, RunError> {
    let (program, args) = spec
        .entry_command(script)
        .ok_or_else(|| RunError::NoProfile(script.to_string()))?;
    let mut cmd = Command::new(&program);
    cmd.args(&args)
        .current_dir(workdir)
        .env_clear()
        .env("PATH", SANDBOX_PATH)
        .env("HOME", workdir)
        .env("LANG", "C.UTF-8")
        .env("OPENBLAS_NUM_THREADS", "1")
        .envs(env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true);
    let cpu = spec.cpu_seconds_limit;
    let mem = spec.memory_limit_bytes;
    let isolation = spec.network_isolation;
    // SAFETY: only async-signal-safe libc calls run between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setsid() < 0 {
                return Err(io::Error::last_os_error());
            }
            set_limit(libc::RLIMIT_CPU, cpu, cpu + 1)?;
            set_limit(libc::RLIMIT_AS, mem, mem)?;
            set_limit(libc::RLIMIT_CORE, 0, 0)?;
            if isolation != NetworkIsolation::Disabled
                && libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) != 0
                && isolation == NetworkIsolation::Required
            {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        });
    }
    let started = Instant::now();
    let mut child = cmd
        .spawn()
        .map_err(|e| RunError::Spawn(format!("{program}: {e}")))?;
    let pid = child.id();
    let stdout = tokio::spawn(read_tail(child.stdout.take().expect("piped")));
    let stderr = tokio::spawn(read_tail(child.stderr.take().expect("piped")));
    let wall = Duration::from_secs(spec.wall_clock_limit_seconds);
    let status = tokio::select! {
        s = child.wait() => s.map_err(|e| RunError::Spawn(e.to_string()))?,
        _ = cancel.cancelled() => {
            kill_group(pid);
            let _ = child.wait().await;
            return Err(RunError::Terminated);
        }
        _ = tokio::time::sleep(wall) => {
            kill_group(pid);
            let _ = child.wait().await;
            return Err(RunError::ResourceLimitExceeded {
                limit: format!("wall clock limit of {}s", spec.wall_clock_limit_seconds),
                stderr_tail: stderr.await.unwrap_or_default(),
            });
        }
    };
    // Reap anything the script left behind in its group.
    kill_group(pid);
    let stdout_tail = stdout.await.unwrap_or_default();
    let stderr_tail = stderr.await.unwrap_or_default();
    use std::os::unix::process::ExitStatusExt;
    if let Some(sig) = status.signal() {
        if sig == libc::SIGXCPU || sig == libc::SIGKILL && started.elapsed().as_secs() >= cpu {
            return Err(RunError::ResourceLimitExceeded {
                limit: format!("cpu limit of {cpu}s"),
                stderr_tail,
            });
        }
        return Err(RunError::ScriptError {
            exit_code: 128 + sig,
            stderr_tail,
        });
    }
    let exit_code = status.code().unwrap_or(-1);
    if exit_code != 0 {
        if stderr_tail.contains("MemoryError") || stderr_tail.contains("Cannot allocate memory") {
            return Err(RunError::ResourceLimitExceeded {
                limit: format!("memory limit of {mem} bytes"),
                stderr_tail,
            });
        }
        return Err(RunError::ScriptError { exit_code, stderr_tail });
    }
    Ok(RunReport {
        exit_code,
        stdout_tail,
        stderr_tail,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}
