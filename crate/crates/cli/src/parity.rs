//! Which `/v1` endpoints each subcommand calls. Kept next to the command
//! definitions so the parity test can compare both against the route table.

use clap::CommandFactory;

use crate::Cli;

pub struct CommandEndpoints {
    pub command: &'static str,
    pub endpoints: &'static [(&'static str, &'static str)],
}

const fn c(command: &'static str, endpoints: &'static [(&'static str, &'static str)]) -> CommandEndpoints {
    CommandEndpoints { command, endpoints }
}

pub const COMMAND_ENDPOINTS: &[CommandEndpoints] = &[
    c("usecase create", &[("POST", "/v1/usecases")]),
    c("repo ls", &[("GET", "/v1/repo")]),
    c("repo put", &[("PUT", "/v1/repo/files")]),
    c("repo get", &[("GET", "/v1/repo/files")]),
    c("repo dup", &[("POST", "/v1/repo/duplicate")]),
    c("repo mkver", &[("POST", "/v1/repo/versions")]),
    c("repo enable", &[("POST", "/v1/repo/enabled")]),
    c("config validate", &[("POST", "/v1/config/validate")]),
    c("task submit", &[("POST", "/v1/tasks")]),
    c("task ls", &[("GET", "/v1/tasks")]),
    c("task show", &[("GET", "/v1/tasks/{id}")]),
    c(
        "task logs",
        &[("GET", "/v1/tasks/{id}/logs"), ("GET", "/v1/tasks/{id}/logs/stream")],
    ),
    c("task cancel", &[("POST", "/v1/tasks/{id}/cancel")]),
    c("task rerun", &[("POST", "/v1/tasks/{id}/rerun")]),
    c("task result", &[("GET", "/v1/tasks/{id}/result")]),
    c("result profile", &[("GET", "/v1/results/{ref}/profile")]),
    c("result corr", &[("GET", "/v1/results/{ref}/correlations")]),
    c("result recommend", &[("GET", "/v1/results/{ref}/recommendations")]),
    c("result transform", &[("POST", "/v1/results/{ref}/transform")]),
    c("result artifact", &[("GET", "/v1/results/{ref}/artifacts/{*name}")]),
    c("result saved-profile", &[("GET", "/v1/profiles/{name}")]),
    c("key issue", &[("POST", "/v1/keys")]),
    c("principal add", &[("POST", "/v1/principals")]),
    c("principal grant", &[("POST", "/v1/permissions")]),
    // Launchers talk to no endpoint; they host them.
    c("agent serve", &[]),
    c("serve", &[]),
];

/// Every leaf subcommand, as space-separated words.
pub fn leaf_commands() -> Vec<String> {
    fn walk(cmd: &clap::Command, prefix: &str, out: &mut Vec<String>) {
        let subs: Vec<&clap::Command> = cmd.get_subcommands().filter(|s| s.get_name() != "help").collect();
        if subs.is_empty() {
            out.push(prefix.trim().to_string());
        }
        for s in subs {
            walk(s, &format!("{prefix} {}", s.get_name()), out);
        }
    }
    let mut out = Vec::new();
    walk(&Cli::command(), "", &mut out);
    out
}
