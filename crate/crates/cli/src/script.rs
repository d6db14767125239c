//! Replayable command lists.
//!
//! One command per line; `#` starts a comment.
//!
//! ```text
//! deploy
//! submit 100 1600      # tasks, cost each
//! threads 20 3200      # remote threads, cost each
//! run 60000            # advance virtual ms
//! wait                 # until the client has every result
//! scale 10
//! kill 2               # stop the first two running workers silently
//! silence 1
//! suspend
//! resume
//! status
//! accounting
//! delete
//! ```

use crate::report::{accounting_table, status_table};
use paas_core::experiments::Table;
use paas_core::models::TaskSpec;
use paas_core::provisioning::DeploymentState;
use paas_core::sim::{Cloud, ScenarioSpec, SimError};
use paas_core::worker::workload::{spin_params, SPIN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Deploy,
    Submit { units: u32, cost: u64 },
    Threads { count: u32, cost: u64 },
    Run { ms: u64 },
    Wait,
    Scale { count: u32 },
    Kill { count: usize },
    Silence { count: usize },
    Suspend,
    Resume,
    Status,
    Accounting,
    Delete,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Sim { line: usize, source: SimError },
}

/// A table emitted by `status` or `accounting`, tagged with its line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptOutput {
    pub line: usize,
    pub name: &'static str,
    pub at: u64,
    pub table: Table,
}

pub fn parse_script(text: &str) -> Result<Vec<(usize, Command)>, ScriptError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let words: Vec<&str> = body.split_whitespace().collect();
        let bad = |message: String| ScriptError::Syntax { line, message };
        let num = |idx: usize| -> Result<u64, ScriptError> {
            let w = words.get(idx).ok_or_else(|| bad(format!("{} needs {} argument(s)", words[0], idx)))?;
            w.parse::<u64>().map_err(|_| bad(format!("{w:?} is not a number")))
        };
        let arity = |n: usize| -> Result<(), ScriptError> {
            if words.len() != n + 1 {
                return Err(bad(format!("{} takes {n} argument(s)", words[0])));
            }
            Ok(())
        };
        let cmd = match words[0] {
            "deploy" => arity(0).map(|_| Command::Deploy),
            "submit" => arity(2).and_then(|_| Ok(Command::Submit { units: num(1)? as u32, cost: num(2)? })),
            "threads" => arity(2).and_then(|_| Ok(Command::Threads { count: num(1)? as u32, cost: num(2)? })),
            "run" => arity(1).and_then(|_| Ok(Command::Run { ms: num(1)? })),
            "wait" => arity(0).map(|_| Command::Wait),
            "scale" => arity(1).and_then(|_| Ok(Command::Scale { count: num(1)? as u32 })),
            "kill" => arity(1).and_then(|_| Ok(Command::Kill { count: num(1)? as usize })),
            "silence" => arity(1).and_then(|_| Ok(Command::Silence { count: num(1)? as usize })),
            "suspend" => arity(0).map(|_| Command::Suspend),
            "resume" => arity(0).map(|_| Command::Resume),
            "status" => arity(0).map(|_| Command::Status),
            "accounting" => arity(0).map(|_| Command::Accounting),
            "delete" => arity(0).map(|_| Command::Delete),
            other => Err(bad(format!("unknown command {other:?}"))),
        }?;
        out.push((line, cmd));
    }
    Ok(out)
}

/// Runs `commands` against a fresh cloud built from `spec`.
pub fn run_script(spec: ScenarioSpec, commands: &[(usize, Command)]) -> Result<(Cloud, Vec<ScriptOutput>), ScriptError> {
    let mut c = Cloud::new(spec).map_err(|source| ScriptError::Sim { line: 0, source })?;
    let mut outputs = Vec::new();
    for (line, cmd) in commands {
        let line = *line;
        let sim = |source: SimError| ScriptError::Sim { line, source };
        match cmd {
            Command::Deploy => {
                c.deploy().map_err(sim)?;
            }
            Command::Submit { units, cost } => {
                let mut app = c.new_task_app();
                for _ in 0..*units {
                    app.add_task(TaskSpec::new(SPIN, spin_params(*cost), *cost)).map_err(|e| sim(e.into()))?;
                }
                c.submit_tasks(app).map_err(sim)?;
            }
            Command::Threads { count, cost } => {
                let ids: Vec<_> = (0..*count).map(|_| c.create_thread(SPIN, spin_params(*cost), *cost)).collect();
                c.start_threads(&ids).map_err(sim)?;
            }
            Command::Run { ms } => c.run_until_time(c.now() + ms).map_err(sim)?,
            Command::Wait => {
                c.run_until_client_idle().map_err(sim)?;
            }
            Command::Scale { count } => c.scale(*count).map_err(sim)?,
            Command::Kill { count } => {
                for n in c.running_workers().into_iter().take(*count) {
                    c.kill_worker(n).map_err(sim)?;
                }
            }
            Command::Silence { count } => {
                for n in c.running_workers().into_iter().take(*count) {
                    c.silence_worker(n).map_err(sim)?;
                }
            }
            Command::Suspend => c.suspend().map_err(sim)?,
            Command::Resume => c.resume().map_err(sim)?,
            Command::Status => {
                outputs.push(ScriptOutput { line, name: "status", at: c.now(), table: status_table(&c.status()) });
            }
            Command::Accounting => {
                let report = c.master().accounting_report(c.now());
                outputs.push(ScriptOutput { line, name: "accounting", at: c.now(), table: accounting_table(&report) });
            }
            Command::Delete => {
                c.delete().map_err(sim)?;
                c.run_until(|c| c.pool().state() == DeploymentState::Deleted).map_err(sim)?;
            }
        }
    }
    Ok((c, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use paas_core::sim::DeploymentMode;

    #[test]
    fn parses_with_comments() {
        let s = parse_script("# hi\ndeploy\n\nsubmit 10 1600 # ten\nstatus\n").unwrap();
        assert_eq!(s, vec![(2, Command::Deploy), (4, Command::Submit { units: 10, cost: 1600 }), (5, Command::Status)]);
    }

    #[test]
    fn reports_bad_lines() {
        assert!(matches!(parse_script("deploy\nfly 3"), Err(ScriptError::Syntax { line: 2, .. })));
        assert!(matches!(parse_script("scale x"), Err(ScriptError::Syntax { line: 1, .. })));
        assert!(matches!(parse_script("submit 1"), Err(ScriptError::Syntax { line: 1, .. })));
    }

    #[test]
    fn runs_end_to_end() {
        let cmds = parse_script("deploy\nsubmit 6 1600\nwait\nstatus\ndelete\naccounting").unwrap();
        let (c, out) = run_script(ScenarioSpec::new(DeploymentMode::CloudDeployment, 2, 1), &cmds).unwrap();
        assert_eq!(c.pool().state(), DeploymentState::Deleted);
        assert_eq!(out.len(), 2);
        let executed: u64 = out[0].table.rows.iter().map(|r| r[5].parse::<u64>().unwrap()).sum();
        assert_eq!(executed, 6);
    }
}
