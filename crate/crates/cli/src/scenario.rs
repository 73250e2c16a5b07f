//! Scripted client sessions with expected outcomes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use hcap_core::clock::{Clock, MonotoneClock, ScriptedClock};
use hcap_core::denial::Denial;
use hcap_core::policy::{Mode, PolicyEntry, PolicyTable};
use hcap_core::resource::GcConfig;
use hcap_core::sa::Permission;
use hcap_core::service::{Client, Deployment};
use hcap_core::ticket::Ticket;
use hcap_core::transport::frame::DEFAULT_MTU;
use hcap_core::transport::{Codec, LoopbackNet, UdpTransport};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Scripted,
    Live,
}

/// Addresses of already running servers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Remote {
    pub auth: String,
    /// Resource-server id to address.
    pub servers: BTreeMap<String, String>,
    #[serde(default = "default_mtu")]
    pub mtu: usize,
}

fn default_mtu() -> usize {
    DEFAULT_MTU
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    pub uid: String,
    /// Policies for the embedded servers; ignored with `remote`.
    #[serde(default)]
    pub policy: Vec<PolicyEntry>,
    /// Policy file whose entries are added to `policy` on load. Relative
    /// paths are taken from the scenario file's directory.
    #[serde(default)]
    pub policy_path: Option<PathBuf>,
    /// Resource-server ids for the embedded servers.
    #[serde(default = "default_servers")]
    pub servers: Vec<String>,
    #[serde(default)]
    pub baton_compression: bool,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default)]
    pub remote: Option<Remote>,
    pub steps: Vec<Step>,
}

fn default_servers() -> Vec<String> {
    vec!["rs".into()]
}

/// One client action. Actions that produce a ticket store it under `save`;
/// `id` names the action for later `expect` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Init {
        id: Option<String>,
        save: String,
    },
    Access {
        id: Option<String>,
        perm: Permission,
        cap: String,
        save: Option<String>,
    },
    SubmitUpdate {
        id: Option<String>,
        ticket: String,
        save: String,
    },
    Recover {
        id: Option<String>,
        cap: String,
        save: Option<String>,
    },
    Reissue {
        id: Option<String>,
        /// Any ticket of the session.
        of: String,
        save: String,
    },
    /// Runs garbage collection on an embedded resource server.
    Gc {
        id: Option<String>,
        server: Option<String>,
    },
    Expect {
        of: String,
        outcome: String,
    },
}

impl Step {
    fn id(&self) -> Option<&str> {
        match self {
            Step::Init { id, .. }
            | Step::Access { id, .. }
            | Step::SubmitUpdate { id, .. }
            | Step::Recover { id, .. }
            | Step::Reissue { id, .. }
            | Step::Gc { id, .. } => id.as_deref(),
            Step::Expect { .. } => None,
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))?;
        let mut s: Scenario =
            serde_json::from_str(&text).map_err(|e| CliError::Parse(path.display().to_string(), e.to_string()))?;
        if let Some(p) = s.policy_path.take() {
            let p = match path.parent() {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            };
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::Io(p.clone(), e))?;
            let file: PolicyFile =
                serde_json::from_str(&text).map_err(|e| CliError::Parse(p.display().to_string(), e.to_string()))?;
            s.policy.extend(file.entries);
        }
        s.validate()?;
        Ok(s)
    }

    /// Every `expect` must name an earlier action; ids are unique.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut seen = HashSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            if let Some(id) = step.id() {
                if !seen.insert(id) {
                    return Err(CliError::Script(format!("step {i}: duplicate id {id:?}")));
                }
            }
            if let Step::Expect { of, .. } = step {
                if !seen.contains(of.as_str()) {
                    return Err(CliError::Script(format!("step {i}: expect refers to {of:?}, which is not an earlier action")));
                }
            }
        }
        if self.remote.is_none() && self.policy.is_empty() {
            return Err(CliError::Script("embedded servers need a policy".into()));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct PolicyFile {
    entries: Vec<PolicyEntry>,
}

/// What an action did, as matched by `expect` entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Granted(&'static str),
    Denied(String),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Ok => f.write_str("ok"),
            Outcome::Granted(kind) => write!(f, "granted:{kind}"),
            Outcome::Denied(code) => write!(f, "denied:{code}"),
        }
    }
}

impl Outcome {
    fn denied(d: &Denial) -> Outcome {
        Outcome::Denied(d.code.to_string())
    }

    /// `granted` matches `granted:cap`; `denied` matches any denial.
    pub fn matches(&self, want: &str) -> bool {
        let got = self.to_string();
        got == want || got.strip_prefix(want).is_some_and(|rest| rest.starts_with(':'))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepLog {
    pub index: usize,
    pub line: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpectFailure {
    pub index: usize,
    pub of: String,
    pub wanted: String,
    pub got: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Report {
    pub log: Vec<StepLog>,
    pub failures: Vec<ExpectFailure>,
    pub expectations: usize,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn diff(&self) -> String {
        self.failures
            .iter()
            .map(|f| format!("step {} expect {}:\n-  {}\n+  {}\n", f.index, f.of, f.wanted, f.got))
            .collect()
    }
}

enum Servers {
    Embedded(Deployment),
    Remote,
}

fn ticket_kind(t: &Ticket) -> &'static str {
    match t {
        Ticket::Cap(_) => "cap",
        Ticket::Upd(_) => "update",
    }
}

/// Runs the scenario against embedded servers over the loopback transport,
/// or against the `remote` servers over UDP.
pub fn run(s: &Scenario) -> Result<Report, CliError> {
    s.validate()?;
    let (servers, client) = match &s.remote {
        Some(r) => {
            let net = Arc::new(UdpTransport::new(r.mtu, Duration::from_secs(5)));
            let addrs: HashMap<_, _> = r.servers.clone().into_iter().collect();
            (Servers::Remote, Client::new(net, s.uid.clone(), Codec::Json, r.auth.clone(), addrs))
        }
        None => {
            let table = PolicyTable::from_entries(s.policy.clone(), s.mode)
                .map_err(|e| CliError::Script(format!("policy: {e}")))?;
            let clock: Arc<dyn Clock> = match s.clock {
                ClockMode::Scripted => Arc::new(ScriptedClock::ticking(1)),
                ClockMode::Live => Arc::new(MonotoneClock::default()),
            };
            let rsids: Vec<&str> = s.servers.iter().map(String::as_str).collect();
            if s.mode == Mode::Core && rsids.len() != 1 {
                return Err(CliError::Script("core mode takes exactly one resource server".into()));
            }
            let gc = GcConfig { baton_compression: s.baton_compression, ..GcConfig::default() };
            let d = Deployment::new(s.mode, table, &rsids, gc, clock, LoopbackNet::new());
            let c = d.client(&s.uid);
            (Servers::Embedded(d), c)
        }
    };

    let mut vars: HashMap<String, Ticket> = HashMap::new();
    let mut outcomes: HashMap<String, Outcome> = HashMap::new();
    let mut report = Report::default();
    let get = |vars: &HashMap<String, Ticket>, name: &str, i: usize| {
        vars.get(name).cloned().ok_or_else(|| CliError::Script(format!("step {i}: no ticket saved as {name:?}")))
    };
    for (i, step) in s.steps.iter().enumerate() {
        let (outcome, what) = match step {
            Step::Init { save, .. } => match client.init() {
                Ok(c) => {
                    vars.insert(save.clone(), Ticket::Cap(c));
                    (Outcome::Ok, format!("init -> {save}"))
                }
                Err(d) => (Outcome::denied(&d), "init".into()),
            },
            Step::Access { perm, cap, save, .. } => {
                let t = get(&vars, cap, i)?;
                let c = t.as_cap().ok_or_else(|| CliError::Script(format!("step {i}: {cap} is not a capability")))?;
                let o = match client.access(perm, c) {
                    Ok(ts) => match (ts.into_iter().next(), save) {
                        (Some(t), Some(name)) => {
                            let kind = ticket_kind(&t);
                            vars.insert(name.clone(), t);
                            Outcome::Granted(kind)
                        }
                        (Some(t), None) => Outcome::Granted(ticket_kind(&t)),
                        (None, _) => Outcome::Granted("none"),
                    },
                    Err(d) => Outcome::denied(&d),
                };
                (o, format!("access {perm} with {cap}"))
            }
            Step::SubmitUpdate { ticket, save, .. } => {
                let t = get(&vars, ticket, i)?;
                let u = t.as_upd().ok_or_else(|| CliError::Script(format!("step {i}: {ticket} is not an update request")))?;
                let o = match client.update(u) {
                    Ok(c) => {
                        vars.insert(save.clone(), Ticket::Cap(c));
                        Outcome::Ok
                    }
                    Err(d) => Outcome::denied(&d),
                };
                (o, format!("submit_update {ticket} -> {save}"))
            }
            Step::Recover { cap, save, .. } => {
                let t = get(&vars, cap, i)?;
                let c = t.as_cap().ok_or_else(|| CliError::Script(format!("step {i}: {cap} is not a capability")))?;
                let o = match client.recover(c) {
                    Ok(t) => {
                        let kind = ticket_kind(&t);
                        if let Some(name) = save {
                            vars.insert(name.clone(), t);
                        }
                        Outcome::Granted(kind)
                    }
                    Err(d) => Outcome::denied(&d),
                };
                (o, format!("recover {cap}"))
            }
            Step::Reissue { of, save, .. } => {
                let sessid = match get(&vars, of, i)? {
                    Ticket::Cap(c) => c.sessid,
                    Ticket::Upd(u) => u.sessid,
                };
                let o = match client.reissue(&sessid) {
                    Ok(c) => {
                        vars.insert(save.clone(), Ticket::Cap(c));
                        Outcome::Ok
                    }
                    Err(d) => Outcome::denied(&d),
                };
                (o, format!("reissue {of} -> {save}"))
            }
            Step::Gc { server, .. } => {
                let Servers::Embedded(d) = &servers else {
                    return Err(CliError::Script(format!("step {i}: gc needs embedded servers")));
                };
                let targets: Vec<_> = match server {
                    Some(r) => vec![d.servers.iter().find(|s| s.rsid() == r).ok_or_else(|| {
                        CliError::Script(format!("step {i}: no resource server {r:?}"))
                    })?],
                    None => d.servers.iter().collect(),
                };
                let mut o = Outcome::Ok;
                for rs in targets {
                    if let Err(d) = rs.run_gc() {
                        o = Outcome::denied(&d);
                    }
                }
                (o, "gc".into())
            }
            Step::Expect { of, outcome } => {
                report.expectations += 1;
                let got = &outcomes[of];
                let ok = got.matches(outcome);
                if !ok {
                    report.failures.push(ExpectFailure {
                        index: i,
                        of: of.clone(),
                        wanted: outcome.clone(),
                        got: got.to_string(),
                    });
                }
                let mark = if ok { "ok" } else { "MISMATCH" };
                report.log.push(StepLog { index: i, line: format!("expect {of} {outcome}: {mark}") });
                continue;
            }
        };
        report.log.push(StepLog { index: i, line: format!("{what}: {outcome}") });
        if let Some(id) = step.id() {
            outcomes.insert(id.to_owned(), outcome);
        }
    }
    Ok(report)
}
