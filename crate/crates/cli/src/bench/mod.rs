//! Desk-scale versions of the four experiments.
//!
//! Every experiment runs its servers in-process over the loopback or UDP
//! transport with a ticking scripted clock and a fixed seed, so all counts
//! and sizes are reproducible. Only the `_us` metrics depend on the machine.

mod result;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hcap_core::catalog::{self, complete_perm, complete_perm_on};
use hcap_core::clock::ScriptedClock;
use hcap_core::policy::{Mode, PolicyTable};
use hcap_core::resource::{GcConfig, ResourceServer};
use hcap_core::sa::{FragmentStrategy, SecurityAutomaton};
use hcap_core::service::{Client, Deployment, UdpDeployment, AUTH_ADDR};
use hcap_core::ticket::{Capability, Ticket};
use hcap_core::transport::frame::{self, DEFAULT_MTU};
use hcap_core::transport::{Codec, Envelope, LoopbackNet, Transport, TransportError};
use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use serde_json::json;

pub use result::{BenchResult, Summary, Trial};

use crate::config::TransportKind;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BenchOptions {
    pub trials: usize,
    pub min_trials: usize,
    pub seed: u64,
    pub transport: TransportKind,
    pub mtu: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { trials: 30, min_trials: 30, seed: 1, transport: TransportKind::Loopback, mtu: DEFAULT_MTU }
    }
}

impl BenchOptions {
    fn rng(&self, parts: &[u64]) -> StdRng {
        let mut s = self.seed;
        for p in parts {
            s = s.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(*p);
        }
        StdRng::seed_from_u64(s)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.trials < self.min_trials {
            return Err(CliError::Config(format!("{} trials requested, at least {} required", self.trials, self.min_trials)));
        }
        Ok(())
    }
}

/// Counts client requests that reach the authorization server.
struct Counting {
    inner: Arc<dyn Transport>,
    auth: String,
    auth_calls: AtomicU64,
}

impl Transport for Counting {
    fn request(&self, peer: &str, env: Envelope) -> Result<Envelope, TransportError> {
        if peer == self.auth {
            self.auth_calls.fetch_add(1, Ordering::Relaxed);
        }
        self.inner.request(peer, env)
    }
}

enum Servers {
    Loopback(Deployment),
    Udp(UdpDeployment),
}

/// Servers plus a counting client transport.
pub struct Stack {
    servers: Servers,
    counter: Arc<Counting>,
}

impl Stack {
    pub fn new(
        kind: TransportKind,
        mode: Mode,
        policies: PolicyTable,
        rsids: &[&str],
        gc: GcConfig,
        mtu: usize,
    ) -> Result<Stack, CliError> {
        let clock = Arc::new(ScriptedClock::ticking(1));
        let (servers, inner, auth): (_, Arc<dyn Transport>, String) = match kind {
            TransportKind::Loopback => {
                let d = Deployment::new(mode, policies, rsids, gc, clock, LoopbackNet::with_mtu(mtu));
                let net = d.net.clone();
                (Servers::Loopback(d), net, AUTH_ADDR.into())
            }
            TransportKind::Udp => {
                let d = UdpDeployment::new(mode, policies, rsids, gc, clock, mtu)
                    .map_err(|e| CliError::Transport(e.to_string()))?;
                let (net, auth) = (d.net.clone(), d.auth_addr.clone());
                (Servers::Udp(d), net, auth)
            }
        };
        let counter = Arc::new(Counting { inner, auth, auth_calls: AtomicU64::new(0) });
        Ok(Stack { servers, counter })
    }

    pub fn client(&self, uid: &str) -> Client {
        let (addrs, codec) = match &self.servers {
            Servers::Loopback(d) => (d.servers.iter().map(|s| (s.rsid().to_owned(), s.rsid().to_owned())).collect(), d.codec),
            Servers::Udp(d) => (d.rs_addrs.clone(), d.codec),
        };
        Client::new(self.counter.clone(), uid, codec, self.counter.auth.clone(), addrs)
    }

    pub fn servers(&self) -> &[Arc<ResourceServer>] {
        match &self.servers {
            Servers::Loopback(d) => &d.servers,
            Servers::Udp(d) => &d.servers,
        }
    }

    /// Client requests to the authorization server so far.
    pub fn auth_round_trips(&self) -> u64 {
        self.counter.auth_calls.load(Ordering::Relaxed)
    }
}

fn table(uids: impl IntoIterator<Item = String>, m: &SecurityAutomaton, s: FragmentStrategy) -> PolicyTable {
    let mut t = PolicyTable::new();
    for uid in uids {
        t.insert(uid, m.clone(), s);
    }
    t
}

fn denied(what: &str, d: impl std::fmt::Display) -> CliError {
    CliError::Bench(format!("{what}: {d}"))
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

fn next_cap(ts: Vec<Ticket>, what: &str) -> Result<Capability, CliError> {
    match ts.into_iter().next() {
        Some(Ticket::Cap(c)) => Ok(c),
        other => Err(CliError::Bench(format!("{what}: expected a capability, got {other:?}"))),
    }
}

/// Minimal fragments over the two-state oscillator; `P`% of `requests`
/// use the transitioning permission and each update request is taken to
/// the authorization server before the next request.
pub fn exp1(p_values: &[u64], requests: usize, o: &BenchOptions) -> Result<BenchResult, CliError> {
    o.check()?;
    let config = json!({"p_values": p_values, "requests": requests, "automaton": "oscillator", "strategy": "minimal", "options": o});
    let mut r = BenchResult::new("exp1", config, &["requests", "transitioning", "as_round_trips", "latency_us"], &["latency_us"], o.min_trials);
    let m = catalog::oscillator();
    let (p0, p1) = (complete_perm(0), complete_perm(1));
    for &p in p_values {
        if p > 100 {
            return Err(CliError::Config(format!("P = {p} is not a percentage")));
        }
        let stack = Stack::new(o.transport, Mode::Core, table(["alice".into()], &m, FragmentStrategy::Minimal), &["rs"], GcConfig::default(), o.mtu)?;
        let client = stack.client("alice");
        let k = (p as usize * requests + 50) / 100;
        for trial in 0..o.trials {
            let mut rng = o.rng(&[1, p, trial as u64]);
            let mut trans = vec![false; requests];
            for i in sample(&mut rng, requests, k) {
                trans[i] = true;
            }
            let mut cap = client.init().map_err(|d| denied("init", d))?;
            let before = stack.auth_round_trips();
            let start = Instant::now();
            for &t in &trans {
                let perm = if t { &p1 } else { &p0 };
                let ts = client.access(perm, &cap).map_err(|d| denied("access", d))?;
                if let Some(Ticket::Upd(u)) = ts.first() {
                    cap = client.update(u).map_err(|d| denied("update", d))?;
                }
            }
            let per = micros(start.elapsed()) / requests.max(1) as f64;
            let trips = stack.auth_round_trips() - before;
            r.push("minimal", p, trial, vec![requests as f64, k as f64, trips as f64, per]);
        }
    }
    r.check_trials()?;
    Ok(r)
}

/// Full fragments of `M_n`: encoded sizes, chunks per access request at
/// the MTU, and mean latency of random requests.
pub fn exp2(n_values: &[u64], requests: usize, o: &BenchOptions) -> Result<BenchResult, CliError> {
    o.check()?;
    let config = json!({"n_values": n_values, "requests": requests, "strategy": "full", "options": o});
    let metrics = ["cap_json_bytes", "cap_cbor_bytes", "request_bytes", "chunks", "latency_us"];
    let mut r = BenchResult::new("exp2", config, &metrics, &["latency_us"], o.min_trials);
    for &n in n_values {
        if n == 0 {
            return Err(CliError::Config("n must be positive".into()));
        }
        let m = catalog::complete(n as usize);
        let stack = Stack::new(o.transport, Mode::Core, table(["alice".into()], &m, FragmentStrategy::Full), &["rs"], GcConfig::default(), o.mtu)?;
        let client = stack.client("alice");
        for trial in 0..o.trials {
            let mut rng = o.rng(&[2, n, trial as u64]);
            let mut cap = client.init().map_err(|d| denied("init", d))?;
            let ticket = Ticket::Cap(cap.clone());
            let env = client.access_envelope(&complete_perm(0), &cap);
            let bytes = frame::payload_len(&env);
            let sizes = [ticket.encode_json().len(), ticket.encode_cbor().len(), bytes, frame::chunk_count(bytes, o.mtu)];
            let start = Instant::now();
            for _ in 0..requests {
                let p = complete_perm(rng.gen_range(0..n as usize));
                let ts = client.access(&p, &cap).map_err(|d| denied("access", d))?;
                if !ts.is_empty() {
                    cap = next_cap(ts, "access")?;
                }
            }
            let per = micros(start.elapsed()) / requests.max(1) as f64;
            let mut values: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
            values.push(per);
            r.push("full", n, trial, values);
        }
    }
    r.check_trials()?;
    Ok(r)
}

/// `sessions` clients over `M_12` with full fragments issue `R`
/// transitioning requests in total, then one collection flushes all
/// exceptions.
pub fn exp3(r_values: &[u64], sessions: usize, compression: &[bool], o: &BenchOptions) -> Result<BenchResult, CliError> {
    o.check()?;
    if sessions == 0 {
        return Err(CliError::Config("at least one session".into()));
    }
    let config = json!({"r_values": r_values, "sessions": sessions, "automaton": "M_12", "compression": compression, "options": o});
    let metrics = ["requests", "gc_entries", "max_session_entries", "gc_payload_bytes", "gc_us", "gc_us_per_request"];
    let mut r = BenchResult::new("exp3", config, &metrics, &["gc_us", "gc_us_per_request"], o.min_trials);
    let m = catalog::complete(12);
    let uids: Vec<String> = (0..sessions).map(|i| format!("c{i}")).collect();
    for &bc in compression {
        let variant = if bc { "bc" } else { "no_bc" };
        for &total in r_values {
            for trial in 0..o.trials {
                let mut rng = o.rng(&[3, bc as u64, total, trial as u64]);
                let gc = GcConfig { baton_compression: bc, ..GcConfig::default() };
                let stack = Stack::new(o.transport, Mode::Core, table(uids.clone(), &m, FragmentStrategy::Full), &["rs"], gc, o.mtu)?;
                let clients: Vec<Client> = uids.iter().map(|u| stack.client(u)).collect();
                let mut caps = Vec::with_capacity(sessions);
                let mut at = vec![0usize; sessions];
                for c in &clients {
                    caps.push(c.init().map_err(|d| denied("init", d))?);
                }
                for k in 0..total as usize {
                    let s = k % sessions;
                    let j = (at[s] + rng.gen_range(1..12)) % 12;
                    let ts = clients[s].access(&complete_perm(j), &caps[s]).map_err(|d| denied("access", d))?;
                    caps[s] = next_cap(ts, "transitioning access")?;
                    at[s] = j;
                }
                let rs = &stack.servers()[0];
                let start = Instant::now();
                let payload = rs.run_gc().map_err(|d| denied("gc", d))?;
                let took = micros(start.elapsed());
                let longest = payload.sessions.values().map(|e| e.exc.len()).max().unwrap_or(0);
                let bytes = Codec::Json.encode(&payload).len();
                let per = if total > 0 { took / total as f64 } else { 0.0 };
                let values = vec![total as f64, payload.total_entries() as f64, longest as f64, bytes as f64, took, per];
                r.push(variant, total, trial, values);
            }
        }
    }
    r.check_trials()?;
    Ok(r)
}

/// Collection and compression settings compared in the baton experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exp4Config {
    NoGcBc,
    /// Collect on both servers after this many transitioning requests.
    Gc(u64),
    Bc,
}

impl Exp4Config {
    pub fn name(&self) -> String {
        match self {
            Exp4Config::NoGcBc => "no_gc_bc".into(),
            Exp4Config::Gc(n) => format!("gc{n}"),
            Exp4Config::Bc => "bc".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Exp4Config, CliError> {
        match s {
            "no_gc_bc" => Ok(Exp4Config::NoGcBc),
            "bc" => Ok(Exp4Config::Bc),
            _ => s
                .strip_prefix("gc")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n > 0)
                .map(Exp4Config::Gc)
                .ok_or_else(|| CliError::Config(format!("unknown configuration {s:?}"))),
        }
    }

    pub const STANDARD: [Exp4Config; 4] = [Exp4Config::NoGcBc, Exp4Config::Gc(400), Exp4Config::Gc(100), Exp4Config::Bc];
}

/// Two servers over `M_2` with `q0` validated by `rs0` and `q1` by `rs1`;
/// `P`% of `requests` are transitioning and so move the baton.
pub fn exp4(p_values: &[u64], requests: usize, configs: &[Exp4Config], o: &BenchOptions) -> Result<BenchResult, CliError> {
    o.check()?;
    let names: Vec<String> = configs.iter().map(Exp4Config::name).collect();
    let config = json!({"p_values": p_values, "requests": requests, "automaton": "M_2 over rs0, rs1", "configs": names, "options": o});
    let metrics = ["transitioning", "baton_passes", "max_baton_entries", "mean_baton_entries", "gc_runs", "latency_us"];
    let mut r = BenchResult::new("exp4", config, &metrics, &["latency_us"], o.min_trials);
    let m = catalog::complete_on(2, 2);
    for cfg in configs {
        for &p in p_values {
            if p > 100 {
                return Err(CliError::Config(format!("P = {p} is not a percentage")));
            }
            let k = (p as usize * requests + 50) / 100;
            for trial in 0..o.trials {
                let mut rng = o.rng(&[4, p, trial as u64]);
                let mut trans = vec![false; requests];
                for i in sample(&mut rng, requests, k) {
                    trans[i] = true;
                }
                let gc = GcConfig { baton_compression: *cfg == Exp4Config::Bc, ..GcConfig::default() };
                let stack = Stack::new(o.transport, Mode::Multi, table(["alice".into()], &m, FragmentStrategy::Full), &["rs0", "rs1"], gc, o.mtu)?;
                let client = stack.client("alice");
                let mut cap = client.init().map_err(|d| denied("init", d))?;
                let (mut state, mut since_gc, mut gc_runs) = (0usize, 0u64, 0u64);
                let start = Instant::now();
                for &t in &trans {
                    let j = if t { 1 - state } else { state };
                    let ts = client.access(&complete_perm_on(j, 2), &cap).map_err(|d| denied("access", d))?;
                    if t {
                        cap = next_cap(ts, "transitioning access")?;
                        state = j;
                        since_gc += 1;
                        if let Exp4Config::Gc(every) = cfg {
                            if since_gc == *every {
                                for rs in stack.servers() {
                                    rs.run_gc().map_err(|d| denied("gc", d))?;
                                }
                                since_gc = 0;
                                gc_runs += 1;
                            }
                        }
                    }
                }
                let per = micros(start.elapsed()) / requests.max(1) as f64;
                let sent: Vec<usize> = stack.servers().iter().flat_map(|s| s.stats().batons_sent).collect();
                let max = sent.iter().copied().max().unwrap_or(0);
                let mean = if sent.is_empty() { 0.0 } else { sent.iter().sum::<usize>() as f64 / sent.len() as f64 };
                let values = vec![k as f64, sent.len() as f64, max as f64, mean, gc_runs as f64, per];
                r.push(&cfg.name(), p, trial, values);
            }
        }
    }
    r.check_trials()?;
    Ok(r)
}
