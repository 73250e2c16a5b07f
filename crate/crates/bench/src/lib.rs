//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use hcap_core::catalog;
use hcap_core::clock::ScriptedClock;
use hcap_core::policy::{Mode, PolicyTable};
use hcap_core::resource::GcConfig;
use hcap_core::sa::{build_fragment, FragmentStrategy, SecurityAutomaton, Timestamp};
use hcap_core::service::Deployment;
use hcap_core::ticket::{Capability, SharedKey};
use hcap_core::transport::LoopbackNet;

pub fn key() -> SharedKey {
    SharedKey::new("rs", [7; 32])
}

/// A capability carrying the full fragment of the complete automaton on `n` states.
pub fn full_capability(n: usize) -> (SecurityAutomaton, Capability) {
    let m = catalog::complete(n);
    let frag = build_fragment(&m, m.initial(), FragmentStrategy::Full);
    (m, Capability::sign(&key(), "alice", None, "s1", Timestamp(1), frag))
}

/// One user with `m` under `strategy` behind an in-process core deployment.
pub fn deployment(m: SecurityAutomaton, strategy: FragmentStrategy) -> Deployment {
    let mut t = PolicyTable::new();
    t.insert("alice", m, strategy);
    Deployment::new(Mode::Core, t, &["rs"], GcConfig::default(), Arc::new(ScriptedClock::ticking(1)), LoopbackNet::new())
}
