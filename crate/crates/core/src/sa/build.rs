use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Defs, Name, NameDef, SAFragment, SaError, SecurityAutomaton, StateId, Target};

/// How much of the automaton a capability's fragment describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FragmentStrategy {
    /// Every state and transition.
    Full,
    /// Only the current state; every transition target is unknown.
    Minimal,
    /// States within `k ≥ 1` transitions; edges leaving that region are unknown.
    Radius(u32),
}

impl Default for FragmentStrategy {
    fn default() -> Self {
        FragmentStrategy::Radius(1)
    }
}

impl fmt::Display for FragmentStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FragmentStrategy::Full => f.write_str("full"),
            FragmentStrategy::Minimal => f.write_str("minimal"),
            FragmentStrategy::Radius(k) => write!(f, "radius:{k}"),
        }
    }
}

impl FromStr for FragmentStrategy {
    type Err = SaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(FragmentStrategy::Full),
            "minimal" => Ok(FragmentStrategy::Minimal),
            _ => s
                .strip_prefix("radius:")
                .and_then(|k| k.parse().ok())
                .filter(|k| *k >= 1)
                .map(FragmentStrategy::Radius)
                .ok_or_else(|| SaError::InvalidStrategy(s.to_owned())),
        }
    }
}

/// Fragment name for an automaton state.
pub fn state_name(q: &StateId) -> Name {
    Name(format!("n_{q}"))
}

/// Builds a fragment safe for `m` in `q`.
///
/// # Panics
/// If `q` is not a state of `m`.
pub fn build_fragment(m: &SecurityAutomaton, q: &StateId, strategy: FragmentStrategy) -> SAFragment {
    assert!(m.states().contains(q), "build_fragment: {q} is not a state");
    let region: BTreeMap<&StateId, u32> = match strategy {
        FragmentStrategy::Full => m.states().iter().map(|s| (s, 0)).collect(),
        FragmentStrategy::Minimal => [(q, 0)].into_iter().collect(),
        FragmentStrategy::Radius(k) => within(m, q, k.max(1)),
    };
    let named = |s: &StateId| match strategy {
        FragmentStrategy::Minimal => false,
        _ => region.contains_key(s),
    };
    let defs: Defs = region
        .keys()
        .map(|s| {
            let mut def = NameDef::default();
            for (p, t) in m.row(s) {
                if t == *s {
                    def.stationary.insert(p.clone());
                } else {
                    let target = if named(t) { Target::Name(state_name(t)) } else { Target::Unknown };
                    def.trans.insert(p.clone(), target);
                }
            }
            (state_name(s), def)
        })
        .collect();
    SAFragment::new(defs, state_name(q)).expect("built fragment satisfies fragment invariants")
}

fn within<'a>(m: &'a SecurityAutomaton, q: &'a StateId, k: u32) -> BTreeMap<&'a StateId, u32> {
    let mut dist = BTreeMap::new();
    dist.insert(q, 0);
    let mut queue = VecDeque::from([q]);
    while let Some(s) = queue.pop_front() {
        let d = dist[s];
        if d == k {
            continue;
        }
        for (_, t) in m.row(s) {
            if !dist.contains_key(t) {
                dist.insert(t, d + 1);
                queue.push_back(t);
            }
        }
    }
    dist
}
