//! Static policy table: which automaton governs each user, and how its
//! fragments are built.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sa::{build_fragment, FragmentStrategy, Permission, SAFragment, SecurityAutomaton, StateId};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("reading policy: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing policy: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate policy entry for {0}")]
    DuplicateUid(String),
    #[error("policy for {uid}: transitions into {state} come from more than one resource server")]
    SplitState { uid: String, state: StateId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Core,
    Multi,
}

/// The resource server that mediates `p`: its URI authority.
pub fn rs_of(p: &Permission) -> &str {
    p.authority()
}

/// True iff every state is entered only through permissions of one server.
pub fn validate_eq1(m: &SecurityAutomaton) -> bool {
    split_state(m).is_none()
}

fn split_state(m: &SecurityAutomaton) -> Option<StateId> {
    let mut entering: HashMap<&StateId, &str> = HashMap::new();
    for (_, p, to) in m.transitions() {
        match entering.insert(to, rs_of(p)) {
            Some(prev) if prev != rs_of(p) => return Some(to.clone()),
            _ => {}
        }
    }
    None
}

/// The server that validates capabilities asserting state `q`.
///
/// This is the server of the permissions entering `q` when there are any,
/// otherwise the server of some permission exercisable in `q`, otherwise
/// `fallback`.
pub fn rs_of_state<'a>(m: &'a SecurityAutomaton, q: &StateId, fallback: &'a str) -> &'a str {
    m.transitions()
        .find(|(_, _, to)| *to == q)
        .or_else(|| m.transitions().find(|(from, _, _)| *from == q))
        .map(|(_, p, _)| rs_of(p))
        .unwrap_or(fallback)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub uid: String,
    pub automaton: SecurityAutomaton,
    #[serde(default)]
    pub strategy: FragmentStrategy,
}

/// A policy entry with its fragments precomputed for every state.
#[derive(Clone, Debug)]
pub struct Policy {
    pub automaton: SecurityAutomaton,
    pub strategy: FragmentStrategy,
    fragments: BTreeMap<StateId, SAFragment>,
}

impl Policy {
    pub fn new(automaton: SecurityAutomaton, strategy: FragmentStrategy) -> Self {
        let fragments = automaton
            .states()
            .iter()
            .map(|q| (q.clone(), build_fragment(&automaton, q, strategy)))
            .collect();
        Policy { automaton, strategy, fragments }
    }

    pub fn fragment(&self, q: &StateId) -> &SAFragment {
        &self.fragments[q]
    }
}

#[derive(Clone, Debug, Default)]
pub struct PolicyTable {
    entries: HashMap<String, std::sync::Arc<Policy>>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    entries: Vec<PolicyEntry>,
}

impl PolicyTable {
    pub fn new() -> Self {
        PolicyTable::default()
    }

    /// Builds a table; in multi mode every automaton must keep each state
    /// on a single resource server.
    pub fn from_entries(entries: Vec<PolicyEntry>, mode: Mode) -> Result<Self, PolicyError> {
        let mut table = PolicyTable::new();
        for e in entries {
            if mode == Mode::Multi {
                if let Some(state) = split_state(&e.automaton) {
                    return Err(PolicyError::SplitState { uid: e.uid, state });
                }
            }
            if table.entries.contains_key(&e.uid) {
                return Err(PolicyError::DuplicateUid(e.uid));
            }
            table.insert(e.uid, e.automaton, e.strategy);
        }
        Ok(table)
    }

    pub fn from_json(s: &str, mode: Mode) -> Result<Self, PolicyError> {
        let file: PolicyFile = serde_json::from_str(s)?;
        PolicyTable::from_entries(file.entries, mode)
    }

    pub fn load(path: &Path, mode: Mode) -> Result<Self, PolicyError> {
        PolicyTable::from_json(&std::fs::read_to_string(path)?, mode)
    }

    pub fn to_json(entries: &[PolicyEntry]) -> String {
        serde_json::to_string_pretty(&PolicyFile { entries: entries.to_vec() }).expect("policy serializes")
    }

    pub fn insert(&mut self, uid: impl Into<String>, automaton: SecurityAutomaton, strategy: FragmentStrategy) {
        self.entries.insert(uid.into(), std::sync::Arc::new(Policy::new(automaton, strategy)));
    }

    pub fn get(&self, uid: &str) -> Option<&std::sync::Arc<Policy>> {
        self.entries.get(uid)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    #[test]
    fn eq1_cases() {
        assert!(validate_eq1(&catalog::complete_on(2, 2)));
        assert!(validate_eq1(&catalog::complete(4)));
        let p = |s: &str| s.parse::<Permission>().unwrap();
        let split = SecurityAutomaton::new(
            [p("GET coap://rs0/a"), p("GET coap://rs1/b")],
            ["q0".into(), "q1".into()],
            "q0".into(),
            [("q0".into(), p("GET coap://rs0/a"), "q1".into()), ("q0".into(), p("GET coap://rs1/b"), "q1".into())],
        )
        .unwrap();
        assert!(!validate_eq1(&split));
        let entry = PolicyEntry { uid: "u".into(), automaton: split, strategy: FragmentStrategy::Full };
        assert!(PolicyTable::from_entries(vec![entry.clone()], Mode::Core).is_ok());
        assert!(matches!(
            PolicyTable::from_entries(vec![entry], Mode::Multi),
            Err(PolicyError::SplitState { .. })
        ));
    }

    #[test]
    fn state_servers() {
        let m = catalog::complete_on(2, 2);
        assert_eq!(rs_of_state(&m, &"q0".into(), "x"), "rs0");
        assert_eq!(rs_of_state(&m, &"q1".into(), "x"), "rs1");
    }

    #[test]
    fn file_round_trip() {
        let entries = vec![
            PolicyEntry { uid: "a".into(), automaton: catalog::workflow(), strategy: FragmentStrategy::Minimal },
            PolicyEntry { uid: "b".into(), automaton: catalog::complete(2), strategy: FragmentStrategy::Radius(2) },
        ];
        let s = PolicyTable::to_json(&entries);
        assert!(s.contains("\"radius\": 2"));
        let t = PolicyTable::from_json(&s, Mode::Core).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("a").unwrap().strategy, FragmentStrategy::Minimal);
        let defaulted = r#"{"entries":[{"uid":"c","automaton":{"alphabet":["GET coap://rs/x"],"states":["s"],"initial":"s","transitions":[["s","GET coap://rs/x","s"]]}}]}"#;
        let t = PolicyTable::from_json(defaulted, Mode::Core).unwrap();
        assert_eq!(t.get("c").unwrap().strategy, FragmentStrategy::Radius(1));
    }
}
