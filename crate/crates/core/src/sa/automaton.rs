use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ExceptionList, Permission, SaError, StateId};

/// Deterministic finite security automaton with a partial transition
/// function. Every state accepts; a missing transition is a violation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AutomatonRepr", into = "AutomatonRepr")]
pub struct SecurityAutomaton {
    alphabet: BTreeSet<Permission>,
    states: BTreeSet<StateId>,
    initial: StateId,
    delta: BTreeMap<StateId, BTreeMap<Permission, StateId>>,
}

impl SecurityAutomaton {
    pub fn new(
        alphabet: impl IntoIterator<Item = Permission>,
        states: impl IntoIterator<Item = StateId>,
        initial: StateId,
        transitions: impl IntoIterator<Item = (StateId, Permission, StateId)>,
    ) -> Result<Self, SaError> {
        let alphabet: BTreeSet<_> = alphabet.into_iter().collect();
        let states: BTreeSet<_> = states.into_iter().collect();
        if !states.contains(&initial) {
            return Err(SaError::InvalidAutomaton(format!("initial state {initial} is not a state")));
        }
        let mut delta: BTreeMap<StateId, BTreeMap<Permission, StateId>> = BTreeMap::new();
        for (from, p, to) in transitions {
            if !states.contains(&from) {
                return Err(SaError::UnknownState(from));
            }
            if !states.contains(&to) {
                return Err(SaError::UnknownState(to));
            }
            if !alphabet.contains(&p) {
                return Err(SaError::UnknownPermission(p));
            }
            let row = delta.entry(from.clone()).or_default();
            if let Some(prev) = row.get(&p) {
                if *prev != to {
                    return Err(SaError::InvalidAutomaton(format!(
                        "two targets for ({from}, {p}): {prev} and {to}"
                    )));
                }
            }
            row.insert(p, to);
        }
        Ok(SecurityAutomaton { alphabet, states, initial, delta })
    }

    pub fn alphabet(&self) -> &BTreeSet<Permission> {
        &self.alphabet
    }

    pub fn states(&self) -> &BTreeSet<StateId> {
        &self.states
    }

    pub fn initial(&self) -> &StateId {
        &self.initial
    }

    /// All defined transitions as `(from, permission, to)` triples.
    pub fn transitions(&self) -> impl Iterator<Item = (&StateId, &Permission, &StateId)> {
        self.delta
            .iter()
            .flat_map(|(q, row)| row.iter().map(move |(p, t)| (q, p, t)))
    }

    pub fn transition_count(&self) -> usize {
        self.delta.values().map(BTreeMap::len).sum()
    }

    fn check_state(&self, q: &StateId) -> Result<(), SaError> {
        if self.states.contains(q) {
            Ok(())
        } else {
            Err(SaError::UnknownState(q.clone()))
        }
    }

    /// Transition target, without argument checks.
    pub(crate) fn target(&self, q: &StateId, p: &Permission) -> Option<&StateId> {
        self.delta.get(q).and_then(|row| row.get(p))
    }

    /// `δ(q, p)`. `Ok(None)` is the "undefined" result.
    pub fn step(&self, q: &StateId, p: &Permission) -> Result<Option<&StateId>, SaError> {
        self.check_state(q)?;
        if !self.alphabet.contains(p) {
            return Err(SaError::UnknownPermission(p.clone()));
        }
        Ok(self.target(q, p))
    }

    /// Permissions that loop back to `q`.
    pub fn stationary_set(&self, q: &StateId) -> Result<BTreeSet<Permission>, SaError> {
        self.check_state(q)?;
        Ok(self.row(q).filter(|(_, t)| *t == q).map(|(p, _)| p.clone()).collect())
    }

    /// Permissions that move `q` to a different state.
    pub fn transitioning_set(&self, q: &StateId) -> Result<BTreeSet<Permission>, SaError> {
        self.check_state(q)?;
        Ok(self.row(q).filter(|(_, t)| *t != q).map(|(p, _)| p.clone()).collect())
    }

    pub(crate) fn row<'a>(&'a self, q: &StateId) -> impl Iterator<Item = (&'a Permission, &'a StateId)> {
        self.delta.get(q).into_iter().flat_map(|row| row.iter())
    }

    pub(crate) fn is_stationary(&self, q: &StateId, p: &Permission) -> bool {
        self.target(q, p) == Some(q)
    }

    pub(crate) fn is_transitioning(&self, q: &StateId, p: &Permission) -> bool {
        matches!(self.target(q, p), Some(t) if t != q)
    }

    /// `δ*(q, e)`: exercise the entries of `e` oldest-first.
    pub fn run(&self, q: &StateId, e: &ExceptionList) -> Result<Option<StateId>, SaError> {
        self.check_state(q)?;
        let mut cur = q;
        for entry in e.chronological() {
            match self.target(cur, &entry.permission) {
                Some(next) => cur = next,
                None => return Ok(None),
            }
        }
        Ok(Some(cur.clone()))
    }
}

#[derive(Serialize, Deserialize)]
struct AutomatonRepr {
    alphabet: Vec<Permission>,
    initial: StateId,
    states: Vec<StateId>,
    transitions: Vec<(StateId, Permission, StateId)>,
}

impl TryFrom<AutomatonRepr> for SecurityAutomaton {
    type Error = SaError;

    fn try_from(r: AutomatonRepr) -> Result<Self, Self::Error> {
        SecurityAutomaton::new(r.alphabet, r.states, r.initial, r.transitions)
    }
}

impl From<SecurityAutomaton> for AutomatonRepr {
    fn from(m: SecurityAutomaton) -> Self {
        let transitions = m
            .transitions()
            .map(|(q, p, t)| (q.clone(), p.clone(), t.clone()))
            .collect();
        AutomatonRepr {
            alphabet: m.alphabet.into_iter().collect(),
            initial: m.initial,
            states: m.states.into_iter().collect(),
            transitions,
        }
    }
}
