use std::collections::{BTreeSet, HashMap};

use super::{FragOutcome, Name, Permission, SAFragment, SaError, SecurityAutomaton, StateId, Target};

/// Whether `f` is a conservative partial specification of `m` in state
/// `q`: some mapping `π` from fragment names to automaton states sends
/// the current name to `q`, and every named state's stationary set,
/// transitioning set, and named targets agree with `m` under `π`.
///
/// Names reachable from the current name are forced by propagation;
/// the rest are found by backtracking over the automaton's states.
pub fn is_safe_for(f: &SAFragment, m: &SecurityAutomaton, q: &StateId) -> bool {
    if !m.states().contains(q) {
        return false;
    }
    let mut search = Embedding { f, m, pi: HashMap::new(), trail: Vec::new() };
    search.assign(f.current(), q) && search.complete()
}

struct Embedding<'a> {
    f: &'a SAFragment,
    m: &'a SecurityAutomaton,
    pi: HashMap<&'a Name, &'a StateId>,
    trail: Vec<&'a Name>,
}

impl<'a> Embedding<'a> {
    fn assign(&mut self, n: &'a Name, q: &'a StateId) -> bool {
        if let Some(prev) = self.pi.get(n) {
            return *prev == q;
        }
        self.pi.insert(n, q);
        self.trail.push(n);
        let def = &self.f.defs()[n];
        if !def.stationary.iter().all(|p| self.m.is_stationary(q, p)) {
            return false;
        }
        for (p, target) in &def.trans {
            let Some(next) = self.m.target(q, p).filter(|t| *t != q) else {
                return false;
            };
            if let Target::Name(name) = target {
                if !self.assign(name, next) {
                    return false;
                }
            }
        }
        true
    }

    fn undo(&mut self, mark: usize) {
        for n in self.trail.drain(mark..) {
            self.pi.remove(n);
        }
    }

    fn complete(&mut self) -> bool {
        let f = self.f;
        let Some(n) = f.defs().keys().find(|n| !self.pi.contains_key(n)) else {
            return true;
        };
        let m = self.m;
        for q in m.states() {
            let mark = self.trail.len();
            if self.assign(n, q) && self.complete() {
                return true;
            }
            self.undo(mark);
        }
        false
    }
}

/// Which fragment-safety clause failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lemma1Clause {
    /// `F ⊳ p` defined but `δ(q, p)` undefined.
    DefinedImpliesDefined,
    /// `p ∈ SP` not stationary, or `p ∈ dom(trans)` not transitioning.
    KindPreserved,
    /// `F ⊳ p` is a fragment that is not safe in `δ(q, p)`.
    SafetyPreserved,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lemma1Report {
    Pass,
    Fail { clause: Lemma1Clause, permission: Permission },
}

/// Checks the three consequences of fragment safety for every
/// permission the automaton or the fragment's current state mentions.
pub fn lemma1_check(f: &SAFragment, m: &SecurityAutomaton, q: &StateId) -> Result<Lemma1Report, SaError> {
    if !is_safe_for(f, m, q) {
        return Err(SaError::UnsafeFragment(q.clone()));
    }
    let def = f.current_def();
    let perms: BTreeSet<&Permission> = m
        .alphabet()
        .iter()
        .chain(def.stationary.iter())
        .chain(def.trans.keys())
        .collect();
    for p in perms {
        let fail = |clause| Ok(Lemma1Report::Fail { clause, permission: p.clone() });
        let stepped = f.step(p);
        let target = m.target(q, p);
        if stepped.is_defined() && target.is_none() {
            return fail(Lemma1Clause::DefinedImpliesDefined);
        }
        if def.stationary.contains(p) && !m.is_stationary(q, p) {
            return fail(Lemma1Clause::KindPreserved);
        }
        if def.trans.contains_key(p) && !m.is_transitioning(q, p) {
            return fail(Lemma1Clause::KindPreserved);
        }
        if let FragOutcome::Fragment(next) = &stepped {
            match target {
                Some(t) if is_safe_for(next, m, t) => {}
                _ => return fail(Lemma1Clause::SafetyPreserved),
            }
        }
    }
    Ok(Lemma1Report::Pass)
}
