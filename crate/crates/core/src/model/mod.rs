//! Executable model of one protocol session with a single resource server.
//!
//! Automaton states, permissions, and fragments are interned into small
//! indices so that protocol states are cheap to hash and compare.

mod explore;
mod invariants;
mod liveness;
mod rules;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::sa::{build_fragment, FragOutcome, FragmentStrategy, Permission, SAFragment, SecurityAutomaton, StateId, Target};

pub use explore::{
    canonicalize, explore, ExploreOptions, ExplorationReport, Violation, THEOREM_LIVENESS, THEOREM_PRESERVE,
    THEOREM_REQUEST,
};
pub use invariants::Invariant;
pub use liveness::LivenessError;

/// Model timestamps. Only their order matters.
pub type Time = u32;

pub type StateIx = u16;
pub type PermIx = u8;
pub type FragIx = u16;

/// Exception list `(p_m, t_m) · … · (p_1, t_1) · Nil(t_0)`, stored oldest first.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModelExc {
    pub base: Time,
    pub entries: Vec<(PermIx, Time)>,
}

impl ModelExc {
    pub fn nil(base: Time) -> Self {
        ModelExc { base, entries: Vec::new() }
    }

    pub fn ts_first(&self) -> Time {
        self.base
    }

    pub fn ts_last(&self) -> Time {
        self.entries.last().map_or(self.base, |e| e.1)
    }

    pub fn is_nil(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = Time> + '_ {
        std::iter::once(self.base).chain(self.entries.iter().map(|e| e.1))
    }

    pub fn contains_time(&self, t: Time) -> bool {
        self.times().any(|x| x == t)
    }

    fn split(&self, t: Time) -> (&[(PermIx, Time)], &[(PermIx, Time)]) {
        let k = self.entries.partition_point(|e| e.1 <= t);
        self.entries.split_at(k)
    }

    fn pushed(&self, p: PermIx, t: Time) -> ModelExc {
        let mut e = self.clone();
        e.entries.push((p, t));
        e
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelTicket {
    Cap { serial: Time, frag: FragIx },
    Upd(ModelExc),
}

/// `⟨t_clo, ⟨q_as, t_as⟩, ⟨t_rs, e_rs⟩, C⟩`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProtocolState {
    pub clock: Time,
    pub q_as: StateIx,
    pub t_as: Time,
    pub t_rs: Time,
    pub e_rs: ModelExc,
    pub client: BTreeSet<ModelTicket>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Transition {
    Issue,
    Request(PermIx, ModelTicket),
    Flush,
    Update(ModelTicket),
    Recover(ModelTicket),
    Drop(Vec<ModelTicket>),
}

impl Transition {
    pub fn is_request(&self) -> bool {
        matches!(self, Transition::Request(..))
    }
}

/// A rule precondition failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Disabled;

/// Deliberate rule corruption for testing the checker itself.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    #[default]
    None,
    /// Transitioning requests do not record the exercised permission.
    SkipReqtAppend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum FragStep {
    Stationary,
    To(FragIx),
    Unknown,
    Undefined,
}

/// Result of running a fragment over exception entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Run {
    Frag(FragIx),
    Unknown,
    Undefined,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("automaton too large for the model ({0})")]
    TooLarge(String),
    #[error("state violates {0:?}")]
    Invariants(Vec<Invariant>),
}

/// Interned automaton and fragments for one policy.
pub struct Model {
    perms: Vec<Permission>,
    states: Vec<StateId>,
    initial: StateIx,
    delta: Vec<Vec<Option<StateIx>>>,
    frags: Vec<SAFragment>,
    frag_index: HashMap<SAFragment, FragIx>,
    steps: Vec<Vec<FragStep>>,
    /// `F_{M,q}` per automaton state.
    base: Vec<FragIx>,
    strategy: FragmentStrategy,
    mutation: Mutation,
}

impl Model {
    pub fn new(m: &SecurityAutomaton, strategy: FragmentStrategy) -> Result<Model, ModelError> {
        let perms: Vec<Permission> = m.alphabet().iter().cloned().collect();
        let states: Vec<StateId> = m.states().iter().cloned().collect();
        if perms.len() > PermIx::MAX as usize || states.len() > StateIx::MAX as usize {
            return Err(ModelError::TooLarge(format!("{} states, {} permissions", states.len(), perms.len())));
        }
        let sx = |q: &StateId| states.binary_search(q).expect("known state") as StateIx;
        let delta = states
            .iter()
            .map(|q| perms.iter().map(|p| m.step(q, p).expect("known").map(sx)).collect())
            .collect();
        let mut frags = Vec::new();
        let mut index: HashMap<SAFragment, FragIx> = HashMap::new();
        let mut intern = |f: SAFragment, frags: &mut Vec<SAFragment>| -> FragIx {
            *index.entry(f.clone()).or_insert_with(|| {
                frags.push(f);
                (frags.len() - 1) as FragIx
            })
        };
        let base: Vec<FragIx> = states
            .iter()
            .map(|q| intern(build_fragment(m, q, strategy), &mut frags))
            .collect();
        let mut steps: Vec<Vec<FragStep>> = Vec::new();
        let mut i = 0;
        while i < frags.len() {
            let f = frags[i].clone();
            let def = f.current_def();
            let row = perms
                .iter()
                .map(|p| {
                    if def.stationary.contains(p) {
                        return FragStep::Stationary;
                    }
                    match def.trans.get(p) {
                        Some(Target::Name(_)) => match f.step(p) {
                            FragOutcome::Fragment(g) => FragStep::To(intern(g, &mut frags)),
                            _ => unreachable!("named target yields a fragment"),
                        },
                        Some(Target::Unknown) => FragStep::Unknown,
                        None => FragStep::Undefined,
                    }
                })
                .collect();
            steps.push(row);
            i += 1;
            if frags.len() > FragIx::MAX as usize {
                return Err(ModelError::TooLarge(format!("{} fragments", frags.len())));
            }
        }
        Ok(Model {
            perms,
            initial: sx(m.initial()),
            states,
            delta,
            frags,
            frag_index: index,
            steps,
            base,
            strategy,
            mutation: Mutation::None,
        })
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn strategy(&self) -> FragmentStrategy {
        self.strategy
    }

    pub fn permissions(&self) -> &[Permission] {
        &self.perms
    }

    pub fn permission(&self, p: PermIx) -> &Permission {
        &self.perms[p as usize]
    }

    pub fn perm_index(&self, p: &Permission) -> Option<PermIx> {
        self.perms.iter().position(|x| x == p).map(|i| i as PermIx)
    }

    pub fn state(&self, q: StateIx) -> &StateId {
        &self.states[q as usize]
    }

    pub fn state_index(&self, q: &StateId) -> Option<StateIx> {
        self.states.binary_search(q).ok().map(|i| i as StateIx)
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn fragment(&self, f: FragIx) -> &SAFragment {
        &self.frags[f as usize]
    }

    pub fn fragment_index(&self, f: &SAFragment) -> Option<FragIx> {
        self.frag_index.get(f).copied()
    }

    pub fn fragment_count(&self) -> usize {
        self.frags.len()
    }

    /// `F_{M,q}`.
    pub fn base_fragment(&self, q: StateIx) -> FragIx {
        self.base[q as usize]
    }

    /// `δ(q, p)`.
    pub fn delta(&self, q: StateIx, p: PermIx) -> Option<StateIx> {
        self.delta[q as usize][p as usize]
    }

    /// `δ*(q, e)`.
    pub fn delta_star(&self, q: StateIx, e: &ModelExc) -> Option<StateIx> {
        e.entries.iter().try_fold(q, |q, &(p, _)| self.delta(q, p))
    }

    pub(crate) fn frag_step(&self, f: FragIx, p: PermIx) -> FragStep {
        self.steps[f as usize][p as usize]
    }

    fn run_entries(&self, f: FragIx, entries: &[(PermIx, Time)]) -> Run {
        entries.iter().fold(Run::Frag(f), |acc, &(p, _)| match acc {
            Run::Frag(f) => match self.frag_step(f, p) {
                FragStep::Stationary => Run::Frag(f),
                FragStep::To(g) => Run::Frag(g),
                FragStep::Unknown => Run::Unknown,
                FragStep::Undefined => Run::Undefined,
            },
            _ => Run::Undefined,
        })
    }

    /// `F ⊳ e`.
    pub fn run(&self, f: FragIx, e: &ModelExc) -> Run {
        self.run_entries(f, &e.entries)
    }

    /// `F ⊳≤t e`; `None` when `t` is not a time of `e`.
    pub fn run_upto(&self, f: FragIx, t: Time, e: &ModelExc) -> Option<Run> {
        e.contains_time(t).then(|| self.run_entries(f, e.split(t).0))
    }

    /// `F ⊳>t e`; `None` when `t` is not a time of `e`.
    pub fn run_after(&self, f: FragIx, t: Time, e: &ModelExc) -> Option<Run> {
        e.contains_time(t).then(|| self.run_entries(f, e.split(t).1))
    }

    /// `γ0 = ⟨2, ⟨q0, 1⟩, ⟨1, Nil(0)⟩, ∅⟩`.
    pub fn initial_state(&self) -> ProtocolState {
        ProtocolState { clock: 2, q_as: self.initial, t_as: 1, t_rs: 1, e_rs: ModelExc::nil(0), client: BTreeSet::new() }
    }

    pub fn describe_ticket(&self, t: &ModelTicket) -> String {
        match t {
            ModelTicket::Cap { serial, frag } => {
                format!("cap({serial}, F{frag}:{})", self.frags[*frag as usize].current())
            }
            ModelTicket::Upd(e) => format!("upd({})", self.describe_exc(e)),
        }
    }

    pub fn describe_exc(&self, e: &ModelExc) -> String {
        let mut s = String::new();
        for (p, t) in e.entries.iter().rev() {
            s.push_str(&format!("({}, {t}) · ", self.permission(*p)));
        }
        s.push_str(&format!("Nil({})", e.base));
        s
    }

    pub fn describe(&self, l: &Transition) -> String {
        match l {
            Transition::Issue => "issue()".into(),
            Transition::Flush => "flush()".into(),
            Transition::Request(p, t) => format!("request({}, {})", self.permission(*p), self.describe_ticket(t)),
            Transition::Update(t) => format!("update({})", self.describe_ticket(t)),
            Transition::Recover(t) => format!("recover({})", self.describe_ticket(t)),
            Transition::Drop(ts) => {
                let inner: Vec<_> = ts.iter().map(|t| self.describe_ticket(t)).collect();
                format!("drop({{{}}})", inner.join(", "))
            }
        }
    }

    pub fn describe_state(&self, g: &ProtocolState) -> String {
        let client: Vec<_> = g.client.iter().map(|t| self.describe_ticket(t)).collect();
        format!(
            "⟨{}, ⟨{}, {}⟩, ⟨{}, {}⟩, {{{}}}⟩",
            g.clock,
            self.state(g.q_as),
            g.t_as,
            g.t_rs,
            self.describe_exc(&g.e_rs),
            client.join(", ")
        )
    }
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("states", &self.states.len())
            .field("permissions", &self.perms.len())
            .field("fragments", &self.frags.len())
            .field("strategy", &self.strategy)
            .field("mutation", &self.mutation)
            .finish()
    }
}
