use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::{FragStep, Model, ModelExc, ModelTicket, ProtocolState, Time, Transition};

#[derive(Clone, Copy, Debug)]
pub struct ExploreOptions {
    /// Transitions taken from the initial state, at most.
    pub depth: usize,
    /// Distinct states before giving up.
    pub max_states: usize,
    /// Build and replay a liveness witness for every reached state.
    pub liveness: bool,
}

impl ExploreOptions {
    pub fn depth(depth: usize) -> Self {
        ExploreOptions { depth, ..Default::default() }
    }
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions { depth: 8, max_states: 5_000_000, liveness: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem: Option<String>,
    pub trace: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExplorationReport {
    pub states: usize,
    pub edges: usize,
    pub violations: Vec<Violation>,
    pub complete: bool,
    /// States whose liveness witness was built and replayed.
    pub liveness_checked: usize,
    pub request_edges: usize,
    /// Request edges taken by the transitioning-permission rule.
    pub transitioning_edges: usize,
    pub max_depth: usize,
}

impl ExplorationReport {
    pub fn ok(&self) -> bool {
        self.complete && self.violations.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const THEOREM_REQUEST: &str = "request_follows_automaton";
pub const THEOREM_PRESERVE: &str = "effective_state_preserved";
pub const THEOREM_LIVENESS: &str = "liveness";

/// Renames timestamps to their rank among all timestamps in the state.
///
/// Rules only compare timestamps and take the clock as a fresh maximum, so
/// states that agree up to an order-preserving renaming behave alike.
pub fn canonicalize(g: &ProtocolState) -> ProtocolState {
    let mut stamps: Vec<Time> = vec![g.clock, g.t_as, g.t_rs];
    stamps.extend(g.e_rs.times());
    for t in &g.client {
        match t {
            ModelTicket::Cap { serial, .. } => stamps.push(*serial),
            ModelTicket::Upd(e) => stamps.extend(e.times()),
        }
    }
    stamps.sort_unstable();
    stamps.dedup();
    let r = |t: Time| stamps.binary_search(&t).expect("collected") as Time;
    let exc = |e: &ModelExc| ModelExc { base: r(e.base), entries: e.entries.iter().map(|&(p, t)| (p, r(t))).collect() };
    ProtocolState {
        clock: r(g.clock),
        q_as: g.q_as,
        t_as: r(g.t_as),
        t_rs: r(g.t_rs),
        e_rs: exc(&g.e_rs),
        client: g
            .client
            .iter()
            .map(|t| match t {
                ModelTicket::Cap { serial, frag } => ModelTicket::Cap { serial: r(*serial), frag: *frag },
                ModelTicket::Upd(e) => ModelTicket::Upd(exc(e)),
            })
            .collect::<BTreeSet<_>>(),
    }
}

struct Visited {
    index: HashMap<ProtocolState, u32>,
    parent: Vec<Option<(u32, Transition)>>,
}

impl Visited {
    fn trace(&self, model: &Model, mut at: u32, last: Option<&Transition>) -> Vec<String> {
        let mut out: Vec<String> = last.map(|l| model.describe(l)).into_iter().collect();
        while let Some((p, l)) = &self.parent[at as usize] {
            out.push(model.describe(l));
            at = *p;
        }
        out.reverse();
        out
    }
}

/// Breadth-first exploration from the initial state, checking the
/// invariants on every state and both safety statements on every edge.
pub fn explore(model: &Model, opts: ExploreOptions) -> ExplorationReport {
    let mut report = ExplorationReport { complete: true, ..Default::default() };
    let mut seen_kinds: BTreeSet<String> = BTreeSet::new();
    let mut record = |report: &mut ExplorationReport, inv: Option<String>, thm: Option<String>, trace: Vec<String>| {
        let key = inv.clone().or_else(|| thm.clone()).unwrap_or_default();
        if seen_kinds.insert(key) {
            report.violations.push(Violation { invariant: inv, theorem: thm, trace });
        }
    };

    let start = canonicalize(&model.initial_state());
    let mut v = Visited { index: HashMap::new(), parent: vec![None] };
    v.index.insert(start.clone(), 0);
    for inv in model.check_invariants(&start) {
        record(&mut report, Some(inv.name().into()), None, Vec::new());
    }
    let mut frontier = vec![(0u32, start)];
    let mut depth = 0;
    loop {
        if opts.liveness {
            for (id, g) in &frontier {
                report.liveness_checked += 1;
                if let Err(e) = model.liveness_witness(g) {
                    let mut trace = v.trace(model, *id, None);
                    trace.push(format!("no witness: {e}"));
                    record(&mut report, None, Some(THEOREM_LIVENESS.into()), trace);
                }
            }
        }
        if depth == opts.depth || frontier.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for (id, g) in &frontier {
            let Some(eff) = model.effective_unchecked(g) else { continue };
            for (l, succ) in model.successors(g) {
                report.edges += 1;
                let eff2 = model.effective_unchecked(&succ);
                if let Transition::Request(p, tic) = &l {
                    report.request_edges += 1;
                    if let ModelTicket::Cap { frag, .. } = tic {
                        if model.frag_step(*frag, *p) != FragStep::Stationary {
                            report.transitioning_edges += 1;
                        }
                    }
                    if model.delta(eff, *p).is_none() || model.delta(eff, *p) != eff2 {
                        record(&mut report, None, Some(THEOREM_REQUEST.into()), v.trace(model, *id, Some(&l)));
                    }
                } else if eff2 != Some(eff) {
                    record(&mut report, None, Some(THEOREM_PRESERVE.into()), v.trace(model, *id, Some(&l)));
                }
                let c = canonicalize(&succ);
                if v.index.contains_key(&c) {
                    continue;
                }
                if v.index.len() >= opts.max_states {
                    report.complete = false;
                    continue;
                }
                let nid = v.parent.len() as u32;
                v.parent.push(Some((*id, l)));
                v.index.insert(c.clone(), nid);
                let bad = model.check_invariants(&c);
                if bad.is_empty() {
                    next.push((nid, c));
                } else {
                    for inv in bad {
                        record(&mut report, Some(inv.name().into()), None, v.trace(model, nid, None));
                    }
                }
            }
        }
        frontier = next;
        depth += 1;
        if !frontier.is_empty() {
            report.max_depth = depth;
        }
    }
    report.states = v.index.len();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::model::Mutation;
    use crate::sa::FragmentStrategy;

    #[test]
    fn canonical_form_keeps_order() {
        let m = Model::new(&catalog::complete(2), FragmentStrategy::Full).unwrap();
        let mut g = m.initial_state();
        g.clock = 40;
        g.t_as = 17;
        g.t_rs = 9;
        g.e_rs = ModelExc::nil(3);
        let c = canonicalize(&g);
        assert_eq!((c.clock, c.t_as, c.t_rs, c.e_rs.base), (3, 2, 1, 0));
        assert_eq!(canonicalize(&m.initial_state()), m.initial_state());
    }

    #[test]
    fn m2_small_depth_is_clean() {
        for s in [FragmentStrategy::Full, FragmentStrategy::Minimal, FragmentStrategy::Radius(1)] {
            let m = Model::new(&catalog::complete(2), s).unwrap();
            let r = explore(&m, ExploreOptions::depth(5));
            assert!(r.ok(), "{s:?}: {r:?}");
            assert!(r.transitioning_edges > 0);
        }
    }

    #[test]
    fn single_state_has_no_transitioning_requests() {
        let m = Model::new(&catalog::single_state(2), FragmentStrategy::Full).unwrap();
        let r = explore(&m, ExploreOptions::depth(6));
        assert!(r.ok());
        assert!(r.request_edges > 0);
        assert_eq!(r.transitioning_edges, 0);
    }

    #[test]
    fn skipped_append_is_caught() {
        let m = Model::new(&catalog::complete(2), FragmentStrategy::Full).unwrap().with_mutation(Mutation::SkipReqtAppend);
        let r = explore(&m, ExploreOptions::depth(4));
        assert!(r.violations.iter().any(|v| v.theorem.as_deref() == Some(THEOREM_REQUEST)), "{r:?}");
    }

    #[test]
    fn budget_exhaustion_is_incomplete() {
        let m = Model::new(&catalog::complete(2), FragmentStrategy::Full).unwrap();
        let r = explore(&m, ExploreOptions { depth: 8, max_states: 50, liveness: false });
        assert!(!r.complete);
    }
}
