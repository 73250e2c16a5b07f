//! Straight-line restatement of the protocol rules over the automaton and
//! fragment types, compared against the interned model on sampled states.

use std::collections::{BTreeSet, HashSet, VecDeque};

use hcap_core::catalog;
use hcap_core::model::{Model, ModelExc, ModelTicket, ProtocolState, Transition};
use hcap_core::sa::{build_fragment, ExceptionList, FragOutcome, FragmentStrategy, SAFragment, SecurityAutomaton, StateId, Timestamp};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Tic {
    Cap(u64, String),
    Upd(Vec<(String, u64)>, u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Plain {
    clock: u64,
    q_as: StateId,
    t_as: u64,
    t_rs: u64,
    e_rs: ExceptionList,
    client: BTreeSet<Tic>,
}

struct Oracle<'a> {
    m: &'a SecurityAutomaton,
    model: &'a Model,
    strategy: FragmentStrategy,
}

impl Oracle<'_> {
    fn exc(&self, e: &ModelExc) -> ExceptionList {
        ExceptionList::from_chronological(
            Timestamp(e.base as u64),
            e.entries.iter().map(|&(p, t)| (self.model.permission(p).clone(), Timestamp(t as u64))),
        )
        .unwrap()
    }

    fn key(&self, e: &ExceptionList) -> Tic {
        Tic::Upd(e.chronological().iter().map(|x| (x.permission.to_string(), x.at.0)).collect(), e.base().0)
    }

    fn frag_key(f: &SAFragment) -> String {
        serde_json::to_string(f).unwrap()
    }

    fn ticket(&self, t: &ModelTicket) -> Tic {
        match t {
            ModelTicket::Cap { serial, frag } => Tic::Cap(*serial as u64, Self::frag_key(self.model.fragment(*frag))),
            ModelTicket::Upd(e) => self.key(&self.exc(e)),
        }
    }

    fn plain(&self, g: &ProtocolState) -> Plain {
        Plain {
            clock: g.clock as u64,
            q_as: self.model.state(g.q_as).clone(),
            t_as: g.t_as as u64,
            t_rs: g.t_rs as u64,
            e_rs: self.exc(&g.e_rs),
            client: g.client.iter().map(|t| self.ticket(t)).collect(),
        }
    }

    /// The rules as written, applied to `g` with transition `l`.
    fn step(&self, g: &ProtocolState, l: &Transition) -> Option<Plain> {
        let s = self.plain(g);
        let mut n = s.clone();
        n.clock = s.clock + 1;
        let held = |t: &ModelTicket| s.client.contains(&self.ticket(t));
        match l {
            Transition::Issue => {
                let f = build_fragment(self.m, &s.q_as, self.strategy);
                n.client.insert(Tic::Cap(s.t_as, Self::frag_key(&f)));
            }
            Transition::Request(p, tic) => {
                let ModelTicket::Cap { serial, frag } = tic else { return None };
                let ser = *serial as u64;
                let f = self.model.fragment(*frag);
                let p = self.model.permission(*p);
                let last = s.e_rs.ts_last().0;
                if !held(tic) || ser < s.t_rs || ser < last {
                    return None;
                }
                let def = f.current_def();
                if def.stationary.contains(p) {
                    if ser > last {
                        n.e_rs = ExceptionList::nil(Timestamp(ser));
                    }
                } else if def.trans.contains_key(p) {
                    let mut e0 = if ser > last { ExceptionList::nil(Timestamp(ser)) } else { s.e_rs.clone() };
                    e0.push(p.clone(), Timestamp(s.clock)).unwrap();
                    n.e_rs = e0;
                    n.client.insert(match f.step(p) {
                        FragOutcome::Unknown => self.key(&n.e_rs),
                        FragOutcome::Fragment(next) => Tic::Cap(s.clock, Self::frag_key(&next)),
                        FragOutcome::Undefined => unreachable!("p is in the domain of trans"),
                    });
                } else {
                    return None;
                }
            }
            Transition::Flush => {
                n.t_as = s.clock;
                n.t_rs = s.clock;
                n.e_rs = ExceptionList::nil(s.e_rs.ts_last());
                if s.t_as == s.e_rs.ts_first().0 {
                    if let Some(q) = self.m.run(&s.q_as, &s.e_rs).unwrap() {
                        n.q_as = q;
                    }
                }
            }
            Transition::Update(tic) => {
                let ModelTicket::Upd(e) = tic else { return None };
                let e = self.exc(e);
                if !held(tic) || e.ts_first().0 != s.t_as {
                    return None;
                }
                n.t_as = s.clock;
                if let Some(q) = self.m.run(&s.q_as, &e).unwrap() {
                    n.q_as = q;
                }
            }
            Transition::Recover(tic) => {
                let ModelTicket::Cap { serial, frag } = tic else { return None };
                let ser = Timestamp(*serial as u64);
                if !held(tic) || !s.e_rs.contains_time(ser) {
                    return None;
                }
                match self.model.fragment(*frag).run_after(ser, &s.e_rs).unwrap() {
                    FragOutcome::Undefined => {}
                    FragOutcome::Unknown => {
                        n.client.insert(self.key(&s.e_rs));
                    }
                    FragOutcome::Fragment(f) => {
                        n.client.insert(Tic::Cap(s.e_rs.ts_last().0, Self::frag_key(&f)));
                    }
                }
            }
            Transition::Drop(ts) => {
                if !ts.iter().all(held) {
                    return None;
                }
                for t in ts {
                    n.client.remove(&self.ticket(t));
                }
            }
        }
        Some(n)
    }
}

/// Up to `limit` distinct states reachable from the initial state, breadth first.
fn sample(model: &Model, limit: usize) -> Vec<ProtocolState> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut queue = VecDeque::from([model.initial_state()]);
    while let Some(g) = queue.pop_front() {
        if out.len() >= limit {
            break;
        }
        if !seen.insert(g.clone()) {
            continue;
        }
        for (_, n) in model.successors(&g) {
            queue.push_back(n);
        }
        out.push(g);
    }
    out
}

fn check(m: &SecurityAutomaton, strategy: FragmentStrategy) -> (usize, usize) {
    let model = Model::new(m, strategy).unwrap();
    let oracle = Oracle { m, model: &model, strategy };
    let (mut enabled, mut disabled) = (0, 0);
    let states = sample(&model, 200);
    assert_eq!(states.len(), 200);
    for g in &states {
        for l in model.candidate_transitions(g) {
            let want = oracle.step(g, &l);
            let got = model.step(g, &l).ok().map(|n| oracle.plain(&n));
            assert_eq!(got, want, "{} from {}", model.describe(&l), model.describe_state(g));
            if want.is_some() {
                enabled += 1;
            } else {
                disabled += 1;
            }
        }
    }
    (enabled, disabled)
}

#[test]
fn rules_match_oracle_on_sampled_states() {
    for m in [catalog::complete(2), catalog::door_chain(), catalog::workflow(), catalog::oscillator()] {
        for s in [FragmentStrategy::Full, FragmentStrategy::Minimal, FragmentStrategy::Radius(1)] {
            let (enabled, disabled) = check(&m, s);
            assert!(enabled > 0 && disabled > 0, "{s:?}: {enabled} enabled, {disabled} disabled");
        }
    }
}
