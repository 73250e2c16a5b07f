use super::{Disabled, FragStep, Model, ModelExc, ModelTicket, Mutation, ProtocolState, Run, Transition};

impl Model {
    /// One protocol step; `Err(Disabled)` when the rule's precondition fails.
    pub fn step(&self, g: &ProtocolState, l: &Transition) -> Result<ProtocolState, Disabled> {
        let mut n = g.clone();
        n.clock = g.clock + 1;
        match l {
            Transition::Issue => {
                n.client.insert(ModelTicket::Cap { serial: g.t_as, frag: self.base_fragment(g.q_as) });
            }
            Transition::Request(p, tic) => {
                let ModelTicket::Cap { serial, frag } = tic else { return Err(Disabled) };
                let (serial, frag) = (*serial, *frag);
                if !g.client.contains(tic) || serial < g.t_rs || serial < g.e_rs.ts_last() {
                    return Err(Disabled);
                }
                let fresh = serial > g.e_rs.ts_last();
                match self.frag_step(frag, *p) {
                    FragStep::Undefined => return Err(Disabled),
                    FragStep::Stationary => {
                        if fresh {
                            n.e_rs = ModelExc::nil(serial);
                        }
                    }
                    step => {
                        let e0 = if fresh { ModelExc::nil(serial) } else { g.e_rs.clone() };
                        n.e_rs = match self.mutation {
                            Mutation::SkipReqtAppend => e0,
                            Mutation::None => e0.pushed(*p, g.clock),
                        };
                        n.client.insert(match step {
                            FragStep::To(next) => ModelTicket::Cap { serial: g.clock, frag: next },
                            _ => ModelTicket::Upd(n.e_rs.clone()),
                        });
                    }
                }
            }
            Transition::Flush => {
                n.t_as = g.clock;
                n.t_rs = g.clock;
                n.e_rs = ModelExc::nil(g.e_rs.ts_last());
                if g.t_as == g.e_rs.ts_first() {
                    if let Some(q) = self.delta_star(g.q_as, &g.e_rs) {
                        n.q_as = q;
                    }
                }
            }
            Transition::Update(tic) => {
                let ModelTicket::Upd(e) = tic else { return Err(Disabled) };
                if !g.client.contains(tic) || e.ts_first() != g.t_as {
                    return Err(Disabled);
                }
                n.t_as = g.clock;
                if let Some(q) = self.delta_star(g.q_as, e) {
                    n.q_as = q;
                }
            }
            Transition::Recover(tic) => {
                let ModelTicket::Cap { serial, frag } = tic else { return Err(Disabled) };
                if !g.client.contains(tic) {
                    return Err(Disabled);
                }
                match self.run_after(*frag, *serial, &g.e_rs).ok_or(Disabled)? {
                    Run::Undefined => {}
                    Run::Unknown => {
                        n.client.insert(ModelTicket::Upd(g.e_rs.clone()));
                    }
                    Run::Frag(f) => {
                        n.client.insert(ModelTicket::Cap { serial: g.e_rs.ts_last(), frag: f });
                    }
                }
            }
            Transition::Drop(ts) => {
                if !ts.iter().all(|t| g.client.contains(t)) {
                    return Err(Disabled);
                }
                for t in ts {
                    n.client.remove(t);
                }
            }
        }
        Ok(n)
    }

    /// Candidate transitions: issue, flush, every request with a held
    /// capability, update and recover for each held ticket, and drops of
    /// single tickets or of the whole client set.
    pub fn candidate_transitions(&self, g: &ProtocolState) -> Vec<Transition> {
        let mut out = vec![Transition::Issue, Transition::Flush];
        for t in &g.client {
            match t {
                ModelTicket::Cap { .. } => {
                    for p in 0..self.perms.len() {
                        out.push(Transition::Request(p as u8, t.clone()));
                    }
                    out.push(Transition::Recover(t.clone()));
                }
                ModelTicket::Upd(_) => out.push(Transition::Update(t.clone())),
            }
        }
        for t in &g.client {
            out.push(Transition::Drop(vec![t.clone()]));
        }
        if g.client.len() > 1 {
            out.push(Transition::Drop(g.client.iter().cloned().collect()));
        }
        out
    }

    /// Enabled transitions together with their target states.
    pub fn successors(&self, g: &ProtocolState) -> Vec<(Transition, ProtocolState)> {
        self.candidate_transitions(g)
            .into_iter()
            .filter_map(|l| self.step(g, &l).ok().map(|n| (l, n)))
            .collect()
    }

    pub fn enabled_transitions(&self, g: &ProtocolState) -> Vec<Transition> {
        self.successors(g).into_iter().map(|(l, _)| l).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::catalog;
    use crate::sa::FragmentStrategy;

    fn m2(strategy: FragmentStrategy) -> Model {
        Model::new(&catalog::complete(2), strategy).unwrap()
    }

    #[test]
    fn initial_enabled() {
        let m = m2(FragmentStrategy::Full);
        let g = m.initial_state();
        assert_eq!(m.enabled_transitions(&g), vec![Transition::Issue, Transition::Flush]);
    }

    #[test]
    fn issue_then_requests() {
        let m = m2(FragmentStrategy::Full);
        let g = m.step(&m.initial_state(), &Transition::Issue).unwrap();
        let cap = ModelTicket::Cap { serial: 1, frag: m.base_fragment(0) };
        assert_eq!(g.client.iter().collect::<Vec<_>>(), vec![&cap]);
        let en = m.enabled_transitions(&g);
        assert!(en.contains(&Transition::Request(0, cap.clone())));
        assert!(en.contains(&Transition::Request(1, cap.clone())));
        assert!(!en.contains(&Transition::Recover(cap.clone())));
        assert!(en.contains(&Transition::Drop(vec![cap.clone()])));
        assert!(en.iter().filter(|l| matches!(l, Transition::Drop(_))).count() <= g.client.len() + 1);

        let t = m.step(&g, &Transition::Request(1, cap.clone())).unwrap();
        assert_eq!(t.e_rs, ModelExc { base: 1, entries: vec![(1, 3)] });
        assert_eq!(m.effective_state(&t).unwrap(), 1);
    }

    #[test]
    fn stale_request_disabled() {
        let m = m2(FragmentStrategy::Full);
        let g = m.step(&m.initial_state(), &Transition::Issue).unwrap();
        let cap = g.client.iter().next().unwrap().clone();
        let g = m.step(&g, &Transition::Request(1, cap.clone())).unwrap();
        let g = m.step(&g, &Transition::Request(0, g.client.iter().last().unwrap().clone())).unwrap();
        assert_eq!(m.step(&g, &Transition::Request(0, cap)), Err(Disabled));
    }

    #[test]
    fn flush_applies_history() {
        let m = m2(FragmentStrategy::Full);
        let g = m.step(&m.initial_state(), &Transition::Issue).unwrap();
        let cap = g.client.iter().next().unwrap().clone();
        let g = m.step(&g, &Transition::Request(1, cap)).unwrap();
        let f = m.step(&g, &Transition::Flush).unwrap();
        assert_eq!((f.t_as, f.t_rs, f.q_as), (g.clock, g.clock, 1));
        assert_eq!(f.e_rs, ModelExc::nil(g.e_rs.ts_last()));
        assert_eq!(m.effective_state(&f), m.effective_state(&g));
    }

    #[test]
    fn minimal_fragment_hands_out_update() {
        let m = m2(FragmentStrategy::Minimal);
        let g = m.step(&m.initial_state(), &Transition::Issue).unwrap();
        let cap = g.client.iter().next().unwrap().clone();
        let g = m.step(&g, &Transition::Request(1, cap)).unwrap();
        let upd = ModelTicket::Upd(g.e_rs.clone());
        assert!(g.client.contains(&upd));
        let u = m.step(&g, &Transition::Update(upd.clone())).unwrap();
        assert_eq!((u.q_as, u.t_as), (1, g.clock));
        assert_eq!(m.step(&u, &Transition::Update(upd)), Err(Disabled));
    }
}
