use serde::Serialize;

use super::{Model, ModelError, ModelTicket, ProtocolState, Run, StateIx};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Invariant {
    /// The clock exceeds every timestamp in the state.
    Inv1,
    /// Exception timestamps strictly increase.
    Inv2,
    /// The server states agree (up to date, or lagging with a replayable history).
    Inv3,
    /// Capabilities while the authorization server is up to date.
    Inv4,
    /// Capabilities while the authorization server lags.
    Inv5,
    /// Update requests while the authorization server is up to date.
    Inv6,
    /// Update requests while the authorization server lags.
    Inv7,
}

impl Invariant {
    pub fn name(self) -> &'static str {
        match self {
            Invariant::Inv1 => "Inv1",
            Invariant::Inv2 => "Inv2",
            Invariant::Inv3 => "Inv3",
            Invariant::Inv4 => "Inv4",
            Invariant::Inv5 => "Inv5",
            Invariant::Inv6 => "Inv6",
            Invariant::Inv7 => "Inv7",
        }
    }
}

impl Model {
    /// Names of the violated invariants; empty when all hold.
    pub fn check_invariants(&self, g: &ProtocolState) -> Vec<Invariant> {
        let mut out = Vec::new();
        let e = &g.e_rs;

        let mut stamps = vec![g.t_as, g.t_rs];
        stamps.extend(e.times());
        for t in &g.client {
            match t {
                ModelTicket::Cap { serial, .. } => stamps.push(*serial),
                ModelTicket::Upd(x) => stamps.extend(x.times()),
            }
        }
        if stamps.iter().any(|&t| t >= g.clock) {
            out.push(Invariant::Inv1);
        }

        let increasing = e.times().zip(e.times().skip(1)).all(|(a, b)| a < b);
        if !increasing {
            out.push(Invariant::Inv2);
        }

        let base = self.base_fragment(g.q_as);
        let case_a = e.ts_last() < g.t_as;
        let lagging = e.ts_first() == g.t_as;
        let case_b = lagging && e.ts_first() >= g.t_rs && self.run(base, e) != Run::Undefined;
        let sub_i = e.is_nil() && e.base < g.t_rs && g.t_rs <= g.t_as;
        let sub_ii = e.ts_first() >= g.t_rs;
        if !((case_a && (sub_i || sub_ii)) || case_b) {
            out.push(Invariant::Inv3);
        }

        if case_a {
            let ok = g.client.iter().all(|t| match t {
                ModelTicket::Cap { serial, frag } => {
                    *serial < e.ts_last() || *serial < g.t_rs || (*serial == g.t_as && *frag == base)
                }
                ModelTicket::Upd(_) => true,
            });
            if !ok {
                out.push(Invariant::Inv4);
            }
        }

        if lagging {
            let ok = g.client.iter().all(|t| match t {
                ModelTicket::Cap { serial, frag } => {
                    *serial < e.ts_first() || self.run_upto(base, *serial, e) == Some(Run::Frag(*frag))
                }
                ModelTicket::Upd(_) => true,
            });
            if !ok {
                out.push(Invariant::Inv5);
            }
        }

        if case_a {
            let ok = g.client.iter().all(|t| match t {
                ModelTicket::Upd(x) => g.t_as > x.ts_last(),
                ModelTicket::Cap { .. } => true,
            });
            if !ok {
                out.push(Invariant::Inv6);
            }
        }

        if lagging {
            let ok = g.client.iter().all(|t| match t {
                ModelTicket::Upd(x) => x.ts_last() < e.ts_first() || (x == e && self.run(base, e) == Run::Unknown),
                ModelTicket::Cap { .. } => true,
            });
            if !ok {
                out.push(Invariant::Inv7);
            }
        }
        out
    }

    /// The automaton state the two servers jointly represent.
    pub fn effective_state(&self, g: &ProtocolState) -> Result<StateIx, ModelError> {
        let bad = self.check_invariants(g);
        if !bad.is_empty() {
            return Err(ModelError::Invariants(bad));
        }
        Ok(self.effective_unchecked(g).expect("invariants make the history replayable"))
    }

    /// Effective state without the invariant check; `None` if the history
    /// does not replay.
    pub(crate) fn effective_unchecked(&self, g: &ProtocolState) -> Option<StateIx> {
        if g.t_as > g.e_rs.ts_last() {
            Some(g.q_as)
        } else {
            self.delta_star(g.q_as, &g.e_rs)
        }
    }
}
