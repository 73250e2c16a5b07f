use super::{Model, ModelTicket, ProtocolState, Run, Transition};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LivenessError {
    #[error("witness step {0} is disabled")]
    Disabled(String),
    #[error("witness ends without a usable capability")]
    NoUsableCapability,
    #[error("recovery produced neither a capability nor an update request")]
    RecoveryFailed,
}

impl Model {
    /// A flush-free, drop-free sequence after which the client holds a
    /// capability the resource server would accept. Returns the sequence and
    /// the state it reaches.
    pub fn liveness_witness(&self, g: &ProtocolState) -> Result<(Vec<Transition>, ProtocolState), LivenessError> {
        let mut trace = Vec::new();
        let mut cur = g.clone();
        let mut run = |l: Transition, cur: &mut ProtocolState| -> Result<(), LivenessError> {
            *cur = self.step(cur, &l).map_err(|_| LivenessError::Disabled(self.describe(&l)))?;
            trace.push(l);
            Ok(())
        };
        if g.e_rs.ts_last() < g.t_as {
            run(Transition::Issue, &mut cur)?;
        } else {
            let base = self.base_fragment(cur.q_as);
            let issued = ModelTicket::Cap { serial: cur.t_as, frag: base };
            let recovered = self.run_after(base, cur.t_as, &cur.e_rs);
            let e_rs = cur.e_rs.clone();
            run(Transition::Issue, &mut cur)?;
            run(Transition::Recover(issued), &mut cur)?;
            match recovered {
                Some(Run::Frag(_)) => {}
                Some(Run::Unknown) => {
                    run(Transition::Update(ModelTicket::Upd(e_rs)), &mut cur)?;
                    run(Transition::Issue, &mut cur)?;
                }
                _ => return Err(LivenessError::RecoveryFailed),
            }
        }
        let usable = cur.client.iter().any(|t| {
            matches!(t, ModelTicket::Cap { serial, .. } if *serial >= cur.t_rs && *serial >= cur.e_rs.ts_last())
        });
        if !usable {
            return Err(LivenessError::NoUsableCapability);
        }
        debug_assert!(trace.iter().all(|l| !matches!(l, Transition::Flush | Transition::Drop(_))));
        Ok((trace, cur))
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::catalog;
    use crate::sa::FragmentStrategy;

    fn after_reqt(strategy: FragmentStrategy) -> (Model, ProtocolState) {
        let m = Model::new(&catalog::complete(2), strategy).unwrap();
        let g = m.step(&m.initial_state(), &Transition::Issue).unwrap();
        let cap = g.client.iter().next().unwrap().clone();
        let g = m.step(&g, &Transition::Request(1, cap)).unwrap();
        (m, g)
    }

    #[test]
    fn initial_needs_one_issue() {
        let m = Model::new(&catalog::complete(2), FragmentStrategy::Full).unwrap();
        let (w, _) = m.liveness_witness(&m.initial_state()).unwrap();
        assert_eq!(w, vec![Transition::Issue]);
    }

    #[test]
    fn full_fragment_recovers_capability() {
        let (m, g) = after_reqt(FragmentStrategy::Full);
        let (w, _) = m.liveness_witness(&g).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0], Transition::Issue);
        assert!(matches!(w[1], Transition::Recover(_)));
    }

    #[test]
    fn minimal_fragment_goes_through_update() {
        let (m, g) = after_reqt(FragmentStrategy::Minimal);
        let (w, _) = m.liveness_witness(&g).unwrap();
        assert_eq!(w.len(), 4);
        assert!(matches!(w[2], Transition::Update(_)));
        assert_eq!(w[3], Transition::Issue);
    }
}
