//! Drives the real servers along random model walks and compares outcomes.
//!
//! The deployment runs in core mode over the loopback transport with a
//! manual clock that is set to the model clock before each step, so real
//! timestamps equal model timestamps.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::clock::ScriptedClock;
use crate::model::{Model, ModelExc, ModelTicket, ProtocolState, Transition};
use crate::policy::{Mode, PolicyTable};
use crate::resource::GcConfig;
use crate::sa::{ExceptionList, SecurityAutomaton, Timestamp};
use crate::service::{Client, Deployment};
use crate::ticket::{Capability, Ticket};
use crate::transport::LoopbackNet;

const UID: &str = "walker";

/// What one step did, from the client's point of view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Granted,
    Denied,
    /// Recovery: whether the client gained a ticket it did not hold.
    Recovered(bool),
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub transition: String,
    pub outcome: Outcome,
}

#[derive(Debug, thiserror::Error)]
#[error("step {step} ({transition}): {detail}")]
pub struct Mismatch {
    pub step: usize,
    pub transition: String,
    pub detail: String,
}

/// A model state paired with a live deployment.
pub struct Replay<'m> {
    model: &'m Model,
    state: ProtocolState,
    deployment: Deployment,
    clock: ScriptedClock,
    client: Client,
    sessid: String,
    held: HashMap<ModelTicket, Ticket>,
    records: Vec<StepRecord>,
}

impl<'m> Replay<'m> {
    pub fn new(model: &'m Model, automaton: &SecurityAutomaton) -> Self {
        let mut table = PolicyTable::new();
        table.insert(UID, automaton.clone(), model.strategy());
        let clock = ScriptedClock::manual(1);
        let deployment = Deployment::new(
            Mode::Core,
            table,
            &["rs"],
            GcConfig { baton_compression: false, ..GcConfig::default() },
            Arc::new(clock.clone()),
            LoopbackNet::new(),
        );
        deployment.servers[0].raise_t_rs(Timestamp(1));
        let cap = deployment.auth.init_session_at(UID, Timestamp(1)).expect("policy installed");
        let client = deployment.client(UID);
        Replay {
            model,
            state: model.initial_state(),
            deployment,
            clock,
            client,
            sessid: cap.sessid,
            held: HashMap::new(),
            records: Vec::new(),
        }
    }

    pub fn state(&self) -> &ProtocolState {
        &self.state
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    fn model_ticket(&self, t: &Ticket) -> Result<ModelTicket, String> {
        match t {
            Ticket::Cap(c) => self.model_cap(c),
            Ticket::Upd(u) => Ok(ModelTicket::Upd(self.model_exc(&u.exc)?)),
        }
    }

    fn model_cap(&self, c: &Capability) -> Result<ModelTicket, String> {
        let frag = self.model.fragment_index(&c.frag).ok_or("capability carries an unknown fragment")?;
        Ok(ModelTicket::Cap { serial: c.serial.0 as u32, frag })
    }

    fn model_exc(&self, e: &ExceptionList) -> Result<ModelExc, String> {
        let entries = e
            .chronological()
            .iter()
            .map(|x| Ok((self.model.perm_index(&x.permission).ok_or("unknown permission")?, x.at.0 as u32)))
            .collect::<Result<Vec<_>, String>>()?;
        Ok(ModelExc { base: e.base().0 as u32, entries })
    }

    /// Takes `l` in both the model and the deployment and compares the
    /// outcome and the resulting states.
    pub fn step(&mut self, l: &Transition) -> Result<Outcome, Mismatch> {
        let step = self.records.len();
        let name = self.model.describe(l);
        let fail = |detail: String| Mismatch { step, transition: name.clone(), detail };
        let next = self.model.step(&self.state, l).ok();
        self.clock.set(Timestamp(self.state.clock as u64));
        let rs = self.deployment.servers[0].clone();

        let mut gained = Vec::new();
        let (model_out, real_out) = match l {
            Transition::Issue => {
                let cap = self.client.reissue(&self.sessid).map_err(|d| fail(format!("reissue denied: {d}")))?;
                gained.push(Ticket::Cap(cap));
                (Outcome::Done, Outcome::Done)
            }
            Transition::Flush => {
                rs.run_gc_at(Timestamp(self.state.clock as u64)).map_err(|d| fail(format!("gc failed: {d}")))?;
                (Outcome::Done, Outcome::Done)
            }
            Transition::Drop(ts) => {
                for t in ts {
                    self.held.remove(t);
                }
                (Outcome::Done, Outcome::Done)
            }
            Transition::Request(p, tic) => {
                let real = match self.held.get(tic) {
                    Some(Ticket::Cap(c)) => match self.client.access(self.model.permission(*p), c) {
                        Ok(ts) => {
                            gained.extend(ts);
                            Outcome::Granted
                        }
                        Err(_) => Outcome::Denied,
                    },
                    _ => Outcome::Denied,
                };
                (if next.is_some() { Outcome::Granted } else { Outcome::Denied }, real)
            }
            Transition::Update(tic) => {
                let real = match self.held.get(tic) {
                    Some(Ticket::Upd(u)) => match self.client.update(u) {
                        Ok(_) => Outcome::Granted,
                        Err(_) => Outcome::Denied,
                    },
                    _ => Outcome::Denied,
                };
                (if next.is_some() { Outcome::Granted } else { Outcome::Denied }, real)
            }
            Transition::Recover(tic) => {
                let real = match self.held.get(tic) {
                    Some(Ticket::Cap(c)) => match self.client.recover(c) {
                        Ok(t) => {
                            let new = !self.held.values().any(|h| *h == t);
                            gained.push(t);
                            Outcome::Recovered(new)
                        }
                        Err(_) => Outcome::Recovered(false),
                    },
                    _ => Outcome::Recovered(false),
                };
                let grew = next.as_ref().is_some_and(|n| n.client.len() > self.state.client.len());
                (Outcome::Recovered(grew), real)
            }
        };
        if model_out != real_out {
            return Err(fail(format!("model {model_out:?}, servers {real_out:?}")));
        }
        for t in gained {
            let m = self.model_ticket(&t).map_err(fail)?;
            self.held.insert(m, t);
        }
        if let Some(n) = next {
            self.state = n;
        }
        self.compare().map_err(fail)?;
        self.records.push(StepRecord { transition: name, outcome: model_out.clone() });
        Ok(model_out)
    }

    fn compare(&self) -> Result<(), String> {
        let g = &self.state;
        let held: BTreeSet<_> = self.held.keys().cloned().collect();
        if held != g.client {
            return Err(format!("client tickets differ: servers {held:?}, model {:?}", g.client));
        }
        let view = self.deployment.auth.session_view(&self.sessid).ok_or("session vanished")?;
        let q = self.model.state_index(&view.state).ok_or("unknown state")?;
        if (q, view.serial.0 as u32) != (g.q_as, g.t_as) {
            return Err(format!(
                "authorization server at ({}, {}), model at ({}, {})",
                view.state,
                view.serial,
                self.model.state(g.q_as),
                g.t_as
            ));
        }
        let rs = &self.deployment.servers[0];
        if rs.t_rs().0 as u32 != g.t_rs {
            return Err(format!("t_rs {} vs model {}", rs.t_rs(), g.t_rs));
        }
        if let Some(e) = rs.exception(&self.sessid) {
            let e = self.model_exc(&e)?;
            if e != g.e_rs {
                return Err(format!("exception {} vs model {}", self.model.describe_exc(&e), self.model.describe_exc(&g.e_rs)));
            }
        } else if !(g.e_rs.is_nil() && g.e_rs.base < g.t_rs.max(1)) {
            return Err(format!("no exception at the server, model has {}", self.model.describe_exc(&g.e_rs)));
        }
        Ok(())
    }
}

/// Takes `len` uniformly chosen candidate transitions (enabled or not) and
/// checks every step against the servers.
pub fn random_walk<R: Rng>(
    model: &Model,
    automaton: &SecurityAutomaton,
    len: usize,
    rng: &mut R,
) -> Result<Vec<StepRecord>, Mismatch> {
    let mut replay = Replay::new(model, automaton);
    for _ in 0..len {
        let candidates = model.candidate_transitions(replay.state());
        let l = candidates.choose(rng).expect("issue is always a candidate").clone();
        replay.step(&l)?;
    }
    Ok(replay.records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::sa::FragmentStrategy;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn walks_agree_on_fixed_policies() {
        let mut rng = StdRng::seed_from_u64(7);
        for sa in [catalog::complete(2), catalog::door_chain(), catalog::workflow()] {
            for s in [FragmentStrategy::Full, FragmentStrategy::Minimal, FragmentStrategy::Radius(1)] {
                let model = Model::new(&sa, s).unwrap();
                let mut outcomes = Vec::new();
                for _ in 0..10 {
                    outcomes.extend(random_walk(&model, &sa, 40, &mut rng).unwrap().into_iter().map(|r| r.outcome));
                }
                assert!(outcomes.contains(&Outcome::Granted));
                assert!(outcomes.contains(&Outcome::Denied));
            }
        }
    }

    #[test]
    fn corrupted_model_disagrees() {
        let sa = catalog::complete(2);
        let model = Model::new(&sa, FragmentStrategy::Full).unwrap().with_mutation(crate::model::Mutation::SkipReqtAppend);
        let mut rng = StdRng::seed_from_u64(3);
        let caught = (0..50).any(|_| random_walk(&model, &sa, 40, &mut rng).is_err());
        assert!(caught);
    }
}
