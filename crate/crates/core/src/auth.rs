//! The authorization server: sessions, update requests, garbage-collection
//! ingestion, reissue, and baton confirmation.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::denial::{Denial, DenyCode};
use crate::policy::{rs_of_state, Mode, Policy, PolicyTable};
use crate::sa::{ExceptionList, StateId, Timestamp};
use crate::ticket::{Capability, SharedKey, UpdateRequest};

/// Exceptions flushed by one resource server.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcPayload {
    pub rsid: String,
    pub gc_time: Timestamp,
    pub sessions: BTreeMap<String, GcEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcEntry {
    pub exc: ExceptionList,
    /// The sender keeps tracking the session (soft collection).
    pub baton: bool,
}

impl GcPayload {
    pub fn total_entries(&self) -> usize {
        self.sessions.values().map(|e| e.exc.len()).sum()
    }
}

/// Read-only view of one session, for inspection and tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionView {
    pub uid: String,
    pub state: StateId,
    pub serial: Timestamp,
    pub baton: bool,
}

#[derive(Debug)]
struct SessionRecord {
    uid: String,
    policy: Arc<Policy>,
    state: StateId,
    serial: Timestamp,
    baton: bool,
}

pub struct AuthServer {
    mode: Mode,
    policies: PolicyTable,
    keys: BTreeMap<String, SharedKey>,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionRecord>>>>,
    rng: Mutex<StdRng>,
}

impl AuthServer {
    /// `keys` maps resource-server ids to their shared keys; core mode uses
    /// the first one.
    pub fn new(mode: Mode, policies: PolicyTable, keys: Vec<SharedKey>, clock: Arc<dyn Clock>) -> Self {
        assert!(!keys.is_empty(), "authorization server needs at least one key");
        AuthServer {
            mode,
            policies,
            keys: keys.into_iter().map(|k| (k.key_id().to_owned(), k)).collect(),
            clock,
            sessions: Mutex::new(HashMap::new()),
            rng: Mutex::new(StdRng::from_entropy()),
        }
    }

    /// Makes session ids reproducible.
    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap() = StdRng::seed_from_u64(seed);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn first_key(&self) -> &SharedKey {
        self.keys.values().next().expect("at least one key")
    }

    /// The server that validates capabilities for `q`, with its key.
    fn validator(&self, policy: &Policy, q: &StateId) -> (Option<String>, &SharedKey) {
        match self.mode {
            Mode::Core => (None, self.first_key()),
            Mode::Multi => {
                let fallback = self.first_key().key_id();
                let rs = rs_of_state(&policy.automaton, q, fallback);
                let key = self.keys.get(rs).unwrap_or_else(|| self.first_key());
                (Some(key.key_id().to_owned()), key)
            }
        }
    }

    fn capability(&self, sessid: &str, rec: &SessionRecord) -> Capability {
        let (vid, key) = self.validator(&rec.policy, &rec.state);
        Capability::sign(key, rec.uid.clone(), vid, sessid, rec.serial, rec.policy.fragment(&rec.state).clone())
    }

    fn session(&self, sessid: &str) -> Result<Arc<Mutex<SessionRecord>>, Denial> {
        self.sessions
            .lock()
            .unwrap()
            .get(sessid)
            .cloned()
            .ok_or_else(|| Denial::new(DenyCode::UnknownSession, format!("no session {sessid}")))
    }

    pub fn init_session(&self, uid: &str) -> Result<Capability, Denial> {
        self.init_session_at(uid, self.clock.next())
    }

    pub fn init_session_at(&self, uid: &str, now: Timestamp) -> Result<Capability, Denial> {
        let policy = self
            .policies
            .get(uid)
            .ok_or_else(|| Denial::new(DenyCode::UnknownUser, format!("no policy for {uid}")))?
            .clone();
        let mut id = [0u8; 16];
        self.rng.lock().unwrap().fill_bytes(&mut id);
        let sessid = hex::encode(id);
        let rec = SessionRecord {
            uid: uid.to_owned(),
            state: policy.automaton.initial().clone(),
            policy,
            serial: now,
            baton: false,
        };
        let cap = self.capability(&sessid, &rec);
        self.sessions.lock().unwrap().insert(sessid, Arc::new(Mutex::new(rec)));
        Ok(cap)
    }

    pub fn process_update(&self, uid: &str, upd: &UpdateRequest) -> Result<Capability, Denial> {
        let session = self.session(&upd.sessid)?;
        let mut rec = session.lock().unwrap();
        if rec.uid != uid {
            return Err(Denial::new(DenyCode::UnknownSession, "session belongs to another user"));
        }
        let key = match self.mode {
            Mode::Core => self.first_key(),
            Mode::Multi => upd
                .rsid
                .as_ref()
                .and_then(|r| self.keys.get(r))
                .ok_or_else(|| Denial::new(DenyCode::BadTag, "update request names no known server"))?,
        };
        if !upd.verify(key, uid) {
            return Err(Denial::new(DenyCode::BadTag, "update request tag does not verify"));
        }
        if upd.exc.ts_first() != rec.serial {
            return Err(Denial::new(
                DenyCode::UpdateMismatch,
                format!("update starts at {}, session serial is {}", upd.exc.ts_first(), rec.serial),
            ));
        }
        let next = rec
            .policy
            .automaton
            .run(&rec.state, &upd.exc)
            .ok()
            .flatten()
            .ok_or_else(|| {
                log::error!("session {}: update history is not a run of the policy", upd.sessid);
                Denial::new(DenyCode::PolicyViolation, "history is not permitted by the policy")
            })?;
        rec.state = next;
        rec.serial = self.clock.next().max(rec.serial.next());
        Ok(self.capability(&upd.sessid, &rec))
    }

    pub fn ingest_gc(&self, payload: &GcPayload) {
        let sessions: Vec<_> = self.sessions.lock().unwrap().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for id in payload.sessions.keys() {
            if !sessions.iter().any(|(s, _)| s == id) {
                log::warn!("gc from {}: unknown session {id}", payload.rsid);
            }
        }
        for (id, session) in sessions {
            let mut rec = session.lock().unwrap();
            let Some(entry) = payload.sessions.get(&id) else {
                // In core mode the single resource server just raised its
                // minimum serial, so every session must move past it.
                if self.mode == Mode::Core {
                    rec.serial = rec.serial.max(payload.gc_time);
                }
                continue;
            };
            let matched = entry.exc.ts_first() == rec.serial;
            if matched {
                match rec.policy.automaton.run(&rec.state, &entry.exc) {
                    Ok(Some(q)) => rec.state = q,
                    _ => log::error!("gc from {}: session {id} history is not a run of the policy", payload.rsid),
                }
            }
            match self.mode {
                Mode::Core => rec.serial = rec.serial.max(payload.gc_time),
                Mode::Multi => {
                    if matched {
                        let serial = if entry.baton { entry.exc.ts_last() } else { payload.gc_time };
                        rec.serial = rec.serial.max(serial);
                    }
                    rec.baton = entry.baton;
                }
            }
        }
    }

    pub fn reissue(&self, uid: &str, sessid: &str) -> Result<Capability, Denial> {
        let session = self.session(sessid)?;
        let rec = session.lock().unwrap();
        if rec.uid != uid {
            return Err(Denial::new(DenyCode::UnknownSession, "session belongs to another user"));
        }
        Ok(self.capability(sessid, &rec))
    }

    /// Grants the baton iff no server holds it and `serial` is current.
    pub fn confirm_baton(&self, sessid: &str, serial: Timestamp) -> bool {
        let Ok(session) = self.session(sessid) else {
            return false;
        };
        let mut rec = session.lock().unwrap();
        if !rec.baton && rec.serial == serial {
            rec.baton = true;
            true
        } else {
            false
        }
    }

    pub fn session_view(&self, sessid: &str) -> Option<SessionView> {
        let session = self.session(sessid).ok()?;
        let rec = session.lock().unwrap();
        Some(SessionView { uid: rec.uid.clone(), state: rec.state.clone(), serial: rec.serial, baton: rec.baton })
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }
}
