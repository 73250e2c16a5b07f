//! The resource server: access mediation, exception tracking, ticket
//! recovery, garbage collection, and baton passing between servers.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::auth::{AuthServer, GcEntry, GcPayload};
use crate::clock::Clock;
use crate::denial::{Denial, DenyCode};
use crate::policy::{rs_of, Mode};
use crate::sa::{compress_exception, ExceptionList, FragOutcome, Name, Permission, SAFragment, Timestamp};
use crate::ticket::{Capability, SharedKey, Ticket, UpdateRequest};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcConfig {
    /// How often a serving loop runs collection.
    pub interval: Duration,
    /// Collect once the total number of exception entries exceeds this.
    pub size_threshold: usize,
    /// Collect once any single session's exception exceeds this.
    pub length_threshold: usize,
    /// Sessions idle longer than this many clock units lose their baton.
    pub hard_gc_inactivity: u64,
    pub baton_compression: bool,
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig {
            interval: Duration::from_secs(60),
            size_threshold: 10_000,
            length_threshold: 1_000,
            hard_gc_inactivity: 3_600_000,
            baton_compression: false,
        }
    }
}

/// What the resource server asks of the authorization server.
pub trait AuthLink: Send + Sync {
    fn confirm_baton(&self, sessid: &str, serial: Timestamp) -> Result<bool, Denial>;
    fn submit_gc(&self, payload: &GcPayload) -> Result<(), Denial>;
}

impl AuthLink for AuthServer {
    fn confirm_baton(&self, sessid: &str, serial: Timestamp) -> Result<bool, Denial> {
        Ok(AuthServer::confirm_baton(self, sessid, serial))
    }

    fn submit_gc(&self, payload: &GcPayload) -> Result<(), Denial> {
        self.ingest_gc(payload);
        Ok(())
    }
}

impl<T: AuthLink + ?Sized> AuthLink for Arc<T> {
    fn confirm_baton(&self, sessid: &str, serial: Timestamp) -> Result<bool, Denial> {
        (**self).confirm_baton(sessid, serial)
    }

    fn submit_gc(&self, payload: &GcPayload) -> Result<(), Denial> {
        (**self).submit_gc(payload)
    }
}

/// An exception list handed from the validator to the requesting server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatonTransfer {
    pub sessid: String,
    pub exception: ExceptionList,
    /// Fragment name at the exception's base, when known.
    pub anchor: Option<Name>,
    /// Fragment name after the last entry, when known.
    pub head: Option<Name>,
}

/// What one resource server asks of another.
pub trait PeerLink: Send + Sync {
    /// Runs capability validation at the peer; on success the peer has
    /// already delivered the baton to `requester`.
    fn remote_validate(&self, requester: &str, uid: &str, cap: &Capability) -> Result<(), Denial>;
    fn baton_transfer(&self, transfer: BatonTransfer) -> Result<(), Denial>;
}

struct InProcessPeer(Weak<ResourceServer>);

impl PeerLink for InProcessPeer {
    fn remote_validate(&self, requester: &str, uid: &str, cap: &Capability) -> Result<(), Denial> {
        self.0
            .upgrade()
            .ok_or_else(|| Denial::new(DenyCode::Transport, "peer is gone"))?
            .remote_validate(requester, uid, cap)
    }

    fn baton_transfer(&self, transfer: BatonTransfer) -> Result<(), Denial> {
        self.0
            .upgrade()
            .ok_or_else(|| Denial::new(DenyCode::Transport, "peer is gone"))?
            .receive_baton(transfer);
        Ok(())
    }
}

/// Wires every server to every other one in-process.
pub fn connect_in_process(servers: &[Arc<ResourceServer>]) {
    for a in servers {
        for b in servers {
            if !Arc::ptr_eq(a, b) {
                a.add_peer(b.rsid(), Arc::new(InProcessPeer(Arc::downgrade(b))));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessRecord {
    pub uid: String,
    pub permission: Permission,
    pub at: Timestamp,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RsStats {
    pub granted: u64,
    pub denied: u64,
    pub remote_validations: u64,
    pub baton_confirmations: u64,
    /// Entry counts of every baton this server sent.
    pub batons_sent: Vec<usize>,
    pub gc_runs: u64,
}

#[derive(Clone, Debug)]
struct SessionEntry {
    exc: ExceptionList,
    anchor: Option<Name>,
    head: Option<Name>,
    last_active: Timestamp,
}

impl SessionEntry {
    fn reset(serial: Timestamp, at: &Name, now: Timestamp) -> Self {
        SessionEntry {
            exc: ExceptionList::nil(serial),
            anchor: Some(at.clone()),
            head: Some(at.clone()),
            last_active: now,
        }
    }
}

struct Inner {
    t_rs: Timestamp,
    sessions: HashMap<String, Arc<Mutex<Option<SessionEntry>>>>,
}

pub struct ResourceServer {
    rsid: String,
    mode: Mode,
    key: SharedKey,
    gc: GcConfig,
    clock: Arc<dyn Clock>,
    auth: Arc<dyn AuthLink>,
    peers: RwLock<HashMap<String, Arc<dyn PeerLink>>>,
    inner: RwLock<Inner>,
    log: Mutex<VecDeque<AccessRecord>>,
    stats: Mutex<RsStats>,
}

const ACCESS_LOG_CAP: usize = 10_000;

/// Result of a granted request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grant {
    pub tickets: Vec<Ticket>,
}

impl ResourceServer {
    pub fn new(
        rsid: impl Into<String>,
        mode: Mode,
        key: SharedKey,
        gc: GcConfig,
        clock: Arc<dyn Clock>,
        auth: Arc<dyn AuthLink>,
    ) -> Self {
        ResourceServer {
            rsid: rsid.into(),
            mode,
            key,
            gc,
            clock,
            auth,
            peers: RwLock::new(HashMap::new()),
            inner: RwLock::new(Inner { t_rs: Timestamp::ZERO, sessions: HashMap::new() }),
            log: Mutex::new(VecDeque::new()),
            stats: Mutex::new(RsStats::default()),
        }
    }

    /// Sets the minimum valid serial, as after a collection at `t`.
    pub fn with_t_rs(self, t: Timestamp) -> Self {
        self.raise_t_rs(t);
        self
    }

    /// Raises the minimum valid serial to at least `t`.
    pub fn raise_t_rs(&self, t: Timestamp) {
        let mut inner = self.inner.write().unwrap();
        inner.t_rs = inner.t_rs.max(t);
    }

    pub fn rsid(&self) -> &str {
        &self.rsid
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn gc_config(&self) -> &GcConfig {
        &self.gc
    }

    pub fn add_peer(&self, rsid: impl Into<String>, link: Arc<dyn PeerLink>) {
        self.peers.write().unwrap().insert(rsid.into(), link);
    }

    pub fn t_rs(&self) -> Timestamp {
        self.inner.read().unwrap().t_rs
    }

    /// The session's exception list, if this server tracks it.
    pub fn exception(&self, sessid: &str) -> Option<ExceptionList> {
        let inner = self.inner.read().unwrap();
        let slot = inner.sessions.get(sessid)?;
        let entry = slot.lock().unwrap();
        entry.as_ref().map(|e| e.exc.clone())
    }

    pub fn holds_baton(&self, sessid: &str) -> bool {
        self.exception(sessid).is_some()
    }

    /// Total exception entries over all sessions.
    pub fn total_entries(&self) -> usize {
        let inner = self.inner.read().unwrap();
        inner.sessions.values().filter_map(|s| s.lock().unwrap().as_ref().map(|e| e.exc.len())).sum()
    }

    pub fn stats(&self) -> RsStats {
        self.stats.lock().unwrap().clone()
    }

    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.log.lock().unwrap().iter().cloned().collect()
    }

    fn exercise(&self, uid: &str, p: &Permission, at: Timestamp) {
        let mut log = self.log.lock().unwrap();
        if log.len() == ACCESS_LOG_CAP {
            log.pop_front();
        }
        log.push_back(AccessRecord { uid: uid.to_owned(), permission: p.clone(), at });
    }

    fn tally<T>(&self, r: Result<T, Denial>) -> Result<T, Denial> {
        let mut stats = self.stats.lock().unwrap();
        match &r {
            Ok(_) => stats.granted += 1,
            Err(_) => stats.denied += 1,
        }
        r
    }

    fn vid(&self) -> Option<String> {
        match self.mode {
            Mode::Core => None,
            Mode::Multi => Some(self.rsid.clone()),
        }
    }

    /// Handles an access request in the configured mode.
    pub fn authorize(&self, uid: &str, p: &Permission, cap: &Capability) -> Result<Grant, Denial> {
        let r = match self.mode {
            Mode::Core => self.authorize_core(uid, p, cap),
            Mode::Multi => self.authorize_multi(uid, p, cap),
        };
        self.tally(r)
    }

    fn authorize_core(&self, uid: &str, p: &Permission, cap: &Capability) -> Result<Grant, Denial> {
        if !cap.verify(&self.key, uid) {
            return Err(Denial::new(DenyCode::BadTag, "capability tag does not verify"));
        }
        self.with_session(&cap.sessid, |t_rs, entry| {
            if cap.serial < t_rs {
                return Err(Denial::new(DenyCode::Expired, format!("serial {} < {t_rs}", cap.serial)));
            }
            let now = self.clock.next();
            // `transition` only changes the entry once the request is granted.
            let tickets = match entry.as_mut() {
                Some(e) if cap.serial < e.exc.ts_last() => {
                    return Err(Denial::new(
                        DenyCode::StaleSerial,
                        format!("serial {} < last transition {}", cap.serial, e.exc.ts_last()),
                    ))
                }
                Some(e) if cap.serial == e.exc.ts_last() => self.transition(uid, p, cap, e, now)?,
                _ => {
                    let mut fresh = SessionEntry::reset(cap.serial, cap.frag.current(), now);
                    let tickets = self.transition(uid, p, cap, &mut fresh, now)?;
                    *entry = Some(fresh);
                    tickets
                }
            };
            Ok(Grant { tickets })
        })
    }

    /// Runs `f` on the session's slot while holding the shared side of the
    /// collection lock, creating the slot if needed.
    fn with_session<T>(&self, sessid: &str, f: impl FnOnce(Timestamp, &mut Option<SessionEntry>) -> T) -> T {
        loop {
            {
                let inner = self.inner.read().unwrap();
                if let Some(slot) = inner.sessions.get(sessid) {
                    let mut entry = slot.lock().unwrap();
                    return f(inner.t_rs, &mut entry);
                }
            }
            self.inner.write().unwrap().sessions.entry(sessid.to_owned()).or_default();
        }
    }

    /// The stationary/transitioning section shared by both modes.
    fn transition(
        &self,
        uid: &str,
        p: &Permission,
        cap: &Capability,
        entry: &mut SessionEntry,
        now: Timestamp,
    ) -> Result<Vec<Ticket>, Denial> {
        let def = cap.frag.current_def();
        let stationary = def.stationary.contains(p);
        if !stationary && !def.trans.contains_key(p) {
            return Err(Denial::new(DenyCode::NotPermitted, format!("{p} is not permitted here")));
        }
        entry.last_active = entry.last_active.max(now);
        if stationary {
            self.exercise(uid, p, now);
            return Ok(Vec::new());
        }
        self.exercise(uid, p, now);
        let t = now.max(entry.exc.ts_last().next());
        entry.exc.push(p.clone(), t).expect("timestamp follows the last entry");
        entry.last_active = entry.last_active.max(t);
        let ticket = match cap.frag.step(p) {
            FragOutcome::Fragment(next) => {
                entry.head = Some(next.current().clone());
                Ticket::Cap(Capability::sign(&self.key, uid, self.vid(), cap.sessid.clone(), t, next))
            }
            _ => {
                entry.head = None;
                let upd = UpdateRequest::sign(&self.key, uid, self.vid(), cap.sessid.clone(), entry.exc.clone())
                    .expect("exception has at least one entry");
                Ticket::Upd(upd)
            }
        };
        if self.gc.baton_compression {
            maybe_compress(entry, &cap.frag);
        }
        Ok(vec![ticket])
    }

    fn authorize_multi(&self, uid: &str, p: &Permission, cap: &Capability) -> Result<Grant, Denial> {
        if rs_of(p) != self.rsid {
            return Err(Denial::new(DenyCode::WrongServer, format!("{p} is served by {}", rs_of(p))));
        }
        let vid = cap.vid.as_deref().unwrap_or("");
        if vid != self.rsid {
            let peer = self.peers.read().unwrap().get(vid).cloned();
            let peer = peer.ok_or_else(|| Denial::new(DenyCode::RemoteValidationFailed, format!("no peer {vid:?}")))?;
            self.stats.lock().unwrap().remote_validations += 1;
            peer.remote_validate(&self.rsid, uid, cap).map_err(|d| {
                Denial::new(DenyCode::RemoteValidationFailed, format!("validator {vid}: {d}"))
            })?;
        }
        let local = vid == self.rsid;
        self.with_session(&cap.sessid, |_, entry| {
            if local {
                self.validate_locked(uid, cap, entry)?;
            }
            self.transition_multi(uid, p, cap, entry)
        })
    }

    fn transition_multi(
        &self,
        uid: &str,
        p: &Permission,
        cap: &Capability,
        entry: &mut Option<SessionEntry>,
    ) -> Result<Grant, Denial> {
        let Some(e) = entry.as_mut() else {
            return Err(Denial::new(DenyCode::BatonUnconfirmed, "baton did not arrive"));
        };
        let now = self.clock.next();
        let tickets = self.transition(uid, p, cap, e, now)?;
        Ok(Grant { tickets })
    }

    /// Capability validation for a capability naming this server as
    /// validator. On success this server holds the session's baton.
    fn validate_locked(&self, uid: &str, cap: &Capability, entry: &mut Option<SessionEntry>) -> Result<(), Denial> {
        if !cap.verify(&self.key, uid) {
            return Err(Denial::new(DenyCode::BadTag, "capability tag does not verify"));
        }
        let now = self.clock.peek();
        match entry.as_mut() {
            None => {
                self.stats.lock().unwrap().baton_confirmations += 1;
                if !self.auth.confirm_baton(&cap.sessid, cap.serial)? {
                    return Err(Denial::new(
                        DenyCode::BatonUnconfirmed,
                        "baton is held elsewhere or the serial is not current",
                    ));
                }
                *entry = Some(SessionEntry::reset(cap.serial, cap.frag.current(), now));
            }
            Some(e) if cap.serial > e.exc.ts_last() => *e = SessionEntry::reset(cap.serial, cap.frag.current(), now),
            Some(e) if cap.serial < e.exc.ts_last() => {
                return Err(Denial::new(
                    DenyCode::StaleSerial,
                    format!("serial {} < last transition {}", cap.serial, e.exc.ts_last()),
                ))
            }
            Some(_) => {}
        }
        Ok(())
    }

    /// Validates on behalf of `requester` and hands it the baton.
    pub fn remote_validate(&self, requester: &str, uid: &str, cap: &Capability) -> Result<(), Denial> {
        if cap.vid.as_deref() != Some(self.rsid.as_str()) {
            return Err(Denial::new(DenyCode::WrongServer, "capability names another validator"));
        }
        let peer = self
            .peers
            .read()
            .unwrap()
            .get(requester)
            .cloned()
            .ok_or_else(|| Denial::new(DenyCode::Transport, format!("no peer {requester:?}")))?;
        let taken = self.with_session(&cap.sessid, |_, entry| {
            self.validate_locked(uid, cap, entry)?;
            Ok::<_, Denial>(entry.take().expect("validation leaves the session defined"))
        })?;
        let transfer = BatonTransfer {
            sessid: cap.sessid.clone(),
            exception: taken.exc,
            anchor: taken.anchor,
            head: taken.head,
        };
        self.stats.lock().unwrap().batons_sent.push(transfer.exception.len());
        peer.baton_transfer(transfer)
    }

    pub fn receive_baton(&self, t: BatonTransfer) {
        let now = self.clock.peek();
        self.with_session(&t.sessid.clone(), |_, entry| {
            *entry = Some(SessionEntry { exc: t.exception, anchor: t.anchor, head: t.head, last_active: now });
        });
    }

    /// Rebuilds the newest ticket from an older capability of the session.
    pub fn recover(&self, uid: &str, cap: &Capability) -> Result<Ticket, Denial> {
        if !cap.verify(&self.key, uid) {
            return Err(Denial::new(DenyCode::BadTag, "capability tag does not verify"));
        }
        let exc = self
            .exception(&cap.sessid)
            .filter(|e| e.contains_time(cap.serial))
            .ok_or_else(|| Denial::new(DenyCode::NotRecoverable, "serial is not in the session history"))?;
        match cap.frag.run_after(cap.serial, &exc) {
            Ok(FragOutcome::Fragment(f)) => Ok(Ticket::Cap(Capability::sign(
                &self.key,
                uid,
                self.vid(),
                cap.sessid.clone(),
                exc.ts_last(),
                f,
            ))),
            Ok(FragOutcome::Unknown) => Ok(Ticket::Upd(
                UpdateRequest::sign(&self.key, uid, self.vid(), cap.sessid.clone(), exc)
                    .map_err(|e| Denial::new(DenyCode::NotRecoverable, e.to_string()))?,
            )),
            _ => Err(Denial::new(DenyCode::NotRecoverable, "history does not follow from the capability")),
        }
    }

    /// True once a size or length threshold is exceeded.
    pub fn gc_due(&self) -> bool {
        let inner = self.inner.read().unwrap();
        let mut total = 0;
        for slot in inner.sessions.values() {
            if let Some(e) = slot.lock().unwrap().as_ref() {
                if e.exc.len() > self.gc.length_threshold {
                    return true;
                }
                total += e.exc.len();
            }
        }
        total > self.gc.size_threshold
    }

    /// Flushes exceptions to the authorization server at the current time.
    pub fn run_gc(&self) -> Result<GcPayload, Denial> {
        self.run_gc_at(self.clock.next())
    }

    /// Flushes exceptions to the authorization server at `now`. Local state
    /// changes only once the authorization server has accepted the payload.
    pub fn run_gc_at(&self, now: Timestamp) -> Result<GcPayload, Denial> {
        let mut inner = self.inner.write().unwrap();
        let mut payload = GcPayload { rsid: self.rsid.clone(), gc_time: now, sessions: BTreeMap::new() };
        let mut soft = Vec::new();
        for (id, slot) in &inner.sessions {
            let entry = slot.lock().unwrap();
            let Some(e) = entry.as_ref() else { continue };
            let retain = self.mode == Mode::Multi && now.0.saturating_sub(e.last_active.0) <= self.gc.hard_gc_inactivity;
            if retain {
                soft.push(id.clone());
            }
            payload.sessions.insert(id.clone(), GcEntry { exc: e.exc.clone(), baton: retain });
        }
        self.auth.submit_gc(&payload)?;
        inner.t_rs = inner.t_rs.max(now);
        for (id, slot) in inner.sessions.iter() {
            let mut entry = slot.lock().unwrap();
            if soft.contains(id) {
                if let Some(e) = entry.as_mut() {
                    let last = e.exc.ts_last();
                    e.exc = ExceptionList::nil(last);
                    e.anchor = e.head.clone();
                }
            } else {
                *entry = None;
            }
        }
        inner.sessions.retain(|_, s| s.lock().unwrap().is_some());
        self.stats.lock().unwrap().gc_runs += 1;
        Ok(payload)
    }
}

/// Loop-eliminates the session's exception once it outgrows the fragment.
fn maybe_compress(entry: &mut SessionEntry, cap_frag: &SAFragment) {
    if entry.exc.len() <= cap_frag.name_count() {
        return;
    }
    let Some(anchor) = entry.anchor.clone() else { return };
    let Ok(base) = SAFragment::from_shared(cap_frag.shared_defs().clone(), anchor) else { return };
    match compress_exception(&entry.exc, &base) {
        Ok(c) => entry.exc = c,
        Err(e) => log::warn!("compression skipped: {e}"),
    }
}
