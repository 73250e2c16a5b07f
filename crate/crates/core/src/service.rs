//! Protocol messages, server endpoints, and the client, over any transport.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::auth::{AuthServer, GcPayload};
use crate::clock::Clock;
use crate::denial::{Denial, DenyCode};
use crate::policy::{rs_of, Mode, PolicyTable};
use crate::resource::{connect_in_process, AuthLink, BatonTransfer, GcConfig, PeerLink, ResourceServer};
use crate::sa::{Permission, Timestamp};
use crate::ticket::{Capability, SharedKey, Ticket, UpdateRequest};
use crate::transport::{
    Codec, Envelope, LoopbackNet, MsgType, Router, Transport, TransportError, UdpServer, UdpTransport,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessReq {
    pub perm: Permission,
    pub cap: Capability,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReissueReq {
    pub sessid: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatonConfirmReq {
    pub rsid: String,
    pub sessid: String,
    pub serial: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteValidateReq {
    pub requester: String,
    pub uid: String,
    pub cap: Capability,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Capability(Capability),
    Granted { tickets: Vec<Ticket> },
    Ticket(Ticket),
    Confirmed(bool),
    Ack,
    Denied(Denial),
}

fn transport_denial(e: TransportError) -> Denial {
    Denial::new(DenyCode::Transport, e.to_string())
}

fn answer<T: for<'de> Deserialize<'de>>(env: &Envelope, f: impl FnOnce(T) -> Reply) -> Envelope {
    match env.decode::<T>() {
        Ok(req) => env.reply(&f(req)),
        Err(e) => env.reply(&Reply::Denied(Denial::new(DenyCode::Malformed, e.to_string()))),
    }
}

fn or_denied<T>(r: Result<T, Denial>, ok: impl FnOnce(T) -> Reply) -> Reply {
    match r {
        Ok(v) => ok(v),
        Err(d) => Reply::Denied(d),
    }
}

/// Endpoints of the authorization server.
pub fn auth_router(auth: Arc<AuthServer>) -> Router {
    let a = auth.clone();
    let b = auth.clone();
    let c = auth.clone();
    let d = auth.clone();
    Router::new()
        .bind(MsgType::SessionInit, move |env| env.reply(&or_denied(a.init_session(&env.uid_assertion), Reply::Capability)))
        .bind(MsgType::UpdateSubmit, move |env| {
            answer(env, |upd: UpdateRequest| or_denied(b.process_update(&env.uid_assertion, &upd), Reply::Capability))
        })
        .bind(MsgType::Reissue, move |env| {
            answer(env, |r: ReissueReq| or_denied(c.reissue(&env.uid_assertion, &r.sessid), Reply::Capability))
        })
        .bind(MsgType::BatonConfirm, move |env| {
            answer(env, |r: BatonConfirmReq| Reply::Confirmed(AuthServer::confirm_baton(&d, &r.sessid, r.serial)))
        })
        .bind(MsgType::GcSubmit, move |env| {
            answer(env, |p: GcPayload| {
                auth.ingest_gc(&p);
                Reply::Ack
            })
        })
}

/// Endpoints of a resource server.
pub fn rs_router(rs: Arc<ResourceServer>) -> Router {
    let a = rs.clone();
    let b = rs.clone();
    let c = rs.clone();
    Router::new()
        .bind(MsgType::Access, move |env| {
            answer(env, |r: AccessReq| {
                or_denied(a.authorize(&env.uid_assertion, &r.perm, &r.cap), |g| Reply::Granted { tickets: g.tickets })
            })
        })
        .bind(MsgType::Recover, move |env| {
            answer(env, |cap: Capability| or_denied(b.recover(&env.uid_assertion, &cap), Reply::Ticket))
        })
        .bind(MsgType::RemoteValidate, move |env| {
            answer(env, |r: RemoteValidateReq| {
                or_denied(c.remote_validate(&r.requester, &r.uid, &r.cap), |()| Reply::Ack)
            })
        })
        .bind(MsgType::BatonTransfer, move |env| {
            answer(env, |t: BatonTransfer| {
                rs.receive_baton(t);
                Reply::Ack
            })
        })
}

fn call(net: &dyn Transport, addr: &str, env: Envelope) -> Result<Reply, Denial> {
    let out = net.request(addr, env).map_err(transport_denial)?;
    match out.decode::<Reply>() {
        Ok(Reply::Denied(d)) => Err(d),
        Ok(r) => Ok(r),
        Err(e) => Err(Denial::new(DenyCode::Malformed, e.to_string())),
    }
}

fn unexpected(r: Reply) -> Denial {
    Denial::new(DenyCode::Malformed, format!("unexpected reply {r:?}"))
}

/// The authorization server as reached by a resource server over a transport.
pub struct RemoteAuth {
    pub net: Arc<dyn Transport>,
    pub addr: String,
    pub rsid: String,
    pub codec: Codec,
}

impl AuthLink for RemoteAuth {
    fn confirm_baton(&self, sessid: &str, serial: Timestamp) -> Result<bool, Denial> {
        let req = BatonConfirmReq { rsid: self.rsid.clone(), sessid: sessid.to_owned(), serial };
        match call(&*self.net, &self.addr, Envelope::new(MsgType::BatonConfirm, self.codec, &self.rsid, &req))? {
            Reply::Confirmed(b) => Ok(b),
            r => Err(unexpected(r)),
        }
    }

    fn submit_gc(&self, payload: &GcPayload) -> Result<(), Denial> {
        match call(&*self.net, &self.addr, Envelope::new(MsgType::GcSubmit, self.codec, &self.rsid, payload))? {
            Reply::Ack => Ok(()),
            r => Err(unexpected(r)),
        }
    }
}

/// Another resource server as reached over a transport.
pub struct RemotePeer {
    pub net: Arc<dyn Transport>,
    pub addr: String,
    pub rsid: String,
    pub codec: Codec,
}

impl PeerLink for RemotePeer {
    fn remote_validate(&self, requester: &str, uid: &str, cap: &Capability) -> Result<(), Denial> {
        let req = RemoteValidateReq { requester: requester.to_owned(), uid: uid.to_owned(), cap: cap.clone() };
        match call(&*self.net, &self.addr, Envelope::new(MsgType::RemoteValidate, self.codec, &self.rsid, &req))? {
            Reply::Ack => Ok(()),
            r => Err(unexpected(r)),
        }
    }

    fn baton_transfer(&self, transfer: BatonTransfer) -> Result<(), Denial> {
        match call(&*self.net, &self.addr, Envelope::new(MsgType::BatonTransfer, self.codec, &self.rsid, &transfer))? {
            Reply::Ack => Ok(()),
            r => Err(unexpected(r)),
        }
    }
}

/// A client talking to the authorization server and resource servers.
pub struct Client {
    net: Arc<dyn Transport>,
    uid: String,
    codec: Codec,
    auth_addr: String,
    /// Resource-server id to address.
    rs_addrs: HashMap<String, String>,
}

impl Client {
    pub fn new(
        net: Arc<dyn Transport>,
        uid: impl Into<String>,
        codec: Codec,
        auth_addr: impl Into<String>,
        rs_addrs: HashMap<String, String>,
    ) -> Self {
        Client { net, uid: uid.into(), codec, auth_addr: auth_addr.into(), rs_addrs }
    }

    pub fn uid(&self) -> &str {
        &self.uid
    }

    fn rs_addr(&self, rsid: Option<&str>) -> Result<&str, Denial> {
        rsid.and_then(|r| self.rs_addrs.get(r))
            .or_else(|| if self.rs_addrs.len() == 1 { self.rs_addrs.values().next() } else { None })
            .map(String::as_str)
            .ok_or_else(|| Denial::new(DenyCode::Transport, format!("no address for server {rsid:?}")))
    }

    fn env<T: Serialize>(&self, t: MsgType, body: &T) -> Envelope {
        Envelope::new(t, self.codec, &self.uid, body)
    }

    pub fn init(&self) -> Result<Capability, Denial> {
        match call(&*self.net, &self.auth_addr, self.env(MsgType::SessionInit, &()))? {
            Reply::Capability(c) => Ok(c),
            r => Err(unexpected(r)),
        }
    }

    /// Requests `p`; the request goes to the server that mediates `p`.
    pub fn access(&self, p: &Permission, cap: &Capability) -> Result<Vec<Ticket>, Denial> {
        let addr = self.rs_addr(Some(rs_of(p)))?;
        let req = AccessReq { perm: p.clone(), cap: cap.clone() };
        match call(&*self.net, addr, self.env(MsgType::Access, &req))? {
            Reply::Granted { tickets } => Ok(tickets),
            r => Err(unexpected(r)),
        }
    }

    /// Size in bytes of the access request envelope body for `p` and `cap`.
    pub fn access_envelope(&self, p: &Permission, cap: &Capability) -> Envelope {
        self.env(MsgType::Access, &AccessReq { perm: p.clone(), cap: cap.clone() })
    }

    pub fn update(&self, upd: &UpdateRequest) -> Result<Capability, Denial> {
        match call(&*self.net, &self.auth_addr, self.env(MsgType::UpdateSubmit, upd))? {
            Reply::Capability(c) => Ok(c),
            r => Err(unexpected(r)),
        }
    }

    pub fn reissue(&self, sessid: &str) -> Result<Capability, Denial> {
        let req = ReissueReq { sessid: sessid.to_owned() };
        match call(&*self.net, &self.auth_addr, self.env(MsgType::Reissue, &req))? {
            Reply::Capability(c) => Ok(c),
            r => Err(unexpected(r)),
        }
    }

    /// Asks the capability's validator (or the only server) to rebuild the newest ticket.
    pub fn recover(&self, cap: &Capability) -> Result<Ticket, Denial> {
        let addr = self.rs_addr(cap.vid.as_deref())?;
        match call(&*self.net, addr, self.env(MsgType::Recover, cap))? {
            Reply::Ticket(t) => Ok(t),
            r => Err(unexpected(r)),
        }
    }
}

/// An authorization server and resource servers wired over a loopback network.
pub struct Deployment {
    pub net: Arc<LoopbackNet>,
    pub auth: Arc<AuthServer>,
    pub servers: Vec<Arc<ResourceServer>>,
    pub codec: Codec,
}

pub const AUTH_ADDR: &str = "auth";

/// Key for resource server `rsid`, derived from a fixed test secret.
pub fn demo_key(rsid: &str) -> SharedKey {
    use sha2::{Digest, Sha256};
    SharedKey::new(rsid, Sha256::digest(format!("hcap-demo-key/{rsid}")).into())
}

impl Deployment {
    /// `rsids` lists the resource servers; core mode takes exactly one.
    pub fn new(
        mode: Mode,
        policies: PolicyTable,
        rsids: &[&str],
        gc: GcConfig,
        clock: Arc<dyn Clock>,
        net: Arc<LoopbackNet>,
    ) -> Self {
        assert!(!rsids.is_empty(), "a deployment needs a resource server");
        assert!(mode == Mode::Multi || rsids.len() == 1, "core mode has a single resource server");
        let codec = Codec::Json;
        let keys: Vec<_> = rsids.iter().map(|r| demo_key(r)).collect();
        let auth = Arc::new(AuthServer::new(mode, policies, keys.clone(), clock.clone()));
        net.serve(AUTH_ADDR, auth_router(auth.clone()));
        let servers: Vec<_> = rsids
            .iter()
            .zip(keys)
            .map(|(rsid, key)| {
                let link = RemoteAuth { net: net.clone(), addr: AUTH_ADDR.into(), rsid: rsid.to_string(), codec };
                Arc::new(ResourceServer::new(*rsid, mode, key, gc.clone(), clock.clone(), Arc::new(link)))
            })
            .collect();
        for rs in &servers {
            net.serve(rs.rsid(), rs_router(rs.clone()));
            for peer in &servers {
                if !Arc::ptr_eq(rs, peer) {
                    rs.add_peer(
                        peer.rsid(),
                        Arc::new(RemotePeer { net: net.clone(), addr: peer.rsid().into(), rsid: rs.rsid().into(), codec }),
                    );
                }
            }
        }
        Deployment { net, auth, servers, codec }
    }

    /// Same servers, but wired directly without a transport.
    pub fn in_process(mode: Mode, policies: PolicyTable, rsids: &[&str], gc: GcConfig, clock: Arc<dyn Clock>) -> Self {
        let keys: Vec<_> = rsids.iter().map(|r| demo_key(r)).collect();
        let auth = Arc::new(AuthServer::new(mode, policies, keys.clone(), clock.clone()));
        let servers: Vec<_> = rsids
            .iter()
            .zip(keys)
            .map(|(rsid, key)| Arc::new(ResourceServer::new(*rsid, mode, key, gc.clone(), clock.clone(), auth.clone())))
            .collect();
        connect_in_process(&servers);
        Deployment { net: LoopbackNet::new(), auth, servers, codec: Codec::Json }
    }

    pub fn server(&self, rsid: &str) -> &Arc<ResourceServer> {
        self.servers.iter().find(|s| s.rsid() == rsid).expect("known resource server")
    }

    pub fn client(&self, uid: &str) -> Client {
        let addrs = self.servers.iter().map(|s| (s.rsid().to_owned(), s.rsid().to_owned())).collect();
        Client::new(self.net.clone(), uid, self.codec, AUTH_ADDR, addrs)
    }
}

impl Drop for Deployment {
    fn drop(&mut self) {
        self.net.shutdown();
    }
}

/// The same servers as [`Deployment`], each on its own UDP socket on the
/// loopback interface.
pub struct UdpDeployment {
    pub net: Arc<UdpTransport>,
    pub auth: Arc<AuthServer>,
    pub servers: Vec<Arc<ResourceServer>>,
    pub auth_addr: String,
    /// Resource-server id to socket address.
    pub rs_addrs: HashMap<String, String>,
    pub codec: Codec,
    /// Stop serving when dropped.
    _endpoints: Vec<UdpServer>,
}

impl UdpDeployment {
    pub fn new(
        mode: Mode,
        policies: PolicyTable,
        rsids: &[&str],
        gc: GcConfig,
        clock: Arc<dyn Clock>,
        mtu: usize,
    ) -> Result<Self, TransportError> {
        assert!(!rsids.is_empty(), "a deployment needs a resource server");
        assert!(mode == Mode::Multi || rsids.len() == 1, "core mode has a single resource server");
        let codec = Codec::Json;
        let net = Arc::new(UdpTransport::new(mtu, Duration::from_secs(5)));
        let keys: Vec<_> = rsids.iter().map(|r| demo_key(r)).collect();
        let auth = Arc::new(AuthServer::new(mode, policies, keys.clone(), clock.clone()));
        let auth_ep = UdpServer::bind("127.0.0.1:0", auth_router(auth.clone()), mtu)?;
        let auth_addr = auth_ep.local_addr().to_string();
        let mut endpoints = vec![auth_ep];
        let mut servers = Vec::new();
        let mut rs_addrs = HashMap::new();
        for (rsid, key) in rsids.iter().zip(keys) {
            let link = RemoteAuth { net: net.clone(), addr: auth_addr.clone(), rsid: rsid.to_string(), codec };
            let rs = Arc::new(ResourceServer::new(*rsid, mode, key, gc.clone(), clock.clone(), Arc::new(link)));
            let ep = UdpServer::bind("127.0.0.1:0", rs_router(rs.clone()), mtu)?;
            rs_addrs.insert(rsid.to_string(), ep.local_addr().to_string());
            endpoints.push(ep);
            servers.push(rs);
        }
        for rs in &servers {
            for peer in &servers {
                if !Arc::ptr_eq(rs, peer) {
                    let addr = rs_addrs[peer.rsid()].clone();
                    rs.add_peer(peer.rsid(), Arc::new(RemotePeer { net: net.clone(), addr, rsid: rs.rsid().into(), codec }));
                }
            }
        }
        Ok(UdpDeployment { net, auth, servers, auth_addr, rs_addrs, codec, _endpoints: endpoints })
    }

    pub fn server(&self, rsid: &str) -> &Arc<ResourceServer> {
        self.servers.iter().find(|s| s.rsid() == rsid).expect("known resource server")
    }

    pub fn client(&self, uid: &str) -> Client {
        Client::new(self.net.clone(), uid, self.codec, self.auth_addr.clone(), self.rs_addrs.clone())
    }
}
