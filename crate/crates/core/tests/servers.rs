use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hcap_core::auth::AuthServer;
use hcap_core::catalog::{self, complete_perm, complete_perm_on};
use hcap_core::clock::ScriptedClock;
use hcap_core::denial::DenyCode;
use hcap_core::policy::{Mode, PolicyTable};
use hcap_core::resource::{GcConfig, ResourceServer};
use hcap_core::sa::{build_fragment, FragmentStrategy, SecurityAutomaton, StateId};
use hcap_core::service::{auth_router, demo_key, rs_router, Client, Deployment, RemoteAuth, UdpDeployment};
use hcap_core::ticket::{Capability, Ticket};
use hcap_core::transport::frame::{self, DEFAULT_MTU};
use hcap_core::transport::{Codec, Envelope, LoopbackNet, MsgType, Router, Transport, UdpServer, UdpTransport};
use rand::rngs::StdRng;
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};

fn table(uid: &str, m: SecurityAutomaton, s: FragmentStrategy) -> PolicyTable {
    let mut t = PolicyTable::new();
    t.insert(uid, m, s);
    t
}

fn core(m: SecurityAutomaton, s: FragmentStrategy) -> Deployment {
    Deployment::new(
        Mode::Core,
        table("alice", m, s),
        &["rs"],
        GcConfig::default(),
        Arc::new(ScriptedClock::ticking(1)),
        LoopbackNet::new(),
    )
}

fn cap(ts: &[Ticket]) -> Capability {
    ts[0].as_cap().expect("a capability").clone()
}

#[test]
fn replayed_capability_is_stale() {
    let d = core(catalog::complete(2), FragmentStrategy::Full);
    let c = d.client("alice");
    let c0 = c.init().unwrap();
    let c1 = cap(&c.access(&complete_perm(1), &c0).unwrap());
    assert!(c1.serial > c0.serial);
    let denial = c.access(&complete_perm(0), &c0).unwrap_err();
    assert_eq!(denial.code, DenyCode::StaleSerial);
    assert!(c.access(&complete_perm(1), &c1).unwrap().is_empty());
}

#[test]
fn replay_at_second_server_needs_the_baton() {
    let d = Deployment::new(
        Mode::Multi,
        table("alice", catalog::complete_on(2, 2), FragmentStrategy::Full),
        &["rs0", "rs1"],
        GcConfig::default(),
        Arc::new(ScriptedClock::ticking(1)),
        LoopbackNet::new(),
    );
    let c = d.client("alice");
    let c0 = c.init().unwrap();
    assert_eq!(c0.vid.as_deref(), Some("rs0"));
    assert!(c.access(&complete_perm_on(0, 2), &c0).unwrap().is_empty());
    let c1 = cap(&c.access(&complete_perm_on(1, 2), &c0).unwrap());
    assert_eq!(c1.vid.as_deref(), Some("rs1"));
    assert!(d.server("rs1").holds_baton(&c0.sessid));
    assert!(!d.server("rs0").holds_baton(&c0.sessid));

    let before = d.server("rs0").stats().baton_confirmations;
    let denial = c.access(&complete_perm_on(0, 2), &c0).unwrap_err();
    assert_eq!(denial.code, DenyCode::BatonUnconfirmed);
    assert_eq!(d.server("rs0").stats().baton_confirmations, before + 1);
    assert!(d.server("rs1").holds_baton(&c0.sessid));
    // The current capability still works, moving the baton back.
    assert_eq!(c.access(&complete_perm_on(0, 2), &c1).unwrap().len(), 1);
}

/// One session's pre-collection snapshot.
struct Snapshot {
    uid: String,
    sessid: String,
    automaton: SecurityAutomaton,
    truth: StateId,
    caps: Vec<Capability>,
}

/// Drives a session with random requests, sometimes leaving update
/// requests unsubmitted, and tracks the true automaton state.
fn drive(c: &Client, m: &SecurityAutomaton, rng: &mut StdRng, steps: usize) -> (String, StateId, Vec<Capability>) {
    let mut cur = c.init().unwrap();
    let sessid = cur.sessid.clone();
    let mut truth = m.initial().clone();
    let mut caps = vec![cur.clone()];
    for _ in 0..steps {
        let p = m.alphabet().iter().choose(rng).unwrap().clone();
        let Ok(ts) = c.access(&p, &cur) else {
            assert!(m.step(&truth, &p).unwrap().is_none(), "{p} denied in {truth}");
            continue;
        };
        truth = m.step(&truth, &p).unwrap().expect("granted requests follow the automaton").clone();
        match ts.first() {
            Some(Ticket::Cap(next)) => cur = next.clone(),
            Some(Ticket::Upd(u)) if rng.gen_bool(0.5) => cur = c.update(u).unwrap(),
            Some(Ticket::Upd(_)) => break,
            None => {}
        }
        caps.push(cur.clone());
    }
    (sessid, truth, caps)
}

#[test]
fn collection_matches_automaton_run() {
    let mut rng = StdRng::seed_from_u64(11);
    let mut sessions = 0;
    while sessions < 100 {
        let mut policies = PolicyTable::new();
        let mut automata = Vec::new();
        for i in 0..10 {
            let m = catalog::random(&mut rng, 5, 4, 1);
            let s = [FragmentStrategy::Full, FragmentStrategy::Minimal, FragmentStrategy::Radius(1)][i % 3];
            policies.insert(format!("u{i}"), m.clone(), s);
            automata.push(m);
        }
        let clock = ScriptedClock::ticking(1);
        let d = Deployment::new(Mode::Core, policies, &["rs"], GcConfig::default(), Arc::new(clock.clone()), LoopbackNet::new());
        let mut snaps = Vec::new();
        for (i, m) in automata.into_iter().enumerate() {
            let uid = format!("u{i}");
            let steps = rng.gen_range(0..25);
            let (sessid, truth, caps) = drive(&d.client(&uid), &m, &mut rng, steps);
            snaps.push(Snapshot { uid, sessid, automaton: m, truth, caps });
        }
        let rs = d.server("rs");
        let expected: Vec<StateId> = snaps
            .iter()
            .map(|s| {
                let v = d.auth.session_view(&s.sessid).unwrap();
                match rs.exception(&s.sessid) {
                    Some(e) if e.ts_first() == v.serial => s.automaton.run(&v.state, &e).unwrap().unwrap(),
                    _ => v.state,
                }
            })
            .collect();
        let payload = rs.run_gc().unwrap();
        for (s, want) in snaps.iter().zip(expected) {
            let v = d.auth.session_view(&s.sessid).unwrap();
            assert_eq!(v.state, want);
            assert_eq!(v.state, s.truth);
            let client = d.client(&s.uid);
            for old in &s.caps {
                let p = s.automaton.alphabet().iter().next().unwrap();
                assert_eq!(client.access(p, old).unwrap_err().code, DenyCode::Expired);
            }
            let fresh = client.reissue(&s.sessid).unwrap();
            assert_eq!(fresh.serial, payload.gc_time);
            assert_eq!(fresh.frag.current(), &hcap_core::sa::state_name(&s.truth));
            sessions += 1;
        }
    }
}

/// Serves an authorization server and one resource server over UDP.
struct UdpRig {
    auth: UdpServer,
    rs: UdpServer,
    client: Client,
}

fn udp_rig(m: SecurityAutomaton, s: FragmentStrategy, mtu: usize) -> UdpRig {
    let clock: Arc<ScriptedClock> = Arc::new(ScriptedClock::ticking(1));
    let key = demo_key("rs");
    let auth = Arc::new(AuthServer::new(Mode::Core, table("alice", m, s), vec![key.clone()], clock.clone()));
    let auth_srv = UdpServer::bind("127.0.0.1:0", auth_router(auth), mtu).unwrap();
    let net: Arc<dyn Transport> = Arc::new(UdpTransport::new(mtu, Duration::from_secs(2)));
    let link = RemoteAuth { net: net.clone(), addr: auth_srv.local_addr().to_string(), rsid: "rs".into(), codec: Codec::Json };
    let rs = Arc::new(ResourceServer::new("rs", Mode::Core, key, GcConfig::default(), clock, Arc::new(link)));
    let rs_srv = UdpServer::bind("127.0.0.1:0", rs_router(rs), mtu).unwrap();
    let client = Client::new(
        net,
        "alice",
        Codec::Json,
        auth_srv.local_addr().to_string(),
        HashMap::from([("rs".to_owned(), rs_srv.local_addr().to_string())]),
    );
    UdpRig { auth: auth_srv, rs: rs_srv, client }
}

/// Outcome trace of a fixed script; session ids are replaced by their
/// order of appearance so runs can be compared.
fn script(c: &Client) -> Vec<String> {
    let mut out = Vec::new();
    let c0 = c.init().unwrap();
    out.push(format!("init {}", c0.serial));
    let mut cur = c0.clone();
    for j in [0, 1, 1, 0, 1] {
        match c.access(&complete_perm(j), &cur) {
            Ok(ts) => {
                out.push(format!("grant p{j} {}", ts.len()));
                if let Some(Ticket::Upd(u)) = ts.first() {
                    cur = c.update(u).unwrap();
                    out.push(format!("update {}", cur.serial));
                }
            }
            Err(d) => out.push(format!("deny p{j} {}", d.code)),
        }
    }
    out.push(format!("replay {:?}", c.access(&complete_perm(0), &c0).map_err(|d| d.code)));
    out.push(format!("recover {:?}", c.recover(&c0).map(|t| t.as_cap().map(|c| c.serial))));
    out.push(format!("reissue {}", c.reissue(&c0.sessid).unwrap().serial));
    out
}

#[test]
fn loopback_and_udp_agree() {
    for s in [FragmentStrategy::Full, FragmentStrategy::Minimal] {
        let d = core(catalog::complete(2), s);
        let over_loopback = script(&d.client("alice"));
        let rig = udp_rig(catalog::complete(2), s, DEFAULT_MTU);
        let over_udp = script(&rig.client);
        assert_eq!(over_loopback, over_udp);
        assert!(over_udp.iter().any(|l| l.starts_with("replay Err")));
        rig.rs.shutdown();
        rig.auth.shutdown();
    }
}

#[test]
fn large_fragments_are_chunked_on_both_transports() {
    let m = catalog::complete(13);
    let d = core(m.clone(), FragmentStrategy::Full);
    let c = d.client("alice");
    let c0 = c.init().unwrap();
    let env = c.access_envelope(&complete_perm(0), &c0);
    assert!(frame::payload_len(&env) > DEFAULT_MTU);
    d.net.reset_stats();
    c.access(&complete_perm(0), &c0).unwrap();
    assert_eq!(d.net.stats().chunked_messages, 1);

    let rig = udp_rig(m, FragmentStrategy::Full, DEFAULT_MTU);
    let u0 = rig.client.init().unwrap();
    assert!(rig.client.access(&complete_perm(0), &u0).unwrap().is_empty());
    let next = cap(&rig.client.access(&complete_perm(5), &u0).unwrap());
    assert_eq!(next.frag.current(), build_fragment(&catalog::complete(13), &"q5".into(), FragmentStrategy::Full).current());
    rig.rs.shutdown();
    rig.auth.shutdown();
}

#[test]
fn slow_session_does_not_block_others() {
    let router = Router::new().bind(MsgType::Access, |e| {
        if e.uid_assertion == "slow" {
            std::thread::sleep(Duration::from_millis(600));
        }
        e.reply(&e.uid_assertion)
    });
    let srv = UdpServer::bind("127.0.0.1:0", router, DEFAULT_MTU).unwrap();
    let addr = srv.local_addr().to_string();
    let net = Arc::new(UdpTransport::new(DEFAULT_MTU, Duration::from_secs(3)));
    let start = Instant::now();
    let slow = {
        let (net, addr) = (net.clone(), addr.clone());
        std::thread::spawn(move || net.request(&addr, Envelope::new(MsgType::Access, Codec::Json, "slow", &())).unwrap())
    };
    std::thread::sleep(Duration::from_millis(50));
    let fast = net.request(&addr, Envelope::new(MsgType::Access, Codec::Cbor, "fast", &())).unwrap();
    let fast_done = start.elapsed();
    assert_eq!(fast.decode::<String>().unwrap(), "fast");
    assert!(fast_done < Duration::from_millis(500), "fast request took {fast_done:?}");
    assert_eq!(slow.join().unwrap().decode::<String>().unwrap(), "slow");
    assert!(start.elapsed() >= Duration::from_millis(600));
    srv.shutdown();
}

#[test]
fn unknown_message_type_gets_an_error_reply() {
    let d = core(catalog::complete(2), FragmentStrategy::Full);
    let env = Envelope::new(MsgType::BatonConfirm, Codec::Json, "alice", &());
    let out = d.net.request("rs", env).unwrap();
    let err: hcap_core::transport::RouteError = out.decode().unwrap();
    assert!(err.error.contains("BatonConfirm"));
    assert!(d.net.request("nowhere", Envelope::new(MsgType::Access, Codec::Json, "alice", &())).is_err());
}

#[test]
fn baton_passing_over_udp() {
    let d = UdpDeployment::new(
        Mode::Multi,
        table("alice", catalog::complete_on(2, 2), FragmentStrategy::Full),
        &["rs0", "rs1"],
        GcConfig { baton_compression: true, ..GcConfig::default() },
        Arc::new(ScriptedClock::ticking(1)),
        DEFAULT_MTU,
    )
    .unwrap();
    let c = d.client("alice");
    let c0 = c.init().unwrap();
    let mut cur = c0.clone();
    for j in [1, 0, 1, 0, 1] {
        cur = cap(&c.access(&complete_perm_on(j, 2), &cur).unwrap());
    }
    assert!(d.server("rs1").holds_baton(&c0.sessid));
    assert_eq!(c.access(&complete_perm_on(0, 2), &c0).unwrap_err().code, DenyCode::BatonUnconfirmed);
    let sent: Vec<usize> = d.servers.iter().flat_map(|s| s.stats().batons_sent).collect();
    assert_eq!(sent.len(), 5);
    assert!(sent.iter().all(|&n| n <= 2));
}
