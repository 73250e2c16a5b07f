use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use super::frame::{self, Reassembler, DEFAULT_MTU};
use super::{Envelope, MsgType, Router, Transport, TransportError};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WireStats {
    pub messages: u64,
    pub frames: u64,
    pub bytes: u64,
    pub chunked_messages: u64,
    pub by_type: HashMap<String, u64>,
}

impl WireStats {
    pub fn count(&self, t: MsgType) -> u64 {
        self.by_type.get(&format!("{t:?}")).copied().unwrap_or(0)
    }
}

/// In-process network: envelopes go through the datagram framing and are
/// dispatched synchronously on the caller's thread.
pub struct LoopbackNet {
    mtu: usize,
    routers: RwLock<HashMap<String, Arc<Router>>>,
    stats: Mutex<WireStats>,
    next_id: AtomicU64,
}

impl LoopbackNet {
    pub fn new() -> Arc<Self> {
        LoopbackNet::with_mtu(DEFAULT_MTU)
    }

    pub fn with_mtu(mtu: usize) -> Arc<Self> {
        Arc::new(LoopbackNet {
            mtu,
            routers: RwLock::new(HashMap::new()),
            stats: Mutex::new(WireStats::default()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn mtu(&self) -> usize {
        self.mtu
    }

    pub fn serve(&self, addr: impl Into<String>, router: Router) {
        self.routers.write().unwrap().insert(addr.into(), Arc::new(router));
    }

    /// Removes every endpoint, releasing the handlers they hold.
    pub fn shutdown(&self) {
        self.routers.write().unwrap().clear();
    }

    pub fn stats(&self) -> WireStats {
        self.stats.lock().unwrap().clone()
    }

    pub fn reset_stats(&self) {
        *self.stats.lock().unwrap() = WireStats::default();
    }

    fn carry(&self, env: &Envelope) -> Result<Envelope, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let frames = frame::encode(env, self.mtu, id);
        {
            let mut s = self.stats.lock().unwrap();
            s.messages += 1;
            s.frames += frames.len() as u64;
            s.bytes += frames.iter().map(|f| f.len() as u64).sum::<u64>();
            if frames.len() > 1 {
                s.chunked_messages += 1;
            }
            *s.by_type.entry(format!("{:?}", env.msg_type)).or_default() += 1;
        }
        let mut r = Reassembler::new(Duration::from_secs(1));
        for f in &frames {
            if let Some(done) = r.push(frame::parse(f)?)? {
                return Ok(done);
            }
        }
        Err(TransportError::Reassembly("message incomplete".into()))
    }
}

impl Transport for LoopbackNet {
    fn request(&self, peer: &str, mut env: Envelope) -> Result<Envelope, TransportError> {
        if env.correlation_id == 0 {
            env.correlation_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        }
        let router = self
            .routers
            .read()
            .unwrap()
            .get(peer)
            .cloned()
            .ok_or_else(|| TransportError::Unreachable(peer.to_owned()))?;
        let delivered = self.carry(&env)?;
        let reply = router.dispatch(&delivered);
        self.carry(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Codec;

    #[test]
    fn round_trip_and_stats() {
        let net = LoopbackNet::with_mtu(64);
        net.serve("rs", Router::new().bind(MsgType::Access, |e| e.reply(&e.body.len())));
        let big = Envelope::new(MsgType::Access, Codec::Json, "alice", &"x".repeat(200));
        let out = net.request("rs", big.clone()).unwrap();
        assert_eq!(out.decode::<usize>().unwrap(), big.body.len());
        let s = net.stats();
        assert_eq!(s.messages, 2);
        assert_eq!(s.chunked_messages, 1);
        assert_eq!(s.count(MsgType::Access), 1);
        assert!(matches!(net.request("nowhere", big), Err(TransportError::Unreachable(_))));
    }
}
