use std::collections::HashMap;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::frame::{self, Reassembler, DEFAULT_MTU};
use super::{Envelope, Router, Transport, TransportError};

const RECV_BUF: usize = 65_536;
const POLL: Duration = Duration::from_millis(50);

/// A router served over UDP; each complete request is handled on its own thread.
pub struct UdpServer {
    local: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl UdpServer {
    pub fn bind(addr: &str, router: Router, mtu: usize) -> Result<UdpServer, TransportError> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(POLL))?;
        let local = socket.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let router = Arc::new(router);
        let flag = stop.clone();
        let thread = std::thread::spawn(move || serve_loop(socket, router, mtu, flag));
        Ok(UdpServer { local, stop, thread: Some(thread) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the server is stopped from elsewhere.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for UdpServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn serve_loop(socket: UdpSocket, router: Arc<Router>, mtu: usize, stop: Arc<AtomicBool>) {
    let mut buf = vec![0u8; RECV_BUF];
    let mut pending: HashMap<SocketAddr, Reassembler> = HashMap::new();
    let ids = AtomicU64::new(rand::random());
    while !stop.load(Ordering::SeqCst) {
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(x) => x,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                pending.retain(|_, r| {
                    r.expire();
                    r.pending() > 0
                });
                continue;
            }
            Err(e) => {
                log::error!("udp receive: {e}");
                continue;
            }
        };
        let parsed = frame::parse(&buf[..n]);
        let r = pending.entry(from).or_insert_with(|| Reassembler::new(Duration::from_secs(2)));
        let env = match parsed.and_then(|f| r.push(f)) {
            Ok(Some(env)) => env,
            Ok(None) => continue,
            Err(e) => {
                log::warn!("udp from {from}: {e}");
                continue;
            }
        };
        let out = match socket.try_clone() {
            Ok(s) => s,
            Err(e) => {
                log::error!("udp socket clone: {e}");
                continue;
            }
        };
        let router = router.clone();
        let id = ids.fetch_add(1, Ordering::Relaxed);
        std::thread::spawn(move || {
            let reply = router.dispatch(&env);
            for f in frame::encode(&reply, mtu, id) {
                if let Err(e) = out.send_to(&f, from) {
                    log::warn!("udp reply to {from}: {e}");
                }
            }
        });
    }
}

/// Client side of the UDP transport. Peers are named by socket address.
pub struct UdpTransport {
    mtu: usize,
    timeout: Duration,
    ids: AtomicU64,
}

impl UdpTransport {
    pub fn new(mtu: usize, timeout: Duration) -> Self {
        UdpTransport { mtu, timeout, ids: AtomicU64::new(rand::random()) }
    }

    fn attempt(&self, socket: &UdpSocket, to: SocketAddr, frames: &[Vec<u8>], corr: u64) -> Result<Envelope, TransportError> {
        for f in frames {
            socket.send_to(f, to)?;
        }
        let deadline = Instant::now() + self.timeout;
        let mut r = Reassembler::new(self.timeout);
        let mut buf = vec![0u8; RECV_BUF];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(if r.pending() > 0 {
                    TransportError::Reassembly(format!("reply to {corr} incomplete"))
                } else {
                    TransportError::Timeout(to.to_string())
                });
            }
            socket.set_read_timeout(Some(left.min(POLL)))?;
            let n = match socket.recv_from(&mut buf) {
                Ok((n, from)) if from == to => n,
                Ok(_) => continue,
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
                Err(e) => return Err(e.into()),
            };
            if let Some(env) = r.push(frame::parse(&buf[..n])?)? {
                if env.correlation_id == corr {
                    return Ok(env);
                }
            }
        }
    }
}

impl Default for UdpTransport {
    fn default() -> Self {
        UdpTransport::new(DEFAULT_MTU, Duration::from_secs(2))
    }
}

impl Transport for UdpTransport {
    fn request(&self, peer: &str, mut env: Envelope) -> Result<Envelope, TransportError> {
        let to = peer
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| TransportError::Unreachable(peer.to_owned()))?;
        if env.correlation_id == 0 {
            env.correlation_id = self.ids.fetch_add(1, Ordering::Relaxed);
        }
        let bind = if to.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
        let socket = UdpSocket::bind(bind)?;
        let frames = frame::encode(&env, self.mtu, self.ids.fetch_add(1, Ordering::Relaxed));
        match self.attempt(&socket, to, &frames, env.correlation_id) {
            Err(TransportError::Timeout(_)) | Err(TransportError::Reassembly(_)) => {
                self.attempt(&socket, to, &frames, env.correlation_id)
            }
            r => r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{Codec, MsgType};

    #[test]
    fn udp_round_trip_with_chunks() {
        let router = Router::new().bind(MsgType::Access, |e| e.reply(&e.body.len()));
        let server = UdpServer::bind("127.0.0.1:0", router, 128).unwrap();
        let client = UdpTransport::new(128, Duration::from_secs(2));
        let env = Envelope::new(MsgType::Access, Codec::Json, "alice", &"y".repeat(1000));
        let out = client.request(&server.local_addr().to_string(), env.clone()).unwrap();
        assert_eq!(out.decode::<usize>().unwrap(), env.body.len());
        server.shutdown();
    }

    #[test]
    fn silent_peer_times_out() {
        let quiet = UdpSocket::bind("127.0.0.1:0").unwrap();
        let client = UdpTransport::new(128, Duration::from_millis(100));
        let env = Envelope::new(MsgType::Access, Codec::Json, "alice", &1);
        let r = client.request(&quiet.local_addr().unwrap().to_string(), env);
        assert!(matches!(r, Err(TransportError::Timeout(_))));
    }
}
