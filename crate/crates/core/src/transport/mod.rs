//! Typed request/response messaging between clients and servers.

pub mod frame;
mod loopback;
mod udp;

use std::collections::HashMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use loopback::{LoopbackNet, WireStats};
pub use udp::{UdpServer, UdpTransport};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("reassembly failed: {0}")]
    Reassembly(String),
    #[error("malformed datagram: {0}")]
    Malformed(String),
    #[error("decode: {0}")]
    Decode(String),
    #[error("no endpoint at {0}")]
    Unreachable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    SessionInit = 1,
    Access = 2,
    UpdateSubmit = 3,
    GcSubmit = 4,
    Reissue = 5,
    BatonConfirm = 6,
    RemoteValidate = 7,
    BatonTransfer = 8,
    Recover = 9,
    Response = 10,
}

impl TryFrom<u8> for MsgType {
    type Error = TransportError;

    fn try_from(b: u8) -> Result<Self, Self::Error> {
        use MsgType::*;
        Ok(match b {
            1 => SessionInit,
            2 => Access,
            3 => UpdateSubmit,
            4 => GcSubmit,
            5 => Reissue,
            6 => BatonConfirm,
            7 => RemoteValidate,
            8 => BatonTransfer,
            9 => Recover,
            10 => Response,
            _ => return Err(TransportError::Malformed(format!("message type {b}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Codec {
    #[default]
    Json = 0,
    Cbor = 1,
}

impl TryFrom<u8> for Codec {
    type Error = TransportError;

    fn try_from(b: u8) -> Result<Self, Self::Error> {
        match b {
            0 => Ok(Codec::Json),
            1 => Ok(Codec::Cbor),
            _ => Err(TransportError::Malformed(format!("codec {b}"))),
        }
    }
}

impl Codec {
    pub fn encode<T: Serialize>(self, v: &T) -> Vec<u8> {
        match self {
            Codec::Json => serde_json::to_vec(v).expect("messages serialize"),
            Codec::Cbor => {
                let mut out = Vec::new();
                ciborium::into_writer(v, &mut out).expect("writing to a vec cannot fail");
                out
            }
        }
    }

    pub fn decode<T: DeserializeOwned>(self, bytes: &[u8]) -> Result<T, TransportError> {
        match self {
            Codec::Json => serde_json::from_slice(bytes).map_err(|e| TransportError::Decode(e.to_string())),
            Codec::Cbor => ciborium::from_reader(bytes).map_err(|e| TransportError::Decode(e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub msg_type: MsgType,
    pub codec: Codec,
    pub correlation_id: u64,
    /// Claimed identity of the sender; trusted unless a verifier is installed.
    pub uid_assertion: String,
    pub body: Vec<u8>,
}

impl Envelope {
    pub fn new<T: Serialize>(msg_type: MsgType, codec: Codec, uid: &str, body: &T) -> Self {
        Envelope { msg_type, codec, correlation_id: 0, uid_assertion: uid.to_owned(), body: codec.encode(body) }
    }

    /// A response echoing this envelope's correlation id and codec.
    pub fn reply<T: Serialize>(&self, body: &T) -> Envelope {
        Envelope {
            msg_type: MsgType::Response,
            codec: self.codec,
            correlation_id: self.correlation_id,
            uid_assertion: String::new(),
            body: self.codec.encode(body),
        }
    }

    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, TransportError> {
        self.codec.decode(&self.body)
    }
}

/// Synchronous request/response to a named peer.
pub trait Transport: Send + Sync {
    fn request(&self, peer: &str, env: Envelope) -> Result<Envelope, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn request(&self, peer: &str, env: Envelope) -> Result<Envelope, TransportError> {
        (**self).request(peer, env)
    }
}

pub type Handler = Arc<dyn Fn(&Envelope) -> Envelope + Send + Sync>;

/// Checks the sender identity of an envelope before dispatch.
pub type Verifier = Arc<dyn Fn(&Envelope) -> bool + Send + Sync>;

/// Error body for envelopes no handler accepts.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RouteError {
    pub error: String,
}

#[derive(Clone, Default)]
pub struct Router {
    bindings: HashMap<MsgType, Handler>,
    verifier: Option<Verifier>,
}

impl Router {
    pub fn new() -> Self {
        Router::default()
    }

    pub fn bind(mut self, msg_type: MsgType, handler: impl Fn(&Envelope) -> Envelope + Send + Sync + 'static) -> Self {
        self.bindings.insert(msg_type, Arc::new(handler));
        self
    }

    pub fn with_verifier(mut self, verifier: impl Fn(&Envelope) -> bool + Send + Sync + 'static) -> Self {
        self.verifier = Some(Arc::new(verifier));
        self
    }

    pub fn dispatch(&self, env: &Envelope) -> Envelope {
        if let Some(v) = &self.verifier {
            if !v(env) {
                return env.reply(&RouteError { error: "unauthenticated".into() });
            }
        }
        match self.bindings.get(&env.msg_type) {
            Some(h) => {
                let mut out = h(env);
                out.correlation_id = env.correlation_id;
                out
            }
            None => env.reply(&RouteError { error: format!("no handler for {:?}", env.msg_type) }),
        }
    }
}
