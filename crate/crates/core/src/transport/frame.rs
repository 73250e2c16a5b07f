//! Datagram framing.
//!
//! Every datagram starts with a 16-byte header:
//!
//! | bytes | field          |
//! |-------|----------------|
//! | 0     | message type   |
//! | 1     | codec          |
//! | 2..4  | reserved (0)   |
//! | 4..12 | correlation id (big endian) |
//! | 12..16| flags (big endian; bit 0 = chunked) |
//!
//! Chunked datagrams then carry a 20-byte chunk header (message id u64,
//! index u32, total u32, chunk length u32). The message payload is
//! `[uid length u16][uid][body]`, split into chunks of at most `mtu` bytes.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use super::{Codec, Envelope, MsgType, TransportError};

pub const HEADER_LEN: usize = 16;
pub const CHUNK_HEADER_LEN: usize = 20;
pub const DEFAULT_MTU: usize = 1024;

const FLAG_CHUNKED: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChunkHeader {
    pub message_id: u64,
    pub index: u32,
    pub total: u32,
}

fn payload(env: &Envelope) -> Vec<u8> {
    let uid = env.uid_assertion.as_bytes();
    let mut out = Vec::with_capacity(2 + uid.len() + env.body.len());
    out.extend_from_slice(&(uid.len() as u16).to_be_bytes());
    out.extend_from_slice(uid);
    out.extend_from_slice(&env.body);
    out
}

/// Number of datagrams a payload of `len` bytes needs.
pub fn chunk_count(len: usize, mtu: usize) -> usize {
    if len <= mtu {
        1
    } else {
        len.div_ceil(mtu)
    }
}

/// Size of the envelope's payload (uid plus body) on the wire.
pub fn payload_len(env: &Envelope) -> usize {
    2 + env.uid_assertion.len() + env.body.len()
}

/// Splits an envelope into datagrams.
pub fn encode(env: &Envelope, mtu: usize, message_id: u64) -> Vec<Vec<u8>> {
    assert!(mtu > 0, "mtu must be positive");
    let data = payload(env);
    let header = |flags: u32| {
        let mut h = Vec::with_capacity(HEADER_LEN + CHUNK_HEADER_LEN + mtu);
        h.push(env.msg_type as u8);
        h.push(env.codec as u8);
        h.extend_from_slice(&[0, 0]);
        h.extend_from_slice(&env.correlation_id.to_be_bytes());
        h.extend_from_slice(&flags.to_be_bytes());
        h
    };
    if data.len() <= mtu {
        let mut d = header(0);
        d.extend_from_slice(&data);
        return vec![d];
    }
    let total = chunk_count(data.len(), mtu) as u32;
    data.chunks(mtu)
        .enumerate()
        .map(|(i, chunk)| {
            let mut d = header(FLAG_CHUNKED);
            d.extend_from_slice(&message_id.to_be_bytes());
            d.extend_from_slice(&(i as u32).to_be_bytes());
            d.extend_from_slice(&total.to_be_bytes());
            d.extend_from_slice(&(chunk.len() as u32).to_be_bytes());
            d.extend_from_slice(chunk);
            d
        })
        .collect()
}

/// One parsed datagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub codec: Codec,
    pub correlation_id: u64,
    pub chunk: Option<ChunkHeader>,
    pub data: Vec<u8>,
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b.try_into().expect("four bytes"))
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b.try_into().expect("eight bytes"))
}

pub fn parse(datagram: &[u8]) -> Result<Frame, TransportError> {
    if datagram.len() < HEADER_LEN {
        return Err(TransportError::Malformed(format!("datagram of {} bytes", datagram.len())));
    }
    let msg_type = MsgType::try_from(datagram[0])?;
    let codec = Codec::try_from(datagram[1])?;
    let correlation_id = be_u64(&datagram[4..12]);
    let flags = be_u32(&datagram[12..16]);
    let rest = &datagram[HEADER_LEN..];
    if flags & FLAG_CHUNKED == 0 {
        return Ok(Frame { msg_type, codec, correlation_id, chunk: None, data: rest.to_vec() });
    }
    if rest.len() < CHUNK_HEADER_LEN {
        return Err(TransportError::Malformed("truncated chunk header".into()));
    }
    let chunk = ChunkHeader { message_id: be_u64(&rest[0..8]), index: be_u32(&rest[8..12]), total: be_u32(&rest[12..16]) };
    let len = be_u32(&rest[16..20]) as usize;
    let data = &rest[CHUNK_HEADER_LEN..];
    if data.len() != len || chunk.index >= chunk.total {
        return Err(TransportError::Malformed(format!("bad chunk {}/{}", chunk.index, chunk.total)));
    }
    Ok(Frame { msg_type, codec, correlation_id, chunk: Some(chunk), data: data.to_vec() })
}

fn envelope(msg_type: MsgType, codec: Codec, correlation_id: u64, data: &[u8]) -> Result<Envelope, TransportError> {
    if data.len() < 2 {
        return Err(TransportError::Malformed("payload shorter than uid length".into()));
    }
    let n = u16::from_be_bytes([data[0], data[1]]) as usize;
    let uid = data
        .get(2..2 + n)
        .ok_or_else(|| TransportError::Malformed("uid runs past payload".into()))?;
    let uid = String::from_utf8(uid.to_vec()).map_err(|e| TransportError::Malformed(e.to_string()))?;
    Ok(Envelope { msg_type, codec, correlation_id, uid_assertion: uid, body: data[2 + n..].to_vec() })
}

struct Partial {
    msg_type: MsgType,
    codec: Codec,
    correlation_id: u64,
    total: u32,
    chunks: BTreeMap<u32, Vec<u8>>,
    started: Instant,
}

/// Collects chunks in any order, ignoring duplicates.
pub struct Reassembler {
    timeout: Duration,
    partial: HashMap<u64, Partial>,
}

impl Reassembler {
    pub fn new(timeout: Duration) -> Self {
        Reassembler { timeout, partial: HashMap::new() }
    }

    /// Feeds one frame; returns the envelope once it is complete.
    pub fn push(&mut self, frame: Frame) -> Result<Option<Envelope>, TransportError> {
        let Some(chunk) = frame.chunk else {
            return envelope(frame.msg_type, frame.codec, frame.correlation_id, &frame.data).map(Some);
        };
        let p = self.partial.entry(chunk.message_id).or_insert_with(|| Partial {
            msg_type: frame.msg_type,
            codec: frame.codec,
            correlation_id: frame.correlation_id,
            total: chunk.total,
            chunks: BTreeMap::new(),
            started: Instant::now(),
        });
        if p.total != chunk.total {
            return Err(TransportError::Reassembly(format!("message {} changed chunk count", chunk.message_id)));
        }
        p.chunks.entry(chunk.index).or_insert(frame.data);
        if p.chunks.len() < p.total as usize {
            return Ok(None);
        }
        let p = self.partial.remove(&chunk.message_id).expect("present");
        let data: Vec<u8> = p.chunks.into_values().flatten().collect();
        envelope(p.msg_type, p.codec, p.correlation_id, &data).map(Some)
    }

    /// Drops messages older than the timeout; returns how many were dropped.
    pub fn expire(&mut self) -> usize {
        let before = self.partial.len();
        let timeout = self.timeout;
        self.partial.retain(|_, p| p.started.elapsed() < timeout);
        before - self.partial.len()
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }
}
