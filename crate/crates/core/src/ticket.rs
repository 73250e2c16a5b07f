//! Capabilities and update requests, their keyed tags, and the JSON/CBOR codecs.

use std::fmt;

use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::Sha256;

use crate::sa::{ExceptionList, SAFragment, Timestamp};

pub const TAG_LEN: usize = 32;

pub type Tag = [u8; TAG_LEN];

#[derive(Debug, thiserror::Error)]
pub enum TicketError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cbor: {0}")]
    Cbor(String),
    #[error("update request carries an empty exception")]
    EmptyException,
    #[error("bad tag encoding: {0}")]
    BadTag(String),
    #[error("expected a {0}")]
    WrongKind(&'static str),
    #[error("malformed ticket: {0}")]
    Malformed(String),
}

/// Secret shared between the authorization server and one resource server.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedKey {
    key_id: String,
    bytes: [u8; 32],
}

impl SharedKey {
    pub fn new(key_id: impl Into<String>, bytes: [u8; 32]) -> Self {
        SharedKey { key_id: key_id.into(), bytes }
    }

    pub fn generate<R: RngCore>(key_id: impl Into<String>, rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        SharedKey::new(key_id, bytes)
    }

    pub fn from_hex(key_id: impl Into<String>, s: &str) -> Result<Self, TicketError> {
        let v = hex::decode(s).map_err(|e| TicketError::BadTag(e.to_string()))?;
        let bytes = v
            .try_into()
            .map_err(|v: Vec<u8>| TicketError::BadTag(format!("key is {} bytes, need 32", v.len())))?;
        Ok(SharedKey::new(key_id, bytes))
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.bytes
    }
}

impl fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SharedKey").field("key_id", &self.key_id).finish_non_exhaustive()
    }
}

/// Keyed hash used for ticket tags.
pub trait KeyedHash: Send + Sync {
    fn tag(&self, key: &SharedKey, msg: &[u8]) -> Tag;

    /// Must compare in constant time.
    fn verify(&self, key: &SharedKey, msg: &[u8], tag: &[u8]) -> bool;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct HmacSha256;

impl KeyedHash for HmacSha256 {
    fn tag(&self, key: &SharedKey, msg: &[u8]) -> Tag {
        let mut mac = Hmac::<Sha256>::new_from_slice(key.bytes()).expect("hmac accepts any key length");
        mac.update(msg);
        mac.finalize().into_bytes().into()
    }

    fn verify(&self, key: &SharedKey, msg: &[u8], tag: &[u8]) -> bool {
        let mut mac = Hmac::<Sha256>::new_from_slice(key.bytes()).expect("hmac accepts any key length");
        mac.update(msg);
        mac.verify_slice(tag).is_ok()
    }
}

/// Ticket bodies serialize with sorted keys and no whitespace, so the
/// message is canonical without a detour through `serde_json::Value`.
fn tagged_message<B: Serialize>(body: &B, uid: &str) -> Vec<u8> {
    let mut msg = serde_json::to_vec(body).expect("ticket bodies serialize");
    msg.extend_from_slice(uid.as_bytes());
    msg
}

/// Signed part of a capability, fields in sorted order.
#[derive(Serialize)]
struct CapBody<'a> {
    frag: &'a SAFragment,
    serial: Timestamp,
    sessid: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    vid: Option<&'a str>,
}

#[derive(Serialize)]
struct UpdBody<'a> {
    exc: &'a ExceptionList,
    #[serde(skip_serializing_if = "Option::is_none")]
    rsid: Option<&'a str>,
    sessid: &'a str,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Capability {
    pub uid: String,
    pub vid: Option<String>,
    pub sessid: String,
    pub serial: Timestamp,
    pub frag: SAFragment,
    pub tag: Tag,
}

impl Capability {
    pub fn sign(
        key: &SharedKey,
        uid: impl Into<String>,
        vid: Option<String>,
        sessid: impl Into<String>,
        serial: Timestamp,
        frag: SAFragment,
    ) -> Self {
        let mut cap =
            Capability { uid: uid.into(), vid, sessid: sessid.into(), serial, frag, tag: [0; TAG_LEN] };
        cap.tag = HmacSha256.tag(key, &tagged_message(&cap.signed(), &cap.uid));
        cap
    }

    /// The signed part: everything but `uid` and `tag`.
    fn signed(&self) -> CapBody<'_> {
        CapBody { frag: &self.frag, serial: self.serial, sessid: &self.sessid, vid: self.vid.as_deref() }
    }

    pub fn body(&self) -> Value {
        serde_json::to_value(self.signed()).expect("ticket bodies serialize")
    }

    /// Checks the tag as presented by `uid`.
    pub fn verify(&self, key: &SharedKey, uid: &str) -> bool {
        HmacSha256.verify(key, &tagged_message(&self.signed(), uid), &self.tag)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct UpdateRequest {
    pub uid: String,
    pub rsid: Option<String>,
    pub sessid: String,
    pub exc: ExceptionList,
    pub tag: Tag,
}

impl UpdateRequest {
    pub fn sign(
        key: &SharedKey,
        uid: impl Into<String>,
        rsid: Option<String>,
        sessid: impl Into<String>,
        exc: ExceptionList,
    ) -> Result<Self, TicketError> {
        if exc.is_nil() {
            return Err(TicketError::EmptyException);
        }
        let mut upd = UpdateRequest { uid: uid.into(), rsid, sessid: sessid.into(), exc, tag: [0; TAG_LEN] };
        upd.tag = HmacSha256.tag(key, &tagged_message(&upd.signed(), &upd.uid));
        Ok(upd)
    }

    fn signed(&self) -> UpdBody<'_> {
        UpdBody { exc: &self.exc, rsid: self.rsid.as_deref(), sessid: &self.sessid }
    }

    pub fn body(&self) -> Value {
        serde_json::to_value(self.signed()).expect("ticket bodies serialize")
    }

    pub fn verify(&self, key: &SharedKey, uid: &str) -> bool {
        HmacSha256.verify(key, &tagged_message(&self.signed(), uid), &self.tag)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Ticket {
    Cap(Capability),
    Upd(UpdateRequest),
}

impl Ticket {
    pub fn uid(&self) -> &str {
        match self {
            Ticket::Cap(c) => &c.uid,
            Ticket::Upd(u) => &u.uid,
        }
    }

    pub fn sessid(&self) -> &str {
        match self {
            Ticket::Cap(c) => &c.sessid,
            Ticket::Upd(u) => &u.sessid,
        }
    }

    pub fn verify(&self, key: &SharedKey, uid: &str) -> bool {
        match self {
            Ticket::Cap(c) => c.verify(key, uid),
            Ticket::Upd(u) => u.verify(key, uid),
        }
    }

    pub fn as_cap(&self) -> Option<&Capability> {
        match self {
            Ticket::Cap(c) => Some(c),
            Ticket::Upd(_) => None,
        }
    }

    pub fn as_upd(&self) -> Option<&UpdateRequest> {
        match self {
            Ticket::Upd(u) => Some(u),
            Ticket::Cap(_) => None,
        }
    }

    pub fn encode_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("tickets serialize")
    }

    pub fn decode_json(bytes: &[u8]) -> Result<Self, TicketError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn encode_cbor(&self) -> Vec<u8> {
        let mut out = Vec::new();
        ciborium::into_writer(self, &mut out).expect("writing to a vec cannot fail");
        out
    }

    pub fn decode_cbor(bytes: &[u8]) -> Result<Self, TicketError> {
        ciborium::from_reader(bytes).map_err(|e| TicketError::Cbor(e.to_string()))
    }
}

impl From<Capability> for Ticket {
    fn from(c: Capability) -> Self {
        Ticket::Cap(c)
    }
}

impl From<UpdateRequest> for Ticket {
    fn from(u: UpdateRequest) -> Self {
        Ticket::Upd(u)
    }
}

impl TryFrom<Ticket> for Capability {
    type Error = TicketError;

    fn try_from(t: Ticket) -> Result<Self, Self::Error> {
        match t {
            Ticket::Cap(c) => Ok(c),
            Ticket::Upd(_) => Err(TicketError::WrongKind("capability")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Cap,
    Upd,
}

/// Wire form of either ticket kind, fields in sorted order. A flat struct
/// rather than a tagged enum so decoding needs no buffering.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    #[serde(default)]
    exc: Option<ExceptionList>,
    #[serde(default)]
    frag: Option<SAFragment>,
    kind: Kind,
    #[serde(default)]
    rsid: Option<String>,
    #[serde(default)]
    serial: Option<Timestamp>,
    sessid: String,
    tag: String,
    uid: String,
    #[serde(default)]
    vid: Option<String>,
}

#[derive(Serialize)]
struct WireOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    exc: Option<&'a ExceptionList>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frag: Option<&'a SAFragment>,
    kind: Kind,
    #[serde(skip_serializing_if = "Option::is_none")]
    rsid: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    serial: Option<Timestamp>,
    sessid: &'a str,
    tag: String,
    uid: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    vid: Option<&'a str>,
}

fn parse_tag(s: &str) -> Result<Tag, TicketError> {
    let mut tag = [0u8; TAG_LEN];
    hex::decode_to_slice(s, &mut tag).map_err(|e| TicketError::BadTag(e.to_string()))?;
    Ok(tag)
}

fn malformed(what: &str) -> TicketError {
    TicketError::Malformed(what.into())
}

impl TryFrom<WireIn> for Ticket {
    type Error = TicketError;

    fn try_from(w: WireIn) -> Result<Self, Self::Error> {
        let tag = parse_tag(&w.tag)?;
        Ok(match w.kind {
            Kind::Cap => {
                if w.exc.is_some() || w.rsid.is_some() {
                    return Err(malformed("capability with update fields"));
                }
                let serial = w.serial.ok_or_else(|| malformed("capability without serial"))?;
                let frag = w.frag.ok_or_else(|| malformed("capability without fragment"))?;
                Ticket::Cap(Capability { uid: w.uid, vid: w.vid, sessid: w.sessid, serial, frag, tag })
            }
            Kind::Upd => {
                if w.frag.is_some() || w.serial.is_some() || w.vid.is_some() {
                    return Err(malformed("update request with capability fields"));
                }
                let exc = w.exc.ok_or_else(|| malformed("update request without exception"))?;
                if exc.is_nil() {
                    return Err(TicketError::EmptyException);
                }
                Ticket::Upd(UpdateRequest { uid: w.uid, rsid: w.rsid, sessid: w.sessid, exc, tag })
            }
        })
    }
}

impl Ticket {
    fn wire(&self) -> WireOut<'_> {
        match self {
            Ticket::Cap(c) => c.wire(),
            Ticket::Upd(u) => u.wire(),
        }
    }
}

impl Capability {
    fn wire(&self) -> WireOut<'_> {
        WireOut {
            exc: None,
            frag: Some(&self.frag),
            kind: Kind::Cap,
            rsid: None,
            serial: Some(self.serial),
            sessid: &self.sessid,
            tag: hex::encode(self.tag),
            uid: &self.uid,
            vid: self.vid.as_deref(),
        }
    }
}

impl UpdateRequest {
    fn wire(&self) -> WireOut<'_> {
        WireOut {
            exc: Some(&self.exc),
            frag: None,
            kind: Kind::Upd,
            rsid: self.rsid.as_deref(),
            serial: None,
            sessid: &self.sessid,
            tag: hex::encode(self.tag),
            uid: &self.uid,
            vid: None,
        }
    }
}

impl Serialize for Ticket {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ticket {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        WireIn::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

impl Serialize for Capability {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Capability {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ticket::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

impl Serialize for UpdateRequest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for UpdateRequest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Ticket::deserialize(d)? {
            Ticket::Upd(u) => Ok(u),
            Ticket::Cap(_) => Err(serde::de::Error::custom("expected an update request")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{self, complete_perm};
    use crate::sa::{build_fragment, FragmentStrategy};

    fn key(b: u8) -> SharedKey {
        SharedKey::new("rs", [b; 32])
    }

    fn cap() -> Capability {
        let f = build_fragment(&catalog::complete(2), &"q0".into(), FragmentStrategy::Full);
        Capability::sign(&key(1), "alice", None, "s1", Timestamp(5), f)
    }

    #[test]
    fn sign_verify_and_transfer() {
        let c = cap();
        assert!(c.verify(&key(1), "alice"));
        assert!(!c.verify(&key(1), "bob"));
        assert!(!c.verify(&key(2), "alice"));
        let mut bumped = c.clone();
        bumped.serial = Timestamp(6);
        assert!(!bumped.verify(&key(1), "alice"));
    }

    #[test]
    fn json_shape() {
        let c = cap();
        let v: Value = serde_json::from_slice(&Ticket::Cap(c.clone()).encode_json()).unwrap();
        assert_eq!(v["kind"], "cap");
        assert_eq!(v["serial"], 5);
        assert!(v.get("vid").is_none());
        assert_eq!(v["tag"].as_str().unwrap().len(), 64);
        let s = String::from_utf8(Ticket::Cap(c).encode_json()).unwrap();
        assert!(!s.contains('\n') && !s.contains("\": "));
        assert!(s.starts_with(r#"{"frag":"#));
    }

    #[test]
    fn codecs_round_trip() {
        let exc = ExceptionList::from_chronological(Timestamp(3), [(complete_perm(1), Timestamp(5))]).unwrap();
        let upd = UpdateRequest::sign(&key(1), "alice", Some("rs0".into()), "s1", exc).unwrap();
        for t in [Ticket::Cap(cap()), Ticket::Upd(upd)] {
            assert_eq!(Ticket::decode_json(&t.encode_json()).unwrap(), t);
            assert_eq!(Ticket::decode_cbor(&t.encode_cbor()).unwrap(), t);
        }
    }

    #[test]
    fn direct_encoding_is_sorted() {
        let exc = ExceptionList::from_chronological(Timestamp(3), [(complete_perm(1), Timestamp(5))]).unwrap();
        let upd = UpdateRequest::sign(&key(1), "alice", Some("rs0".into()), "s1", exc).unwrap();
        let mut c = cap();
        c.vid = Some("rs1".into());
        for t in [Ticket::Cap(cap()), Ticket::Cap(c.clone()), Ticket::Upd(upd.clone())] {
            let sorted = serde_json::to_vec(&serde_json::to_value(&t).unwrap()).unwrap();
            assert_eq!(t.encode_json(), sorted);
        }
        let body = serde_json::to_vec(&c.body()).unwrap();
        assert_eq!(serde_json::to_vec(&c.signed()).unwrap(), body);
        let body = serde_json::to_vec(&upd.body()).unwrap();
        assert_eq!(serde_json::to_vec(&upd.signed()).unwrap(), body);
    }

    #[test]
    fn mixed_kind_fields_rejected() {
        let mut v: Value = serde_json::from_slice(&Ticket::Cap(cap()).encode_json()).unwrap();
        v["rsid"] = "rs".into();
        assert!(serde_json::from_value::<Ticket>(v).is_err());
    }

    #[test]
    fn truncated_input_fails() {
        let bytes = Ticket::Cap(cap()).encode_json();
        assert!(matches!(Ticket::decode_json(&bytes[..bytes.len() - 3]), Err(TicketError::Json(_))));
        let bytes = Ticket::Cap(cap()).encode_cbor();
        assert!(matches!(Ticket::decode_cbor(&bytes[..bytes.len() - 3]), Err(TicketError::Cbor(_))));
    }

    #[test]
    fn empty_update_rejected() {
        let r = UpdateRequest::sign(&key(1), "a", None, "s", ExceptionList::nil(Timestamp(1)));
        assert!(matches!(r, Err(TicketError::EmptyException)));
    }

    #[test]
    fn cbor_smaller_for_large_fragment() {
        let f = build_fragment(&catalog::complete(12), &"q0".into(), FragmentStrategy::Full);
        let t = Ticket::Cap(Capability::sign(&key(1), "alice", None, "s1", Timestamp(5), f));
        assert!(t.encode_cbor().len() < t.encode_json().len());
    }

    #[test]
    fn key_debug_hides_bytes() {
        assert!(!format!("{:?}", key(7)).contains('7'));
    }
}
