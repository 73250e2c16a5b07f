use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SaError;

/// Logical-clock timestamp. Totally ordered, `0` is the minimum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn next(self) -> Timestamp {
        Timestamp(self.0 + 1)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for Timestamp {
    fn from(v: u64) -> Self {
        Timestamp(v)
    }
}

macro_rules! string_id {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

string_id!(
    /// Opaque automaton state identifier.
    StateId
);
string_id!(
    /// Symbolic state name inside an SA fragment.
    Name
);

/// An operation-resource pair, e.g. `GET coap://rs0/door`.
///
/// The resource must be a URI with a non-empty authority; the authority
/// names the resource server that guards the resource.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Permission {
    /// `op resource`, shared between clones.
    text: Arc<str>,
    op_len: usize,
    /// Byte range of the authority within `text`.
    authority: (usize, usize),
}

/// Parsed permissions by text. Decoding a ticket parses every permission
/// in its fragment, and a deployment only ever sees a handful of them.
const PARSE_CACHE_LIMIT: usize = 4096;

thread_local! {
    static PARSED: RefCell<HashMap<Box<str>, Permission>> = RefCell::new(HashMap::new());
}

impl Permission {
    pub fn new(op: impl Into<String>, resource: impl Into<String>) -> Result<Self, SaError> {
        let op = op.into();
        let resource = resource.into();
        if op.is_empty() || op.contains(char::is_whitespace) {
            return Err(SaError::InvalidPermission(format!("bad operation {op:?}")));
        }
        let parsed = url::Url::parse(&resource)
            .map_err(|e| SaError::InvalidPermission(format!("{resource:?}: {e}")))?;
        if parsed.host_str().map_or(true, str::is_empty) {
            return Err(SaError::InvalidPermission(format!("{resource:?}: missing authority")));
        }
        let start = resource
            .find("://")
            .map(|i| i + 3)
            .ok_or_else(|| SaError::InvalidPermission(format!("{resource:?}: missing authority")))?;
        let end = resource[start..]
            .find(['/', '?', '#'])
            .map_or(resource.len(), |i| start + i);
        let shift = op.len() + 1;
        Ok(Permission {
            text: format!("{op} {resource}").into(),
            op_len: op.len(),
            authority: (start + shift, end + shift),
        })
    }

    pub fn op(&self) -> &str {
        &self.text[..self.op_len]
    }

    pub fn resource(&self) -> &str {
        &self.text[self.op_len + 1..]
    }

    /// Authority component of the resource URI (`host[:port]`), which
    /// identifies the resource server holding the resource.
    pub fn authority(&self) -> &str {
        &self.text[self.authority.0..self.authority.1]
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl Ord for Permission {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.op(), self.resource()).cmp(&(other.op(), other.resource()))
    }
}

impl PartialOrd for Permission {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl fmt::Debug for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Permission {
    type Err = SaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(p) = PARSED.with(|c| c.borrow().get(s).cloned()) {
            return Ok(p);
        }
        let (op, resource) = s
            .split_once(' ')
            .ok_or_else(|| SaError::InvalidPermission(format!("{s:?}: expected \"OP uri\"")))?;
        let p = Permission::new(op, resource)?;
        PARSED.with(|c| {
            let mut c = c.borrow_mut();
            if c.len() >= PARSE_CACHE_LIMIT {
                c.clear();
            }
            c.insert(s.into(), p.clone());
        });
        Ok(p)
    }
}

impl Serialize for Permission {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Permission {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_displays() {
        let p: Permission = "GET coap://rs0:5683/door?x=1".parse().unwrap();
        assert_eq!(p.op(), "GET");
        assert_eq!(p.authority(), "rs0:5683");
        assert_eq!(p.to_string(), "GET coap://rs0:5683/door?x=1");
    }

    #[test]
    fn rejects_bad_permissions() {
        assert!(Permission::new("", "coap://rs0/a").is_err());
        assert!(Permission::new("GET", "not a uri").is_err());
        assert!(Permission::new("GET", "mailto:bob@example.com").is_err());
        assert!("GETcoap://rs0/a".parse::<Permission>().is_err());
        assert!("GET not-a-uri".parse::<Permission>().is_err());
        assert!("GET not-a-uri".parse::<Permission>().is_err());
    }

    #[test]
    fn parse_cache_returns_equal_values() {
        let a: Permission = "PUT coap://rs1/x".parse().unwrap();
        let b: Permission = "PUT coap://rs1/x".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!((b.op(), b.resource(), b.authority()), ("PUT", "coap://rs1/x", "rs1"));
    }

    #[test]
    fn orders_by_operation_then_resource() {
        let a = Permission::new("A", "coap://rs/z").unwrap();
        let b = Permission::new("A\u{1}", "coap://rs/a").unwrap();
        assert!(a < b);
    }

    #[test]
    fn equality_is_field_equality() {
        let a = Permission::new("GET", "coap://rs0/a").unwrap();
        let b = Permission::new("GET", "coap://rs0/a").unwrap();
        let c = Permission::new("PUT", "coap://rs0/a").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
