use std::fmt;

use serde::{Deserialize, Serialize};

/// Machine-readable reason for refusing a request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyCode {
    BadTag,
    /// Serial older than the server's minimum valid serial.
    Expired,
    /// Serial older than the session's last recorded transition.
    StaleSerial,
    NotPermitted,
    WrongServer,
    BatonUnconfirmed,
    RemoteValidationFailed,
    UpdateMismatch,
    UnknownSession,
    UnknownUser,
    PolicyViolation,
    NotRecoverable,
    Malformed,
    Transport,
}

impl fmt::Display for DenyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("codes serialize");
        f.write_str(v.as_str().expect("codes serialize as strings"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {detail}")]
pub struct Denial {
    pub code: DenyCode,
    pub detail: String,
}

impl Denial {
    pub fn new(code: DenyCode, detail: impl Into<String>) -> Self {
        Denial { code, detail: detail.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_names() {
        assert_eq!(DenyCode::StaleSerial.to_string(), "stale_serial");
        let d = Denial::new(DenyCode::Expired, "serial 3 < 7");
        assert_eq!(d.to_string(), "expired: serial 3 < 7");
    }
}
