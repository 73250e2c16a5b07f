//! Server configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use hcap_core::policy::{Mode, PolicyTable};
use hcap_core::resource::GcConfig;
use hcap_core::service::demo_key;
use hcap_core::ticket::SharedKey;
use hcap_core::transport::frame::DEFAULT_MTU;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub mode: Mode,
    /// Resource-server id to hex-encoded 32-byte key. Servers missing here
    /// get a fixed demo key.
    #[serde(default)]
    pub keys: BTreeMap<String, String>,
    /// Relative paths are taken from the config file's directory.
    pub policy_path: PathBuf,
    #[serde(default)]
    pub gc: GcSettings,
    #[serde(default)]
    pub transport: TransportSettings,
    /// This resource server's id (`serve-rs`).
    #[serde(default)]
    pub rsid: Option<String>,
    /// Authorization server address (`serve-rs`).
    #[serde(default)]
    pub auth_addr: Option<String>,
    /// Other resource servers by id (`serve-rs` in multi mode).
    #[serde(default)]
    pub peers: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcSettings {
    pub interval_s: f64,
    pub size_threshold: usize,
    pub length_threshold: usize,
    pub hard_gc_inactivity_s: f64,
    pub baton_compression: bool,
}

impl Default for GcSettings {
    fn default() -> Self {
        let d = GcConfig::default();
        GcSettings {
            interval_s: d.interval.as_secs_f64(),
            size_threshold: d.size_threshold,
            length_threshold: d.length_threshold,
            hard_gc_inactivity_s: d.hard_gc_inactivity as f64 / 1000.0,
            baton_compression: d.baton_compression,
        }
    }
}

impl GcSettings {
    /// Servers run on a millisecond clock.
    pub fn to_gc_config(&self) -> GcConfig {
        GcConfig {
            interval: Duration::from_secs_f64(self.interval_s.max(0.001)),
            size_threshold: self.size_threshold,
            length_threshold: self.length_threshold,
            hard_gc_inactivity: (self.hard_gc_inactivity_s * 1000.0) as u64,
            baton_compression: self.baton_compression,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Udp,
    Loopback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSettings {
    pub kind: TransportKind,
    pub mtu: usize,
    pub bind: String,
}

impl Default for TransportSettings {
    fn default() -> Self {
        TransportSettings { kind: TransportKind::Udp, mtu: DEFAULT_MTU, bind: "127.0.0.1:5683".into() }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))?;
        let mut cfg: Config =
            serde_json::from_str(&text).map_err(|e| CliError::Parse(path.display().to_string(), e.to_string()))?;
        if cfg.policy_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.policy_path = dir.join(&cfg.policy_path);
            }
        }
        if cfg.transport.mtu == 0 {
            return Err(CliError::Config("transport.mtu must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn policies(&self) -> Result<PolicyTable, CliError> {
        PolicyTable::load(&self.policy_path, self.mode)
            .map_err(|e| CliError::Parse(self.policy_path.display().to_string(), e.to_string()))
    }

    pub fn key(&self, rsid: &str) -> Result<SharedKey, CliError> {
        let Some(h) = self.keys.get(rsid) else { return Ok(demo_key(rsid)) };
        let bytes: [u8; 32] = hex::decode(h)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| CliError::Config(format!("key for {rsid} is not 32 hex-encoded bytes")))?;
        Ok(SharedKey::new(rsid, bytes))
    }

    /// Keys for every server the authorization server talks to.
    pub fn all_keys(&self) -> Result<Vec<SharedKey>, CliError> {
        let mut ids: Vec<&str> = self.keys.keys().map(String::as_str).collect();
        ids.extend(self.rsid.as_deref());
        ids.extend(self.peers.keys().map(String::as_str));
        if ids.is_empty() {
            ids.push("rs");
        }
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().map(|r| self.key(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = r#"{
            "mode": "multi",
            "keys": {"rs0": "0101010101010101010101010101010101010101010101010101010101010101"},
            "policy_path": "policies.json",
            "gc": {"interval_s": 5, "size_threshold": 100, "length_threshold": 10,
                   "hard_gc_inactivity_s": 2, "baton_compression": true},
            "transport": {"kind": "udp", "mtu": 512, "bind": "127.0.0.1:0"},
            "rsid": "rs0",
            "auth_addr": "127.0.0.1:5683",
            "peers": {"rs1": "127.0.0.1:5685"}
        }"#;
        let cfg: Config = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.mode, Mode::Multi);
        let gc = cfg.gc.to_gc_config();
        assert_eq!(gc.hard_gc_inactivity, 2000);
        assert_eq!(gc.interval, Duration::from_secs(5));
        assert_eq!(cfg.key("rs0").unwrap(), SharedKey::new("rs0", [1; 32]));
        assert_eq!(cfg.key("rs1").unwrap(), demo_key("rs1"));
        let ids: Vec<_> = cfg.all_keys().unwrap().iter().map(|k| k.key_id().to_owned()).collect();
        assert_eq!(ids, ["rs0", "rs1"]);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(serde_json::from_str::<Config>(r#"{"policy_path": "p", "colour": 1}"#).is_err());
        let cfg: Config = serde_json::from_str(r#"{"policy_path": "p", "keys": {"rs": "abcd"}}"#).unwrap();
        assert!(cfg.key("rs").is_err());
    }
}
