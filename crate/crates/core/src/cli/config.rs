use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentPose, AttackKind, AttackParams, ConsoleCommand};
use crate::bus::BusMode;
use crate::channel::{ChannelConfig, CipherSuite, SuiteNames};

use super::{config_err, CliError};

/// Where a node's certificate, secret key and CA certificate live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Identity {
    pub cert: PathBuf,
    pub key: PathBuf,
    pub ca: PathBuf,
}

/// One timed ground-station command, `at_ms` after start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub at_ms: u64,
    #[serde(flatten)]
    pub command: ConsoleCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub kind: AttackKind,
    #[serde(flatten)]
    pub params: AttackParams,
}

/// One node's run configuration, as read from YAML. Relative paths are
/// resolved against the file's directory.
///
/// ```yaml
/// identity: {cert: certs/agent.cert, key: keys/agent.key, ca: ca/ca.cert}
/// broker: 127.0.0.1:7400
/// mode: both
/// peers: [certs]
/// log_level: info
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<Identity>,
    /// Broker address to connect to, or for the broker itself the listen address.
    pub broker: String,
    pub mode: BusMode,
    /// Claimed name when running without an identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authz: Option<PathBuf>,
    /// Offered cipher suites in preference order; all built-in suites when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suites: Option<Vec<SuiteNames>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap_all: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_log: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub console_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serve_ui: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_level: Option<String>,
    /// Certificate files, or directories of `*.cert` files, whose keys verify
    /// incoming envelopes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub peers: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<AgentPose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geofence: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSection>,
}

impl RunConfig {
    pub fn new(broker: impl Into<String>, mode: BusMode) -> Self {
        Self {
            identity: None,
            broker: broker.into(),
            mode,
            subject: None,
            authz: None,
            suites: None,
            trap_all: None,
            capture: None,
            event_log: None,
            console_port: None,
            serve_ui: None,
            log_level: None,
            peers: Vec::new(),
            status_hz: None,
            start: None,
            geofence: None,
            script: Vec::new(),
            attack: None,
        }
    }

    pub fn from_yaml(text: &str) -> Result<Self, CliError> {
        serde_yaml::from_str(text).map_err(config_err)
    }

    /// Reads `path` and resolves every relative path in it against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_yaml(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(id) = &mut self.identity {
            fix(&mut id.cert);
            fix(&mut id.key);
            fix(&mut id.ca);
        }
        for p in [&mut self.authz, &mut self.capture, &mut self.event_log, &mut self.serve_ui].into_iter().flatten() {
            fix(p);
        }
        self.peers.iter_mut().for_each(fix);
        if let Some(a) = &mut self.attack {
            if let Some(c) = &mut a.params.capture {
                fix(c);
            }
        }
    }

    pub fn channel(&self) -> Result<ChannelConfig, CliError> {
        let mut channel = ChannelConfig::default();
        if let Some(names) = &self.suites {
            if names.is_empty() {
                return Err(config_err("suites: list is empty"));
            }
            channel.suites = names.iter().map(CipherSuite::try_from).collect::<Result<_, _>>().map_err(config_err)?;
        }
        if let Some(t) = self.trap_all {
            channel.trap_all = t;
        }
        Ok(channel)
    }

    pub fn log_level(&self) -> &str {
        self.log_level.as_deref().unwrap_or("info")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_file() {
        let mut c = RunConfig::from_yaml(
            "identity: {cert: c.cert, key: k.key, ca: /abs/ca.cert}\nbroker: 127.0.0.1:1\nmode: both\npeers: [certs]\n",
        )
        .unwrap();
        c.resolve(Path::new("/etc/pqc2"));
        let id = c.identity.unwrap();
        assert_eq!(id.cert, PathBuf::from("/etc/pqc2/c.cert"));
        assert_eq!(id.ca, PathBuf::from("/abs/ca.cert"));
        assert_eq!(c.peers, vec![PathBuf::from("/etc/pqc2/certs")]);
    }

    #[test]
    fn unknown_keys_and_bad_suites_are_refused() {
        assert!(RunConfig::from_yaml("broker: x\nmode: none\ncolour: red\n").is_err());
        let c = RunConfig::from_yaml("broker: x\nmode: channel\nsuites: [{sig: rot13, kem: x25519, aead: aes-256-gcm}]\n")
            .unwrap();
        assert!(c.channel().is_err());
    }

    #[test]
    fn script_and_attack_sections_parse() {
        let c = RunConfig::from_yaml(
            "broker: x\nmode: none\nscript:\n  - {at_ms: 0, type: cmd, v: 0.5, omega: 0}\n  - {at_ms: 500, type: estop, engage: true}\nattack: {kind: forge, count: 10}\n",
        )
        .unwrap();
        assert_eq!(c.script[1].command, ConsoleCommand::EStop { engage: true });
        let a = c.attack.unwrap();
        assert_eq!((a.kind, a.params.count), (AttackKind::Forge, 10));
    }
}
