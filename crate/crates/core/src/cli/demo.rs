use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::agents::{AttackKind, AttackParams, BUNDLED_SCENARIOS};
use crate::authz::DEMO_POLICY;
use crate::bus::BusMode;
use crate::crypto::{keyfile, SchemeId};
use crate::pki::Role;

use super::config::{AttackSection, Identity, RunConfig};
use super::pki::{generate_key, init_ca, issue, signature_scheme};
use super::{config_err, runtime_err, CliError};

const BROKER_ADDR: &str = "127.0.0.1:7400";
const DAYS: u64 = 365;

/// (subject, role, hash-merkle depth, config file name). Long-running
/// signers get deeper trees.
const MEMBERS: [(&str, Role, u8, &str); 6] = [
    ("broker", Role::Broker, 12, "broker.yaml"),
    ("ground_station", Role::GroundStation, 14, "ground.yaml"),
    ("agent", Role::Agent, 14, "agent.yaml"),
    ("monitor", Role::Monitor, 12, "monitor.yaml"),
    ("relay", Role::Relay, 14, "relay.yaml"),
    ("attacker", Role::Attacker, 10, "attacker.yaml"),
];

fn cert_dir(subject: &str) -> &'static str {
    // The attacker holds a CA-issued identity but is not a trusted peer.
    if subject == "attacker" {
        "attacker"
    } else {
        "certs"
    }
}

fn planned_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = ["ca/ca.cert", "ca/ca.key", "ca/serial", "authz.yaml"].iter().map(|f| dir.join(f)).collect();
    for (subject, _, _, config) in MEMBERS {
        files.push(dir.join(cert_dir(subject)).join(format!("{subject}.cert")));
        files.push(dir.join("keys").join(format!("{subject}.key")));
        files.push(dir.join("configs").join(config));
    }
    for (name, _) in BUNDLED_SCENARIOS {
        files.push(dir.join("scenarios").join(format!("{name}.yaml")));
    }
    files
}

fn node_config(subject: &str) -> RunConfig {
    let mut c = RunConfig::new(BROKER_ADDR, BusMode::Both);
    c.identity = Some(Identity {
        cert: PathBuf::from(format!("../{}/{subject}.cert", cert_dir(subject))),
        key: PathBuf::from(format!("../keys/{subject}.key")),
        ca: PathBuf::from("../ca/ca.cert"),
    });
    match subject {
        "broker" => {
            c.authz = Some("../authz.yaml".into());
            c.capture = Some("../capture.pqcp".into());
            c.event_log = Some("../events.jsonl".into());
        }
        "attacker" => {
            c.attack = Some(AttackSection {
                kind: AttackKind::UnauthorizedPublish,
                params: AttackParams { count: 100, ..Default::default() },
            });
        }
        _ => c.peers = vec!["../certs".into()],
    }
    match subject {
        "agent" => c.status_hz = Some(5.0),
        "monitor" => c.geofence = Some(5.0),
        _ => {}
    }
    c
}

/// Writes a complete demonstration setup under `dir`.
pub fn init(dir: &Path, scheme: &str, force: bool) -> Result<(), CliError> {
    let scheme = signature_scheme(scheme)?.scheme_id;
    let files = planned_files(dir);
    if !force {
        if let Some(existing) = files.iter().find(|f| f.exists()) {
            return Err(config_err(format!("{} already exists (use --force to replace)", existing.display())));
        }
    } else {
        for f in files.iter().filter(|f| f.exists()) {
            fs::remove_file(f).map_err(runtime_err)?;
        }
    }

    let keys = MEMBERS
        .par_iter()
        .map(|&(_, _, depth, _)| generate_key(scheme, (scheme == SchemeId::HASH_MERKLE).then_some(depth)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime_err)?;

    for sub in ["ca", "certs", "attacker", "keys", "configs", "scenarios"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))?;
    }
    let ca_dir = dir.join("ca");
    let mut ca = init_ca("pqc2-demo-ca", scheme, DAYS, &ca_dir)?;
    for ((subject, role, _, config), key) in MEMBERS.iter().zip(&keys) {
        let cert = issue(&mut ca, &ca_dir, subject, *role, &key.public_key(), DAYS)?;
        let write = |path: PathBuf, text: String| fs::write(&path, text).map_err(|e| runtime_err(format!("{}: {e}", path.display())));
        write(dir.join(cert_dir(subject)).join(format!("{subject}.cert")), cert.to_pem())?;
        keyfile::write_secret(&dir.join("keys").join(format!("{subject}.key")), key).map_err(runtime_err)?;
        write(dir.join("configs").join(config), serde_yaml::to_string(&node_config(subject)).map_err(runtime_err)?)?;
    }
    fs::write(dir.join("authz.yaml"), DEMO_POLICY).map_err(runtime_err)?;
    for (name, text) in BUNDLED_SCENARIOS {
        fs::write(dir.join("scenarios").join(format!("{name}.yaml")), text).map_err(runtime_err)?;
    }
    println!("demo assets written to {}", dir.display());
    println!("  pqc2 broker --config {}", dir.join("configs/broker.yaml").display());
    println!("  pqc2 agent run --config {}", dir.join("configs/agent.yaml").display());
    println!("  pqc2 ground run --config {} --console-port 8080", dir.join("configs/ground.yaml").display());
    println!("  pqc2 scenario run table1-demo");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::nodes::{prepare, prepare_broker, NodeKind};
    use crate::cli::BrokerArgs;

    #[test]
    fn generated_configs_validate() {
        let dir = tempfile::tempdir().unwrap();
        init(dir.path(), "rsa-2048", false).unwrap();
        assert!(init(dir.path(), "rsa-2048", false).is_err());
        for (kind, file) in [
            (NodeKind::Agent, "agent.yaml"),
            (NodeKind::Ground, "ground.yaml"),
            (NodeKind::Monitor, "monitor.yaml"),
            (NodeKind::Relay, "relay.yaml"),
        ] {
            prepare(kind, Some(&dir.path().join("configs").join(file))).unwrap();
        }
        let args = BrokerArgs {
            config: Some(dir.path().join("configs/broker.yaml")),
            listen: None,
            authz: None,
            ca: None,
            cert: None,
            key: None,
            mode: None,
            capture: None,
            event_log: None,
            suites: None,
        };
        prepare_broker(&args).unwrap();
    }
}
