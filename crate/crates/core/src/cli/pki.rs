use std::fs;
use std::path::{Path, PathBuf};

use crate::clock::{Clock, SystemClock};
use crate::crypto::{self, hash_merkle, keyfile, SchemeDescriptor, SchemeId, SchemeKind};
use crate::pki::{create_ca_with_key, CaIdentity, Certificate, Decision, Role, TrustStore, Validity};

use super::{config_err, runtime_err, CliError, PkiCommand};

pub const CA_CERT: &str = "ca.cert";
pub const CA_KEY: &str = "ca.key";
pub const CA_SERIAL: &str = "serial";

pub fn run(cmd: PkiCommand) -> Result<(), CliError> {
    match cmd {
        PkiCommand::InitCa { name, scheme, out, days } => {
            let scheme = signature_scheme(&scheme)?;
            let ca = init_ca(&name, scheme.scheme_id, days, &out)?;
            println!("created CA {:?} ({}) in {}", ca.name, scheme.name, out.display());
            Ok(())
        }
        PkiCommand::Keygen { scheme, depth, out, public } => {
            let scheme = signature_scheme(&scheme)?;
            refuse_existing(&[&out])?;
            check_depth(scheme.scheme_id, depth)?;
            let kp = generate_key(scheme.scheme_id, depth).map_err(runtime_err)?;
            keyfile::write_secret(&out, &kp).map_err(runtime_err)?;
            keyfile::write_public(&public, &kp.public_key()).map_err(runtime_err)?;
            println!("wrote {} secret key {} and public key {}", scheme.name, out.display(), public.display());
            Ok(())
        }
        PkiCommand::Issue { ca, subject, role, pubkey, days, out } => {
            let role: Role = role.parse().map_err(config_err)?;
            if subject.is_empty() {
                return Err(config_err("--subject must not be empty"));
            }
            let public = keyfile::read_public(&pubkey).map_err(config_err)?;
            let mut identity = load_ca(&ca)?;
            let cert = issue(&mut identity, &ca, &subject, role, &public, days)?;
            fs::write(&out, cert.to_pem()).map_err(|e| runtime_err(format!("{}: {e}", out.display())))?;
            println!("issued serial {} for {subject} ({role}) to {}", cert.serial, out.display());
            Ok(())
        }
        PkiCommand::Verify { ca, cert } => {
            let ca_cert = if ca.is_dir() { ca.join(CA_CERT) } else { ca };
            let store = TrustStore::new(vec![read_cert(&ca_cert)?]).map_err(config_err)?;
            let cert = read_cert(&cert)?;
            match store.verify_certificate(&cert, SystemClock.now_secs()) {
                Decision::Allow => {
                    println!("{} ({}): valid, serial {}", cert.subject, cert.role, cert.serial);
                    Ok(())
                }
                Decision::Deny(r) => Err(CliError::Runtime(format!("{}: {r:?}", cert.subject))),
            }
        }
    }
}

pub fn signature_scheme(name: &str) -> Result<SchemeDescriptor, CliError> {
    let d = crypto::scheme_by_name(name).map_err(config_err)?;
    if d.kind != SchemeKind::Signature || d.scheme_id == SchemeId::UNSIGNED {
        return Err(config_err(format!("{name} is not a signature scheme")));
    }
    Ok(d)
}

fn check_depth(scheme: SchemeId, depth: Option<u8>) -> Result<(), CliError> {
    match depth {
        Some(_) if scheme != SchemeId::HASH_MERKLE => Err(config_err("--depth only applies to hash-merkle keys")),
        Some(d) if d == 0 || d > hash_merkle::MAX_DEPTH => {
            Err(config_err(format!("--depth must be between 1 and {}", hash_merkle::MAX_DEPTH)))
        }
        _ => Ok(()),
    }
}

pub fn generate_key(scheme: SchemeId, depth: Option<u8>) -> Result<crypto::SignatureKeyPair, crypto::CryptoError> {
    match depth {
        Some(d) if scheme == SchemeId::HASH_MERKLE => hash_merkle::keygen_random(d),
        _ => crypto::sig_keygen(scheme, None),
    }
}

pub fn refuse_existing(paths: &[&Path]) -> Result<(), CliError> {
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(config_err(format!("{} already exists", p.display()))),
        None => Ok(()),
    }
}

pub fn read_cert(path: &Path) -> Result<Certificate, CliError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    Certificate::from_pem(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// Creates `dir` with the CA certificate, key and serial counter.
pub fn init_ca(name: &str, scheme: SchemeId, days: u64, dir: &Path) -> Result<CaIdentity, CliError> {
    if name.is_empty() {
        return Err(config_err("--name must not be empty"));
    }
    if days == 0 {
        return Err(config_err("--days must be positive"));
    }
    let files: Vec<PathBuf> = [CA_CERT, CA_KEY, CA_SERIAL].iter().map(|f| dir.join(f)).collect();
    refuse_existing(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let keypair = crypto::sig_keygen(scheme, None).map_err(runtime_err)?;
    let validity = Validity::days_from(SystemClock.now_secs(), days);
    let ca = create_ca_with_key(name, keypair, validity).map_err(runtime_err)?;
    fs::create_dir_all(dir).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))?;
    save_ca(&ca, dir)?;
    fs::write(dir.join(CA_CERT), ca.certificate.to_pem()).map_err(runtime_err)?;
    Ok(ca)
}

fn save_ca(ca: &CaIdentity, dir: &Path) -> Result<(), CliError> {
    keyfile::write_secret(&dir.join(CA_KEY), &ca.keypair).map_err(runtime_err)?;
    fs::write(dir.join(CA_SERIAL), format!("{}\n", ca.next_serial)).map_err(runtime_err)
}

pub fn load_ca(dir: &Path) -> Result<CaIdentity, CliError> {
    let certificate = read_cert(&dir.join(CA_CERT))?;
    let keypair = keyfile::read_secret(&dir.join(CA_KEY)).map_err(config_err)?;
    if keypair.public_key_bytes() != certificate.subject_public_key.as_slice() {
        return Err(config_err(format!("{}: key does not match the CA certificate", dir.display())));
    }
    let serial_path = dir.join(CA_SERIAL);
    let next_serial = fs::read_to_string(&serial_path)
        .map_err(|e| config_err(format!("{}: {e}", serial_path.display())))?
        .trim()
        .parse()
        .map_err(|e| config_err(format!("{}: {e}", serial_path.display())))?;
    Ok(CaIdentity { name: certificate.subject.clone(), keypair, next_serial, certificate })
}

/// Issues a certificate and persists the CA's advanced state before
/// returning it.
pub fn issue(
    ca: &mut CaIdentity,
    dir: &Path,
    subject: &str,
    role: Role,
    public: &crypto::PublicKey,
    days: u64,
) -> Result<Certificate, CliError> {
    if days == 0 {
        return Err(config_err("--days must be positive"));
    }
    let validity = Validity::days_from(SystemClock.now_secs(), days);
    let cert = ca.issue_certificate(subject, role, public, validity).map_err(runtime_err)?;
    save_ca(ca, dir)?;
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ca_round_trip_advances_serial() {
        let dir = tempfile::tempdir().unwrap();
        let ca_dir = dir.path().join("ca");
        init_ca("demo", SchemeId::HASH_MERKLE, 30, &ca_dir).unwrap();
        assert!(init_ca("demo", SchemeId::HASH_MERKLE, 30, &ca_dir).is_err());
        let key = hash_merkle::keygen_random(2).unwrap();
        let mut ca = load_ca(&ca_dir).unwrap();
        let first = issue(&mut ca, &ca_dir, "agent", Role::Agent, &key.public_key(), 30).unwrap();
        let mut ca = load_ca(&ca_dir).unwrap();
        let second = issue(&mut ca, &ca_dir, "relay", Role::Relay, &key.public_key(), 30).unwrap();
        assert_eq!((first.serial, second.serial), (1, 2));
        assert_ne!(
            first.issuer_signature.ots_index,
            second.issuer_signature.ots_index
        );
    }

    #[test]
    fn kem_names_are_not_signature_schemes() {
        assert!(signature_scheme("ml-kem-768").is_err());
        assert!(signature_scheme("rsa-2048").is_ok());
    }
}
