use kem::{Decapsulate, Encapsulate};
use ml_kem::{Encoded, EncodedSizeUser, KemCore};
use rand::rngs::OsRng;
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use super::{CryptoError, KemKeyPair, KemScheme, SchemeDescriptor, SchemeId, SchemeKind, SharedSecret};

/// X25519 used as a KEM: the ciphertext is an ephemeral public key and the
/// secret is `SHA-256(label ‖ dh ‖ ct ‖ pk)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct X25519Kem;

fn x25519_secret(dh: &[u8; 32], ct: &[u8], pk: &[u8]) -> Result<SharedSecret, CryptoError> {
    if dh.iter().all(|&b| b == 0) {
        return Err(CryptoError::DecapsulationFailure);
    }
    let mut h = Sha256::new();
    h.update(b"pqc2-x25519-kem");
    h.update(dh);
    h.update(ct);
    h.update(pk);
    Ok(SharedSecret(h.finalize().into()))
}

fn array32(b: &[u8], what: &'static str) -> Result<[u8; 32], CryptoError> {
    b.try_into().map_err(|_| CryptoError::BadLength { what, expected: 32, got: b.len() })
}

impl KemScheme for X25519Kem {
    fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor {
            scheme_id: SchemeId::X25519,
            kind: SchemeKind::Kem,
            name: "x25519".into(),
            post_quantum: false,
            pubkey_len: 32,
            sig_or_ct_len: 32,
        }
    }

    fn keygen(&self) -> KemKeyPair {
        let secret = StaticSecret::random_from_rng(OsRng);
        let public = XPublic::from(&secret);
        KemKeyPair {
            scheme: SchemeId::X25519,
            public_key: public.as_bytes().to_vec(),
            secret_key: secret.to_bytes().to_vec(),
        }
    }

    fn encapsulate(&self, public_key: &[u8]) -> Result<(Vec<u8>, SharedSecret), CryptoError> {
        let peer = XPublic::from(array32(public_key, "x25519 public key")?);
        let eph = StaticSecret::random_from_rng(OsRng);
        let ct = XPublic::from(&eph).as_bytes().to_vec();
        let dh = eph.diffie_hellman(&peer);
        let ss = x25519_secret(dh.as_bytes(), &ct, public_key)?;
        Ok((ct, ss))
    }

    fn decapsulate(&self, secret_key: &[u8], ciphertext: &[u8]) -> Result<SharedSecret, CryptoError> {
        let secret = StaticSecret::from(array32(secret_key, "x25519 secret key")?);
        let eph = XPublic::from(array32(ciphertext, "x25519 ciphertext").map_err(|_| CryptoError::DecapsulationFailure)?);
        let dh = secret.diffie_hellman(&eph);
        let pk = XPublic::from(&secret);
        x25519_secret(dh.as_bytes(), ciphertext, pk.as_bytes())
    }
}

/// ML-KEM-768 adapter (FIPS 203).
#[derive(Debug, Clone, Copy, Default)]
pub struct MlKem768;

type Dk = <ml_kem::MlKem768 as KemCore>::DecapsulationKey;
type Ek = <ml_kem::MlKem768 as KemCore>::EncapsulationKey;

const ML_KEM_768_CT: usize = 1088;

impl KemScheme for MlKem768 {
    fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor {
            scheme_id: SchemeId::ML_KEM_768,
            kind: SchemeKind::Kem,
            name: "ml-kem-768".into(),
            post_quantum: true,
            pubkey_len: 1184,
            sig_or_ct_len: ML_KEM_768_CT,
        }
    }

    fn keygen(&self) -> KemKeyPair {
        let (dk, ek) = ml_kem::MlKem768::generate(&mut OsRng);
        KemKeyPair {
            scheme: SchemeId::ML_KEM_768,
            public_key: ek.as_bytes().to_vec(),
            secret_key: dk.as_bytes().to_vec(),
        }
    }

    fn encapsulate(&self, public_key: &[u8]) -> Result<(Vec<u8>, SharedSecret), CryptoError> {
        let enc = Encoded::<Ek>::try_from(public_key).map_err(|_| CryptoError::BadLength {
            what: "ml-kem-768 public key",
            expected: 1184,
            got: public_key.len(),
        })?;
        let ek = Ek::from_bytes(&enc);
        let (ct, ss) = ek.encapsulate(&mut OsRng).map_err(|_| CryptoError::BadKey("ml-kem encapsulation".into()))?;
        let mut out = [0u8; 32];
        out.copy_from_slice(ss.as_slice());
        Ok((ct.to_vec(), SharedSecret(out)))
    }

    fn decapsulate(&self, secret_key: &[u8], ciphertext: &[u8]) -> Result<SharedSecret, CryptoError> {
        let enc = Encoded::<Dk>::try_from(secret_key)
            .map_err(|_| CryptoError::BadKey("ml-kem-768 secret key length".into()))?;
        let dk = Dk::from_bytes(&enc);
        if ciphertext.len() != ML_KEM_768_CT {
            return Err(CryptoError::DecapsulationFailure);
        }
        let ct = ml_kem::Ciphertext::<ml_kem::MlKem768>::try_from(ciphertext)
            .map_err(|_| CryptoError::DecapsulationFailure)?;
        let ss = dk.decapsulate(&ct).map_err(|_| CryptoError::DecapsulationFailure)?;
        let mut out = [0u8; 32];
        out.copy_from_slice(ss.as_slice());
        Ok(SharedSecret(out))
    }
}
