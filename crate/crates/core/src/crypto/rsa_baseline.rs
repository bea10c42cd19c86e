//! RSA-2048 PKCS#1 v1.5 over SHA-256: the classical timing baseline.

use rand::rngs::OsRng;
use rsa::pkcs1v15::{Signature as RsaSignature, SigningKey, VerifyingKey};
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey};
use rsa::signature::{SignatureEncoding, Signer as _, Verifier as _};
use rsa::{RsaPrivateKey, RsaPublicKey};
use sha2::Sha256;

use super::{
    CryptoError, SchemeDescriptor, SchemeId, SchemeKind, Signature, SignatureKeyPair,
    SignatureScheme, Signer,
};

#[derive(Debug, Clone, Copy, Default)]
pub struct Rsa2048;

struct RsaSigner {
    key: SigningKey<Sha256>,
    der: Vec<u8>,
}

impl Signer for RsaSigner {
    fn sign(&mut self, message: &[u8]) -> Result<Signature, CryptoError> {
        let sig = self.key.sign(message);
        Ok(Signature { scheme: SchemeId::RSA_2048, bytes: sig.to_vec(), ots_index: None })
    }

    fn remaining_uses(&self) -> Option<u64> {
        None
    }

    fn secret_bytes(&self) -> Vec<u8> {
        self.der.clone()
    }
}

fn keypair_from(private: RsaPrivateKey) -> Result<SignatureKeyPair, CryptoError> {
    let public = RsaPublicKey::from(&private)
        .to_public_key_der()
        .map_err(|e| CryptoError::BadKey(e.to_string()))?
        .as_bytes()
        .to_vec();
    let der = private
        .to_pkcs8_der()
        .map_err(|e| CryptoError::BadKey(e.to_string()))?
        .as_bytes()
        .to_vec();
    let signer = RsaSigner { key: SigningKey::<Sha256>::new(private), der };
    Ok(SignatureKeyPair::new(SchemeId::RSA_2048, public, Box::new(signer)))
}

impl SignatureScheme for Rsa2048 {
    fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor {
            scheme_id: SchemeId::RSA_2048,
            kind: SchemeKind::Signature,
            name: "rsa-2048".into(),
            post_quantum: false,
            pubkey_len: 0,
            sig_or_ct_len: 256,
        }
    }

    fn keygen(&self, seed: Option<&[u8; 32]>) -> Result<SignatureKeyPair, CryptoError> {
        if seed.is_some() {
            return Err(CryptoError::SeedUnsupported(SchemeId::RSA_2048.0));
        }
        let private =
            RsaPrivateKey::new(&mut OsRng, 2048).map_err(|e| CryptoError::BadKey(e.to_string()))?;
        keypair_from(private)
    }

    fn load_secret(&self, secret: &[u8]) -> Result<SignatureKeyPair, CryptoError> {
        let private =
            RsaPrivateKey::from_pkcs8_der(secret).map_err(|e| CryptoError::BadKey(e.to_string()))?;
        keypair_from(private)
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        let Ok(public) = RsaPublicKey::from_public_key_der(public_key) else {
            return false;
        };
        let Ok(sig) = RsaSignature::try_from(signature) else {
            return false;
        };
        VerifyingKey::<Sha256>::new(public).verify(message, &sig).is_ok()
    }
}
