//! Key files: `PQK1`/`PQP1` binary layouts inside `PQC2 KEY` armor.
//!
//! ```text
//! magic(4) ‖ scheme_id: u16 BE ‖ len: u32 BE ‖ key material
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{load_signature_key, CryptoError, PublicKey, SchemeId, SignatureKeyPair};
use crate::armor::{self, ArmorError, KEY_LABEL};
use crate::codec::{CodecError, Reader, Writer};

pub const SECRET_MAGIC: &[u8; 4] = b"PQK1";
pub const PUBLIC_MAGIC: &[u8; 4] = b"PQP1";

#[derive(Debug, Error)]
pub enum KeyFileError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Armor(#[from] ArmorError),
    #[error("malformed key file: {0}")]
    Malformed(#[from] CodecError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

fn encode(magic: &[u8; 4], scheme: SchemeId, material: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(magic).u16(scheme.0);
    w.bytes32("key material", material).expect("key material fits u32");
    w.finish()
}

fn decode<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(SchemeId, &'a [u8]), CodecError> {
    let mut r = Reader::new(bytes);
    r.expect(magic)?;
    let scheme = SchemeId(r.u16()?);
    let material = r.bytes32()?;
    r.finish()?;
    Ok((scheme, material))
}

pub fn encode_secret(keypair: &SignatureKeyPair) -> Vec<u8> {
    encode(SECRET_MAGIC, keypair.scheme(), &keypair.secret_key())
}

pub fn decode_secret(bytes: &[u8]) -> Result<SignatureKeyPair, KeyFileError> {
    let (scheme, material) = decode(SECRET_MAGIC, bytes)?;
    Ok(load_signature_key(scheme, material)?)
}

pub fn encode_public(key: &PublicKey) -> Vec<u8> {
    encode(PUBLIC_MAGIC, key.scheme, &key.bytes)
}

pub fn decode_public(bytes: &[u8]) -> Result<PublicKey, KeyFileError> {
    let (scheme, material) = decode(PUBLIC_MAGIC, bytes)?;
    Ok(PublicKey::new(scheme, material.to_vec()))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> KeyFileError + '_ {
    move |source| KeyFileError::Io { path: path.display().to_string(), source }
}

/// Writes via a temporary file and rename so a crash never leaves a torn key.
pub fn write_secret(path: &Path, keypair: &SignatureKeyPair) -> Result<(), KeyFileError> {
    let text = armor::armor(KEY_LABEL, &encode_secret(keypair));
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_secret(path: &Path) -> Result<SignatureKeyPair, KeyFileError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    decode_secret(&armor::dearmor(KEY_LABEL, &text)?)
}

pub fn write_public(path: &Path, key: &PublicKey) -> Result<(), KeyFileError> {
    fs::write(path, armor::armor(KEY_LABEL, &encode_public(key))).map_err(io_err(path))
}

pub fn read_public(path: &Path) -> Result<PublicKey, KeyFileError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    decode_public(&armor::dearmor(KEY_LABEL, &text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash_merkle::keygen_with_depth;

    #[test]
    fn secret_file_keeps_ots_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("node.key");
        let mut kp = keygen_with_depth(&[4; 32], 2).unwrap();
        kp.sign(b"one").unwrap();
        write_secret(&path, &kp).unwrap();
        let mut loaded = read_secret(&path).unwrap();
        assert_eq!(loaded.public_key(), kp.public_key());
        assert_eq!(loaded.remaining_uses(), Some(3));
        assert_eq!(loaded.sign(b"two").unwrap().ots_index, Some(1));
        assert!(fs::read_to_string(&path).unwrap().starts_with("-----BEGIN PQC2 KEY-----"));
    }

    #[test]
    fn public_magic_is_checked() {
        let kp = keygen_with_depth(&[4; 32], 0).unwrap();
        let bytes = encode_public(&kp.public_key());
        assert_eq!(&bytes[..4], b"PQP1");
        assert_eq!(decode_public(&bytes).unwrap(), kp.public_key());
        assert!(matches!(decode_secret(&bytes), Err(KeyFileError::Malformed(CodecError::BadMagic))));
    }
}
