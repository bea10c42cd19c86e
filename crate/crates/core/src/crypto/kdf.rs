use hkdf::Hkdf;
use sha2::Sha256;

use super::CryptoError;

/// 255 × SHA-256 output length.
pub const MAX_KDF_OUTPUT: usize = 255 * 32;

/// HKDF-SHA-256 with an all-zero salt and the label as context info.
pub fn kdf_derive(secret: &[u8], label: &str, length: usize) -> Result<Vec<u8>, CryptoError> {
    if length > MAX_KDF_OUTPUT {
        return Err(CryptoError::LengthTooLarge(length));
    }
    let mut out = vec![0u8; length];
    Hkdf::<Sha256>::new(None, secret)
        .expand(label.as_bytes(), &mut out)
        .map_err(|_| CryptoError::LengthTooLarge(length))?;
    Ok(out)
}
