//! PEM-style base64 armor around binary blobs.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

pub const CERT_LABEL: &str = "PQC2 CERT";
pub const KEY_LABEL: &str = "PQC2 KEY";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArmorError {
    #[error("missing BEGIN {0} line")]
    MissingBegin(String),
    #[error("missing END {0} line")]
    MissingEnd(String),
    #[error("invalid base64 body")]
    BadBase64,
}

pub fn armor(label: &str, data: &[u8]) -> String {
    let body = STANDARD.encode(data);
    let mut out = format!("-----BEGIN {label}-----\n");
    for chunk in body.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}

pub fn dearmor(label: &str, text: &str) -> Result<Vec<u8>, ArmorError> {
    let begin = format!("-----BEGIN {label}-----");
    let end = format!("-----END {label}-----");
    let start = text
        .find(&begin)
        .ok_or_else(|| ArmorError::MissingBegin(label.to_string()))?
        + begin.len();
    let stop = text[start..]
        .find(&end)
        .ok_or_else(|| ArmorError::MissingEnd(label.to_string()))?
        + start;
    let body: String = text[start..stop].chars().filter(|c| !c.is_whitespace()).collect();
    STANDARD.decode(body).map_err(|_| ArmorError::BadBase64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn armor_round_trip() {
        let data: Vec<u8> = (0..=255).collect();
        let text = armor(CERT_LABEL, &data);
        assert!(text.starts_with("-----BEGIN PQC2 CERT-----\n"));
        assert_eq!(dearmor(CERT_LABEL, &text).unwrap(), data);
    }

    #[test]
    fn wrong_label_rejected() {
        let text = armor(KEY_LABEL, b"abc");
        assert!(matches!(dearmor(CERT_LABEL, &text), Err(ArmorError::MissingBegin(_))));
    }
}
