use std::time::Instant;

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::crypto::{self, hash_merkle, SchemeId, SignatureKeyPair};

use super::{micros, summarize, BenchError};

pub const DEFAULT_SIZES: [usize; 4] = [1_000, 10_000, 100_000, 1_000_000];
const WARMUP: usize = 3;

/// One (scheme, message size) cell. Times are microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignVerifyRecord {
    pub scheme: String,
    pub size_bytes: usize,
    pub reps: usize,
    pub sign_mean_us: f64,
    pub sign_median_us: f64,
    pub sign_p95_us: f64,
    pub verify_mean_us: f64,
    pub verify_median_us: f64,
    pub verify_p95_us: f64,
}

fn keypair_for(scheme: SchemeId, signatures: usize) -> Result<SignatureKeyPair, BenchError> {
    if scheme != SchemeId::HASH_MERKLE {
        return Ok(crypto::sig_keygen(scheme, None)?);
    }
    let depth = (usize::BITS - signatures.saturating_sub(1).leading_zeros()).max(u32::from(hash_merkle::DEFAULT_DEPTH));
    let depth = u8::try_from(depth).map_err(|_| BenchError::BadConfig("too many repetitions".into()))?;
    if depth > hash_merkle::MAX_DEPTH {
        return Err(BenchError::BadConfig(format!("{signatures} signatures exceed one hash-merkle key")));
    }
    Ok(hash_merkle::keygen_random(depth)?)
}

/// Times `reps` sign and verify operations per cell on fresh random
/// messages, after a short untimed warm-up.
pub fn bench_sign_verify(schemes: &[SchemeId], sizes: &[usize], reps: usize) -> Result<Vec<SignVerifyRecord>, BenchError> {
    if reps == 0 {
        return Err(BenchError::BadConfig("reps must be at least 1".into()));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(BenchError::BadConfig("message sizes must be at least 1 byte".into()));
    }
    let mut rng = StdRng::from_entropy();
    let mut out = Vec::with_capacity(schemes.len() * sizes.len());
    for &scheme in schemes {
        let name = crypto::registry().descriptor(scheme)?.name;
        crypto::registry().signature(scheme)?;
        let mut kp = keypair_for(scheme, sizes.len() * (reps + WARMUP))?;
        let public = kp.public_key();
        for &size in sizes {
            let mut msg = vec![0u8; size];
            let (mut sign_us, mut verify_us) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
            for i in 0..reps + WARMUP {
                rng.fill_bytes(&mut msg);
                let t = Instant::now();
                let sig = kp.sign(&msg)?;
                let signed = t.elapsed();
                let t = Instant::now();
                let ok = crypto::verify(&public, &msg, &sig);
                let verified = t.elapsed();
                if !ok {
                    return Err(BenchError::VerificationFailed(format!("{name} signature over {size} bytes")));
                }
                if i >= WARMUP {
                    sign_us.push(micros(signed));
                    verify_us.push(micros(verified));
                }
            }
            let (s, v) = (summarize(&sign_us).expect("reps > 0"), summarize(&verify_us).expect("reps > 0"));
            out.push(SignVerifyRecord {
                scheme: name.to_string(),
                size_bytes: size,
                reps,
                sign_mean_us: s.mean,
                sign_median_us: s.median,
                sign_p95_us: s.p95,
                verify_mean_us: v.mean,
                verify_median_us: v.median,
                verify_p95_us: v.p95,
            });
        }
    }
    Ok(out)
}

/// Ratio of `a`'s to `b`'s mean sign+verify time at `size`, if both were measured.
pub fn comparable_at(records: &[SignVerifyRecord], a: &str, b: &str, size: usize) -> Option<f64> {
    let total = |scheme: &str| {
        records
            .iter()
            .find(|r| r.scheme == scheme && r.size_bytes == size)
            .map(|r| r.sign_mean_us + r.verify_mean_us)
    };
    Some(total(a)? / total(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_reps_is_a_config_error() {
        assert!(matches!(bench_sign_verify(&[SchemeId::HASH_MERKLE], &[10], 0), Err(BenchError::BadConfig(_))));
    }

    #[test]
    fn grid_shape_follows_config() {
        let r = bench_sign_verify(&[SchemeId::HASH_MERKLE], &[16, 64], 2).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|r| r.reps == 2 && r.sign_mean_us > 0.0 && r.verify_p95_us > 0.0));
    }

    #[test]
    fn kem_schemes_are_refused() {
        assert!(bench_sign_verify(&[SchemeId::X25519], &[10], 1).is_err());
    }
}
