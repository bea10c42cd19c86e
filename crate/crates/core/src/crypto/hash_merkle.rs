//! Lamport one-time signatures over SHA-256 under a Merkle tree.
//!
//! Leaf `i` owns 256 × 2 secrets, `SHA-256(seed ‖ "ots" ‖ i:u32 ‖ j:u16 ‖ b:u8)`
//! for bit position `j` and bit value `b`. Each public value is the hash of its
//! secret; the leaf is the hash of all 512 public values in `(j, b)` order.
//! The public key is the Merkle root over `2^depth` leaves.
//!
//! Signature layout for a `depth`-deep tree:
//!
//! ```text
//! reveal[256 × 32]      secret for the message-digest bit at each position
//! complement[256 × 32]  public value for the opposite bit
//! index: u32 BE
//! auth_path[depth × 32] siblings from the leaf level up
//! ```
//!
//! The complement half is required: a verifier can only recompute the public
//! values it was given preimages for.

use rand::rngs::OsRng;
use rand::RngCore;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::sync::Arc;

use super::{
    CryptoError, SchemeDescriptor, SchemeId, SchemeKind, Signature, SignatureKeyPair,
    SignatureScheme, Signer,
};
use crate::codec::Reader;

pub const DEFAULT_DEPTH: u8 = 10;
/// Envelopes carry the OTS index as a u16.
pub const MAX_DEPTH: u8 = 16;

const BITS: usize = 256;
const N: usize = 32;
const HALF: usize = BITS * N;
/// Byte offset of the big-endian leaf index inside a signature.
pub const INDEX_OFFSET: usize = 2 * HALF;
const FIXED_LEN: usize = INDEX_OFFSET + 4;
const SECRET_LEN: usize = 32 + 1 + 4;

pub type Digest32 = [u8; 32];

pub fn signature_len(depth: u8) -> usize {
    FIXED_LEN + N * depth as usize
}

/// Fold of `SHA-256(left ‖ right)` pairs up to a single root.
pub fn merkle_root(leaves: &[Digest32]) -> Result<Digest32, CryptoError> {
    if leaves.is_empty() || !leaves.len().is_power_of_two() {
        return Err(CryptoError::BadLeafCount(leaves.len()));
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level.chunks(2).map(|p| hash_pair(&p[0], &p[1])).collect();
    }
    Ok(level[0])
}

fn hash_pair(left: &Digest32, right: &Digest32) -> Digest32 {
    let mut h = Sha256::new();
    h.update(left);
    h.update(right);
    h.finalize().into()
}

fn ots_secret(seed: &[u8; 32], leaf: u32, bit: u16, value: u8) -> Digest32 {
    let mut h = Sha256::new();
    h.update(seed);
    h.update(b"ots");
    h.update(leaf.to_be_bytes());
    h.update(bit.to_be_bytes());
    h.update([value]);
    h.finalize().into()
}

fn ots_public(seed: &[u8; 32], leaf: u32, bit: u16, value: u8) -> Digest32 {
    Sha256::digest(ots_secret(seed, leaf, bit, value)).into()
}

fn leaf_hash(seed: &[u8; 32], leaf: u32) -> Digest32 {
    let mut h = Sha256::new();
    for j in 0..BITS as u16 {
        h.update(ots_public(seed, leaf, j, 0));
        h.update(ots_public(seed, leaf, j, 1));
    }
    h.finalize().into()
}

fn digest_bit(digest: &Digest32, j: usize) -> u8 {
    (digest[j >> 3] >> (7 - (j & 7))) & 1
}

/// Reads the leaf index out of a signature without validating the rest.
pub fn embedded_index(signature: &[u8]) -> Option<u32> {
    let b = signature.get(INDEX_OFFSET..FIXED_LEN)?;
    Some(u32::from_be_bytes(b.try_into().ok()?))
}

/// Every level of the tree, leaves first.
struct Tree {
    levels: Vec<Vec<Digest32>>,
}

impl Tree {
    fn build(seed: &[u8; 32], depth: u8) -> Self {
        let leaves: Vec<Digest32> =
            (0..1u32 << depth).into_par_iter().map(|i| leaf_hash(seed, i)).collect();
        let mut levels = vec![leaves];
        while levels.last().map_or(0, Vec::len) > 1 {
            let next = levels
                .last()
                .unwrap()
                .chunks(2)
                .map(|p| hash_pair(&p[0], &p[1]))
                .collect();
            levels.push(next);
        }
        Self { levels }
    }

    fn root(&self) -> Digest32 {
        self.levels.last().expect("tree has a root")[0]
    }

    fn auth_path(&self, mut index: usize) -> Vec<Digest32> {
        let depth = self.levels.len() - 1;
        let mut path = Vec::with_capacity(depth);
        for level in &self.levels[..depth] {
            path.push(level[index ^ 1]);
            index >>= 1;
        }
        path
    }
}

pub struct MerkleSigner {
    seed: [u8; 32],
    depth: u8,
    next_index: u32,
    tree: Arc<Tree>,
}

impl MerkleSigner {
    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn next_index(&self) -> u32 {
        self.next_index
    }

    fn capacity(&self) -> u64 {
        1u64 << self.depth
    }
}

impl Signer for MerkleSigner {
    fn sign(&mut self, message: &[u8]) -> Result<Signature, CryptoError> {
        if u64::from(self.next_index) >= self.capacity() {
            return Err(CryptoError::KeyExhausted);
        }
        let index = self.next_index;
        self.next_index += 1;

        let digest: Digest32 = Sha256::digest(message).into();
        let mut out = Vec::with_capacity(signature_len(self.depth));
        for j in 0..BITS {
            out.extend_from_slice(&ots_secret(&self.seed, index, j as u16, digest_bit(&digest, j)));
        }
        for j in 0..BITS {
            out.extend_from_slice(&ots_public(&self.seed, index, j as u16, 1 - digest_bit(&digest, j)));
        }
        out.extend_from_slice(&index.to_be_bytes());
        for node in self.tree.auth_path(index as usize) {
            out.extend_from_slice(&node);
        }
        Ok(Signature { scheme: SchemeId::HASH_MERKLE, bytes: out, ots_index: Some(index) })
    }

    fn remaining_uses(&self) -> Option<u64> {
        Some(self.capacity() - u64::from(self.next_index))
    }

    fn secret_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SECRET_LEN);
        out.extend_from_slice(&self.seed);
        out.push(self.depth);
        out.extend_from_slice(&self.next_index.to_be_bytes());
        out
    }
}

/// Generates a key from a fresh random seed.
pub fn keygen_random(depth: u8) -> Result<SignatureKeyPair, CryptoError> {
    let mut seed = [0u8; 32];
    OsRng.fill_bytes(&mut seed);
    keygen_with_depth(&seed, depth)
}

/// Deterministic key generation for an explicit tree depth.
pub fn keygen_with_depth(seed: &[u8; 32], depth: u8) -> Result<SignatureKeyPair, CryptoError> {
    restore(seed, depth, 0)
}

fn restore(seed: &[u8; 32], depth: u8, next_index: u32) -> Result<SignatureKeyPair, CryptoError> {
    if depth > MAX_DEPTH {
        return Err(CryptoError::BadKey(format!("merkle depth {depth} exceeds {MAX_DEPTH}")));
    }
    if u64::from(next_index) > 1u64 << depth {
        return Err(CryptoError::BadKey("next index beyond tree capacity".into()));
    }
    let tree = Arc::new(Tree::build(seed, depth));
    let public = tree.root().to_vec();
    let signer = MerkleSigner { seed: *seed, depth, next_index, tree };
    Ok(SignatureKeyPair::new(SchemeId::HASH_MERKLE, public, Box::new(signer)))
}

/// Recomputes the root a signature commits to, or `None` if it is malformed.
fn recover_root(message: &[u8], signature: &[u8]) -> Option<Digest32> {
    if signature.len() < FIXED_LEN || (signature.len() - FIXED_LEN) % N != 0 {
        return None;
    }
    let depth = (signature.len() - FIXED_LEN) / N;
    if depth > MAX_DEPTH as usize {
        return None;
    }
    let mut r = Reader::new(signature);
    let reveal = r.take(HALF).ok()?;
    let complement = r.take(HALF).ok()?;
    let index = r.u32().ok()? as usize;
    if index >> depth != 0 {
        return None;
    }
    let digest: Digest32 = Sha256::digest(message).into();
    let mut leaf = Sha256::new();
    for j in 0..BITS {
        let revealed: Digest32 = Sha256::digest(&reveal[j * N..(j + 1) * N]).into();
        let other = &complement[j * N..(j + 1) * N];
        if digest_bit(&digest, j) == 0 {
            leaf.update(revealed);
            leaf.update(other);
        } else {
            leaf.update(other);
            leaf.update(revealed);
        }
    }
    let mut node: Digest32 = leaf.finalize().into();
    let mut pos = index;
    for _ in 0..depth {
        let sibling: Digest32 = r.array().ok()?;
        node = if pos & 1 == 0 { hash_pair(&node, &sibling) } else { hash_pair(&sibling, &node) };
        pos >>= 1;
    }
    Some(node)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashMerkle;

impl SignatureScheme for HashMerkle {
    fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor {
            scheme_id: SchemeId::HASH_MERKLE,
            kind: SchemeKind::Signature,
            name: "hash-merkle".into(),
            post_quantum: true,
            pubkey_len: 32,
            sig_or_ct_len: 0,
        }
    }

    fn keygen(&self, seed: Option<&[u8; 32]>) -> Result<SignatureKeyPair, CryptoError> {
        let seed = match seed {
            Some(s) => *s,
            None => {
                let mut s = [0u8; 32];
                OsRng.fill_bytes(&mut s);
                s
            }
        };
        keygen_with_depth(&seed, DEFAULT_DEPTH)
    }

    fn load_secret(&self, secret: &[u8]) -> Result<SignatureKeyPair, CryptoError> {
        if secret.len() != SECRET_LEN {
            return Err(CryptoError::BadLength {
                what: "hash-merkle secret key",
                expected: SECRET_LEN,
                got: secret.len(),
            });
        }
        let mut r = Reader::new(secret);
        let seed: [u8; 32] = r.array().expect("length checked");
        let depth = r.u8().expect("length checked");
        let next = r.u32().expect("length checked");
        restore(&seed, depth, next)
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        public_key.len() == N
            && recover_root(message, signature).is_some_and(|root| root.as_slice() == public_key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hexroot(depth: u8) -> String {
        hex::encode(keygen_with_depth(&[0; 32], depth).unwrap().public_key_bytes())
    }

    // Roots computed by testdata/oracle/wire_oracle.py, which derives every
    // leaf from the seed schedule with hashlib alone.
    #[test]
    fn seed_zero_roots_match_enumeration_oracle() {
        assert_eq!(hexroot(0), "74b88bb3c6d1bb8d332c31d864bb21fbf6f854c87c4d1c1970cf4f47089b13b2");
        assert_eq!(hexroot(1), "9b603e8a2a26de7bee94b308212fdde101bb30a76bcaec7b5e845255bb63d5cb");
        assert_eq!(hexroot(2), "c3daf1fa6f6ca32bd8510a0dd6ca66fe1a4bdb6251ff217b1154f715c4032c1d");
        assert_eq!(hexroot(3), "01d3132feafbd08b7cadb9455bbdaa00022d1879845f54b0072a7639b3f7cc65");
    }

    #[test]
    fn default_depth_seed_zero_root() {
        let kp = HashMerkle.keygen(Some(&[0; 32])).unwrap();
        assert_eq!(
            hex::encode(kp.public_key_bytes()),
            "ee3c6f773060eee3867ade914a92bac039d77ab96b4be46a794dce717ff3de4c"
        );
        assert_eq!(kp.remaining_uses(), Some(1024));
    }

    #[test]
    fn merkle_root_of_four_fixed_leaves() {
        let leaves: Vec<Digest32> = (0u8..4).map(|k| Sha256::digest([k]).into()).collect();
        assert_eq!(
            hex::encode(merkle_root(&leaves).unwrap()),
            "9675e04b4ba9dc81b06e81731e2d21caa2c95557a85dcfa3fff70c9ff0f30b2e"
        );
    }

    #[test]
    fn merkle_root_edge_cases() {
        let d = [9u8; 32];
        assert_eq!(merkle_root(&[d]).unwrap(), d);
        assert_eq!(merkle_root(&[d; 3]), Err(CryptoError::BadLeafCount(3)));
        assert_eq!(merkle_root(&[]), Err(CryptoError::BadLeafCount(0)));
    }

    #[test]
    fn signature_length_matches_layout_arithmetic() {
        // 256 revealed secrets + 256 complementary public values, a 4-byte
        // index, and one 32-byte sibling per level.
        for depth in [0u8, 2, 5] {
            let mut kp = keygen_with_depth(&[3; 32], depth).unwrap();
            let sig = kp.sign(b"x").unwrap();
            let expected = 256 * 32 + 256 * 32 + 4 + depth as usize * 32;
            assert_eq!(sig.bytes.len(), expected);
        }
    }

    #[test]
    fn exhaustion_after_capacity() {
        let mut kp = keygen_with_depth(&[1; 32], 2).unwrap();
        for i in 0..4 {
            let sig = kp.sign(b"m").unwrap();
            assert_eq!(sig.ots_index, Some(i));
        }
        assert_eq!(kp.remaining_uses(), Some(0));
        assert_eq!(kp.sign(b"m").unwrap_err(), CryptoError::KeyExhausted);
    }

    #[test]
    fn secret_round_trip_preserves_state() {
        let mut kp = keygen_with_depth(&[5; 32], 3).unwrap();
        kp.sign(b"a").unwrap();
        kp.sign(b"b").unwrap();
        let mut restored = HashMerkle.load_secret(&kp.secret_key()).unwrap();
        assert_eq!(restored.public_key(), kp.public_key());
        assert_eq!(restored.sign(b"c").unwrap().ots_index, Some(2));
    }

    #[test]
    fn malformed_signatures_are_rejected() {
        let kp = keygen_with_depth(&[2; 32], 1).unwrap();
        let pk = kp.public_key_bytes();
        assert!(!HashMerkle.verify(pk, b"m", &[]));
        assert!(!HashMerkle.verify(pk, b"m", &[0u8; FIXED_LEN + 7]));
        assert!(!HashMerkle.verify(&pk[..31], b"m", &[0u8; FIXED_LEN + 32]));
        let mut bad_index = vec![0u8; FIXED_LEN + 32];
        bad_index[INDEX_OFFSET..FIXED_LEN].copy_from_slice(&5u32.to_be_bytes());
        assert!(!HashMerkle.verify(pk, b"m", &bad_index));
    }
}
