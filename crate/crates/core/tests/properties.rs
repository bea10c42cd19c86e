use std::collections::{HashMap, HashSet};
use std::sync::{LazyLock, Mutex};

use proptest::prelude::*;

use pqc2::agents::{estop_payload, pose_step, velocity_payload, AgentConfig, AgentCore, AgentPose, VelocityCommand};
use pqc2::agents::{normalize_angle, Limits, COMMAND_TOPIC, ESTOP_TOPIC};
use pqc2::authz::{policy_load, Action, DEMO_POLICY};
use pqc2::crypto::{self, hash_merkle, PublicKey, SchemeId, SignatureKeyPair};
use pqc2::envelope::{decode_wire, open, seal, Envelope, RejectReason, ReplayDecision, ReplayWindow, SequenceCounter, StalenessPolicy};
use pqc2::pki::{create_ca, CaIdentity, Certificate, Decision, Role, TrustStore, Validity};
use pqc2::ManualClock;

static MERKLE: LazyLock<Mutex<SignatureKeyPair>> =
    LazyLock::new(|| Mutex::new(hash_merkle::keygen_with_depth(&[11; 32], 10).unwrap()));
static RSA: LazyLock<Mutex<SignatureKeyPair>> =
    LazyLock::new(|| Mutex::new(crypto::sig_keygen(SchemeId::RSA_2048, None).unwrap()));

fn ca(name: &str) -> CaIdentity {
    create_ca(name, SchemeId::HASH_MERKLE, Validity::new(0, u64::MAX / 2)).unwrap()
}

static CA_A: LazyLock<Mutex<CaIdentity>> = LazyLock::new(|| Mutex::new(ca("ca-a")));
static CA_B: LazyLock<Mutex<CaIdentity>> = LazyLock::new(|| Mutex::new(ca("ca-b")));
static SUBJECT_KEY: LazyLock<PublicKey> =
    LazyLock::new(|| hash_merkle::keygen_with_depth(&[12; 32], 0).unwrap().public_key());

fn issue(ca: &Mutex<CaIdentity>, subject: &str, role: Role, validity: Validity) -> Certificate {
    ca.lock().unwrap().issue_certificate(subject, role, &SUBJECT_KEY, validity).unwrap()
}

fn role() -> impl Strategy<Value = Role> {
    (0u8..7).prop_map(|c| Role::from_code(c).unwrap())
}

fn subject() -> impl Strategy<Value = String> {
    "[a-z_]{1,24}"
}

fn sign_and_check(kp: &Mutex<SignatureKeyPair>, msg: &[u8]) -> bool {
    let mut kp = kp.lock().unwrap();
    let sig = kp.sign(msg).unwrap();
    crypto::verify(&kp.public_key(), msg, &sig)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hash_merkle_signatures_verify(msg in prop::collection::vec(any::<u8>(), 0..2048)) {
        prop_assert!(sign_and_check(&MERKLE, &msg));
    }

    #[test]
    fn rsa_signatures_verify(msg in prop::collection::vec(any::<u8>(), 0..2048)) {
        prop_assert!(sign_and_check(&RSA, &msg));
    }

    #[test]
    fn cert_decode_inverts_encode(name in subject(), role in role(), start in 0u64..1 << 40, len in 1u64..1 << 30) {
        let cert = issue(&CA_A, &name, role, Validity::new(start, start + len));
        prop_assert_eq!(Certificate::decode(&cert.encode()).unwrap(), cert);
    }

    #[test]
    fn replay_window_matches_explicit_set(seqs in prop::collection::vec(0u64..300, 1..1000)) {
        let mut window = ReplayWindow::new();
        let mut accepted = HashSet::new();
        let mut highest = 0;
        for seq in seqs {
            let want = seq != 0 && !accepted.contains(&seq) && seq + 64 > highest;
            if want {
                accepted.insert(seq);
                highest = highest.max(seq);
            }
            prop_assert_eq!(window.check(seq) == ReplayDecision::Accept, want, "seq {}", seq);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn one_time_indices_never_repeat(msg in prop::collection::vec(any::<u8>(), 0..64)) {
        let mut kp = MERKLE.lock().unwrap();
        let (a, b) = (kp.sign(&msg).unwrap(), kp.sign(&msg).unwrap());
        prop_assert_ne!(a.ots_index, b.ots_index);
        prop_assert!(crypto::verify(&kp.public_key(), &msg, &a) && crypto::verify(&kp.public_key(), &msg, &b));
    }

    #[test]
    fn aead_round_trip_and_bit_flips(
        chacha in any::<bool>(),
        key in prop::array::uniform32(any::<u8>()),
        nonce in prop::array::uniform12(any::<u8>()),
        aad in prop::collection::vec(any::<u8>(), 0..64),
        pt in prop::collection::vec(any::<u8>(), 0..512),
        flip in any::<prop::sample::Index>(),
    ) {
        let scheme = if chacha { SchemeId::CHACHA20_POLY1305 } else { SchemeId::AES_256_GCM };
        let ct = crypto::aead_seal(scheme, &key, &nonce, &aad, &pt).unwrap();
        prop_assert_eq!(crypto::aead_open(scheme, &key, &nonce, &aad, &ct).unwrap(), pt);
        let bit = flip.index(ct.len() * 8);
        let mut bad = ct.clone();
        bad[bit / 8] ^= 1 << (bit % 8);
        prop_assert!(crypto::aead_open(scheme, &key, &nonce, &aad, &bad).is_err());
    }

    #[test]
    fn flipped_certificate_byte_is_denied(name in subject(), role in role(), at in any::<prop::sample::Index>(), x in 1u8..) {
        let cert = issue(&CA_A, &name, role, Validity::new(0, 1 << 40));
        let store = TrustStore::new(vec![CA_A.lock().unwrap().certificate.clone()]).unwrap();
        let mut bytes = cert.encode();
        let i = at.index(bytes.len());
        bytes[i] ^= x;
        if let Ok(tampered) = Certificate::decode(&bytes) {
            prop_assert!(!store.verify_certificate(&tampered, 1000).is_allow(), "flip at {} accepted", i);
        }
    }

    #[test]
    fn foreign_ca_never_verifies(name in subject(), role in role()) {
        let cert = issue(&CA_A, &name, role, Validity::new(0, 1 << 40));
        let other = TrustStore::new(vec![CA_B.lock().unwrap().certificate.clone()]).unwrap();
        prop_assert!(matches!(other.verify_certificate(&cert, 1000), Decision::Deny(_)));
    }

    #[test]
    fn every_envelope_field_is_signed(field in 0usize..6, seq in 1u64..1000, payload in prop::collection::vec(any::<u8>(), 0..128)) {
        let (env, keys) = {
            let mut kp = MERKLE.lock().unwrap();
            let mut counter = SequenceCounter::starting_at(seq);
            let env = seal(&mut kp, "gs", "/command", &mut counter, &payload, &ManualClock::new(5000)).unwrap();
            (env, HashMap::from([("gs".to_string(), kp.public_key()), ("gt".to_string(), kp.public_key())]))
        };
        let mut altered: Envelope = env.clone();
        match field {
            0 => altered.sender = "gt".into(),
            1 => altered.topic = "/e-stop".into(),
            2 => altered.seq += 1,
            3 => altered.timestamp_ms += 1,
            4 => altered.scheme_id = SchemeId::RSA_2048,
            _ => altered.payload.push(0),
        }
        let mut window = ReplayWindow::new();
        prop_assert_eq!(open(&keys, &altered, &mut window, StalenessPolicy::disabled(), 5000), Err(RejectReason::BadSignature));
        prop_assert!(open(&keys, &env, &mut window, StalenessPolicy::disabled(), 5000).is_ok());
        prop_assert_eq!(open(&keys, &env, &mut window, StalenessPolicy::disabled(), 5000), Err(RejectReason::Replay));
    }

    #[test]
    fn removing_a_principal_never_grants(idx in 0usize..64, probe in 0usize..64) {
        let policy = policy_load(DEMO_POLICY).unwrap();
        let principals = ["ground_station", "monitor", "agent", "attacker"];
        let topics = ["/command", "/e-stop", "/status", "/other"];
        let actions = [Action::Publish, Action::Subscribe];
        let pick = |i: usize| (principals[i % 4], topics[(i / 4) % 4], actions[(i / 16) % 2]);
        let (p, t, a) = pick(idx);
        let reduced = policy.without(p, t, a);
        let (qp, qt, qa) = pick(probe);
        let before = policy.check(qp, qt, qa);
        prop_assert_eq!(&before, &policy.check(qp, qt, qa));
        prop_assert!(before.allow || !reduced.check(qp, qt, qa).allow);
    }

    #[test]
    fn pose_steps_stay_bounded(
        steps in prop::collection::vec((-2.0f64..=2.0, -1.5f64..=1.5), 1..200),
        theta in -10.0f64..10.0,
    ) {
        let limits = Limits::default();
        let mut pose = AgentPose::new(0.0, 0.0, normalize_angle(theta));
        for (v, w) in steps {
            let cmd = VelocityCommand::new(v, w, &limits).unwrap();
            let next = pose_step(pose, cmd, 0.01);
            prop_assert!(next.distance_to(&pose) <= limits.v_max * 0.01 + 1e-12);
            prop_assert!(next.theta > -std::f64::consts::PI && next.theta <= std::f64::consts::PI);
            pose = next;
        }
    }

    #[test]
    fn estop_dominates_later_commands(cmds in prop::collection::vec((-2.0f64..=2.0, -1.5f64..=1.5, 1u64..40), 1..30)) {
        let mut core = AgentCore::new(AgentConfig::default());
        core.apply(COMMAND_TOPIC, &velocity_payload(1.0, 0.5), 1).unwrap();
        core.advance_ticks(15);
        core.apply(ESTOP_TOPIC, &estop_payload(true), 1).unwrap();
        let frozen = core.pose();
        for (i, (v, w, ticks)) in cmds.into_iter().enumerate() {
            core.apply(COMMAND_TOPIC, &velocity_payload(v, w), i as u64 + 2).unwrap();
            core.advance_ticks(ticks);
            prop_assert_eq!(core.pose(), frozen);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn decode_wire_is_total(bytes in prop::collection::vec(any::<u8>(), 0..512), prefix in any::<bool>()) {
        // Half the inputs start like a real envelope so parsing gets past the magic.
        let input = if prefix { [b"PQC2pqc2-envelope-v1\x01".as_slice(), &bytes].concat() } else { bytes };
        let _ = decode_wire(&input);
    }
}
