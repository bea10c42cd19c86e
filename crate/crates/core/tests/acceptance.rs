//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! ```text
//! cargo test --test acceptance              # all criteria
//! cargo test --test acceptance -- replay    # names containing "replay"
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};

use pqc2::agents::{
    bundled_scenario, estop_payload, pose_step, scenario_run, velocity_payload, AgentConfig, AgentCore, AgentPose, Cast,
    VelocityCommand, COMMAND_TOPIC, ESTOP_TOPIC,
};
use pqc2::bus::{capture_load, capture_scan, BusMode};
use pqc2::channel::{accept_secure, connect_secure, read_frame, ChannelConfig, ChannelError, CipherSuite};
use pqc2::crypto::{self, hash_merkle, CryptoError, SchemeId};
use pqc2::envelope::{seal, SequenceCounter};
use pqc2::pki::{create_ca_with_key, Role, Validity};
use pqc2::{ManualClock, SystemClock};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime")
}

fn pqc2(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_pqc2"))
        .args(args)
        .env("PQC2_LOG", "error")
        .output()
        .map_err(|e| format!("cannot run pqc2: {e}"))
}

fn testdata(rel: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata").join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())).trim().to_string()
}

// ---------------------------------------------------------------------------

fn table1() -> Outcome {
    // Transcribed from the published authorization table, plus the mobile
    // agent's row which the table leaves out.
    let mut expected: BTreeMap<(&str, &str, &str), bool> = BTreeMap::new();
    let rows: [(&str, &str, [bool; 2]); 12] = [
        ("ground_station", "/command", [true, true]),
        ("ground_station", "/e-stop", [true, true]),
        ("ground_station", "/status", [true, true]),
        ("monitor", "/command", [false, false]),
        ("monitor", "/e-stop", [true, false]),
        ("monitor", "/status", [true, true]),
        ("attacker", "/command", [false, false]),
        ("attacker", "/e-stop", [false, false]),
        ("attacker", "/status", [false, false]),
        ("agent", "/command", [false, true]),
        ("agent", "/e-stop", [false, true]),
        ("agent", "/status", [true, false]),
    ];
    for (who, topic, [publish, subscribe]) in rows {
        expected.insert((who, topic, "publish"), publish);
        expected.insert((who, topic, "subscribe"), subscribe);
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report_path = dir.path().join("table1.json");
    let out = pqc2(&["scenario", "run", "table1-demo", "--report", report_path.to_str().unwrap()])?;
    ensure(out.status.code() == Some(0), || format!("exit status {:?}", out.status.code()))?;
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let decisions = report["decisions"].as_array().ok_or("report has no decisions")?;
    let mut seen: BTreeMap<(String, String, String), bool> = BTreeMap::new();
    for d in decisions {
        let key = (
            d["principal"].as_str().unwrap_or_default().to_string(),
            d["topic"].as_str().unwrap_or_default().to_string(),
            d["action"].as_str().unwrap_or_default().to_string(),
        );
        let allowed = d["allowed"].as_bool().ok_or("decision without allowed flag")?;
        ensure(seen.insert(key.clone(), allowed).is_none(), || format!("duplicate decision {key:?}"))?;
    }
    let want: BTreeMap<(String, String, String), bool> =
        expected.iter().map(|(&(p, t, a), &v)| ((p.into(), t.into(), a.into()), v)).collect();
    let wrong: Vec<_> = want.iter().filter(|(k, v)| seen.get(*k) != Some(v)).map(|(k, _)| k).collect();
    ensure(wrong.is_empty() && seen.len() == want.len(), || {
        format!("{} of {} decisions differ: {wrong:?}; {} reported", wrong.len(), want.len(), seen.len())
    })?;
    let table_rows = want.keys().filter(|(p, _, _)| p != "agent").count();
    Ok(format!("{table_rows} table decisions + {} agent decisions match", want.len() - table_rows))
}

fn drop_semantics() -> Outcome {
    let spec = bundled_scenario("attacks").ok_or("attacks scenario missing")?;
    let report = runtime().block_on(scenario_run(&spec)).map_err(|e| e.to_string())?;
    let step = |i: usize| report.steps.get(i).ok_or(format!("step {i} missing"));

    let valid = step(0)?;
    ensure(valid.delivered == Some(1000), || format!("valid commands delivered {:?} of 1000", valid.delivered))?;
    let false_rejects: usize = ["BadSignature", "Replay", "UnknownSender", "Stale"]
        .iter()
        .map(|k| valid.events.get(*k).copied().unwrap_or(0))
        .sum();
    ensure(false_rejects == 0, || format!("{false_rejects} valid commands rejected"))?;

    let mut detail = vec!["valid 1000/1000".to_string()];
    for (i, name, kind) in [(1, "forge", "BadSignature"), (2, "tamper", "BadSignature"), (3, "replay", "Replay")] {
        let s = step(i)?;
        let attempted = s.attack.as_ref().map(|a| a.sent).unwrap_or(0);
        let logged = s.events.get(kind).copied().unwrap_or(0);
        ensure(attempted == 1000, || format!("{name}: only {attempted} envelopes sent"))?;
        ensure(s.delivered == Some(0), || format!("{name}: {:?} delivered", s.delivered))?;
        ensure(logged == 1000, || format!("{name}: {logged} {kind} events, events {:?}", s.events))?;
        let other: usize = s.events.iter().filter(|(k, _)| k.as_str() != kind).map(|(_, n)| n).sum();
        ensure(other == 0, || format!("{name}: miscategorized events {:?}", s.events))?;
        detail.push(format!("{name} 0 delivered/{logged} {kind}"));
    }
    Ok(detail.join(", "))
}

fn fig5() -> Outcome {
    const MARKER: &str = "FIG5 MARKER 9d4c2f7a61e08b35 operator override v=1.75 w=0.00 EOM";
    ensure(MARKER.len() == 64, || format!("marker is {} bytes", MARKER.len()))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rt = runtime();
    let scan = |mode: BusMode| -> Result<(usize, usize), String> {
        let mut spec = bundled_scenario("fig5").ok_or("fig5 scenario missing")?;
        ensure(spec.steps.iter().any(|s| serde_json::to_string(s).unwrap_or_default().contains(MARKER)), || {
            "fig5 scenario does not publish the marker".into()
        })?;
        spec.mode = mode;
        let path = dir.path().join(format!("{mode}.pqcp"));
        spec.capture = Some(path.clone());
        rt.block_on(scenario_run(&spec)).map_err(|e| e.to_string())?;
        let records = capture_load(&path).map_err(|e| e.to_string())?;
        let full = capture_scan(&records, MARKER.as_bytes()).len();
        let windows = MARKER.as_bytes().windows(16).map(|w| capture_scan(&records, w).len()).sum();
        Ok((full, windows))
    };
    let (plain_full, _) = scan(BusMode::None)?;
    ensure(plain_full >= 1, || "marker not found in the plaintext capture".into())?;
    let (secure_full, secure_windows) = scan(BusMode::Channel)?;
    ensure(secure_full == 0 && secure_windows == 0, || {
        format!("secure capture leaks: {secure_full} full, {secure_windows} 16-byte matches")
    })?;
    Ok(format!("plaintext: {plain_full} verbatim; secure: 0 of 49 16-byte windows"))
}

fn key_agreement() -> Outcome {
    const FRAMES: usize = 10_000;
    let members = [("client", Role::GroundStation, 2), ("server", Role::Broker, 2)];
    let pq = Cast::generate(SchemeId::HASH_MERKLE, &members).map_err(|e| e.to_string())?;
    let classical = Cast::generate(SchemeId::RSA_2048, &members).map_err(|e| e.to_string())?;
    let rt = runtime();
    let suites = CipherSuite::all_builtin();
    for suite in &suites {
        let cast = if suite.signature == SchemeId::HASH_MERKLE { &pq } else { &classical };
        let client_creds = cast.credentials("client").map_err(|e| e.to_string())?;
        let server_creds = cast.credentials("server").map_err(|e| e.to_string())?;
        let (mut client, mut server) = rt
            .block_on(async {
                let (mut c_io, mut s_io) = tokio::io::duplex(1 << 16);
                let server = tokio::spawn(async move {
                    let first = read_frame(&mut s_io).await?.ok_or(ChannelError::ConnectionClosed)?;
                    accept_secure(&mut s_io, first, &ChannelConfig::default(), &server_creds, &SystemClock, &()).await
                });
                let client =
                    connect_secure(&mut c_io, &ChannelConfig::with_suites(vec![*suite]), &client_creds, &SystemClock, &())
                        .await?;
                Ok::<_, ChannelError>((client, server.await.expect("server task")?))
            })
            .map_err(|e| format!("{suite}: handshake failed: {e}"))?;

        let (ck, sk) = (client.keys(), server.keys());
        ensure(ck.c2s_key == sk.c2s_key && ck.s2c_key == sk.s2c_key && ck.c2s_iv == sk.c2s_iv && ck.s2c_iv == sk.s2c_iv, || {
            format!("{suite}: peers derived different session keys")
        })?;
        ensure(ck.c2s_key != ck.s2c_key && ck.c2s_iv != ck.s2c_iv, || format!("{suite}: directions share key material"))?;

        let (c2s_iv, s2c_iv) = (ck.c2s_iv, ck.s2c_iv);
        let mut nonces: [HashSet<[u8; 12]>; 2] = [HashSet::new(), HashSet::new()];
        for i in 0..FRAMES {
            let payload = (i as u64).to_be_bytes();
            let (tx, rx, iv, dir) =
                if i % 2 == 0 { (&mut client, &mut server, c2s_iv, 0) } else { (&mut server, &mut client, s2c_iv, 1) };
            let frame = tx.seal_frame(&payload).map_err(|e| e.to_string())?;
            // Nonce recomputed from the counter carried on the wire.
            let counter: [u8; 8] = frame[5..13].try_into().unwrap();
            let mut nonce = iv;
            for (n, c) in nonce[4..].iter_mut().zip(counter) {
                *n ^= c;
            }
            ensure(nonces[dir].insert(nonce), || format!("{suite}: nonce reused at frame {i}"))?;
            let opened = rx.open_frame(&frame).map_err(|e| format!("{suite}: frame {i}: {e}"))?;
            ensure(opened == payload, || format!("{suite}: frame {i} payload changed"))?;
            ensure(matches!(rx.open_frame(&frame), Err(ChannelError::Replay)), || {
                format!("{suite}: duplicated frame {i} was not rejected as a replay")
            })?;
        }
    }
    Ok(format!("{} suites, {FRAMES} frames each, 0 nonce reuse, all duplicates rejected", suites.len()))
}

fn crypto_properties() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut detail = Vec::new();
    for (scheme, mut kp) in [
        (SchemeId::HASH_MERKLE, hash_merkle::keygen_with_depth(&[7; 32], 8).map_err(|e| e.to_string())?),
        (SchemeId::RSA_2048, crypto::sig_keygen(SchemeId::RSA_2048, None).map_err(|e| e.to_string())?),
    ] {
        let pk = kp.public_key();
        let mut signed = Vec::new();
        for i in 0..200 {
            let mut msg = vec![0u8; rng.gen_range(0..512)];
            rng.fill_bytes(&mut msg);
            let sig = kp.sign(&msg).map_err(|e| format!("{scheme}: sign {i}: {e}"))?;
            ensure(crypto::verify(&pk, &msg, &sig), || format!("{scheme}: message {i} does not verify"))?;
            signed.push((msg, sig));
        }
        let (msg, sig) = signed.iter().find(|(m, _)| m.len() >= 16).ok_or("no long message")?;
        for _ in 0..100 {
            let mut m = msg.clone();
            let bit = rng.gen_range(0..m.len() * 8);
            m[bit / 8] ^= 1 << (bit % 8);
            ensure(!crypto::verify(&pk, &m, sig), || format!("{scheme}: flipped message bit {bit} verifies"))?;
            let mut s = sig.clone();
            let bit = rng.gen_range(0..s.bytes.len() * 8);
            s.bytes[bit / 8] ^= 1 << (bit % 8);
            ensure(!crypto::verify(&pk, msg, &s), || format!("{scheme}: flipped signature bit {bit} verifies"))?;
        }
        let name = crypto::registry().descriptor(scheme).map_err(|e| e.to_string())?.name;
        detail.push(format!("{name} 200/200"));
    }

    let mut small = hash_merkle::keygen_with_depth(&[9; 32], 2).map_err(|e| e.to_string())?;
    for i in 0..4 {
        small.sign(&[i]).map_err(|e| format!("depth-2 sign {i} failed: {e}"))?;
    }
    ensure(matches!(small.sign(b"fifth"), Err(CryptoError::KeyExhausted)), || "depth-2 key signed a fifth time".into())?;
    detail.push("exhausted after 4".into());

    // GCM specification test case 16 and RFC 8439 section 2.8.2.
    let h = |s: &str| hex::decode(s).unwrap();
    let gcm = crypto::aead_seal(
        SchemeId::AES_256_GCM,
        &h("feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308"),
        &h("cafebabefacedbaddecaf888"),
        &h("feedfacedeadbeeffeedfacedeadbeefabaddad2"),
        &h("d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39"),
    )
    .map_err(|e| e.to_string())?;
    ensure(
        hex::encode(&gcm)
            == "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f66276fc6ece0f4e1768cddf8853bb2d551b",
        || "AES-256-GCM vector mismatch".into(),
    )?;
    let key: Vec<u8> = (0x80u8..0xa0).collect();
    let chacha = crypto::aead_seal(
        SchemeId::CHACHA20_POLY1305,
        &key,
        &h("070000004041424344454647"),
        &h("50515253c0c1c2c3c4c5c6c7"),
        b"Ladies and Gentlemen of the class of '99: If I could offer you only one tip for the future, sunscreen would be it.",
    )
    .map_err(|e| e.to_string())?;
    ensure(
        hex::encode(&chacha)
            == "d31a8d34648e60db7b86afbc53ef7ec2a4aded51296e08fea9e2b5a736ee62d63dbea45e8ca9671282fafb69da92728b1a71de0a9e060b2905d6a5b67ecd3b3692ddbd7f2d778b8c9803aee328091b58fab324e4fad675945585808b4831d7bc3ff4def08e4b7a9de576d26586cec64b61161ae10b594f09e26a7e902ecbd0600691",
        || "ChaCha20-Poly1305 vector mismatch".into(),
    )?;
    // RFC 5869 test case 3.
    let okm = crypto::kdf_derive(&[0x0b; 22], "", 42).map_err(|e| e.to_string())?;
    ensure(
        hex::encode(okm) == "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8",
        || "HKDF vector mismatch".into(),
    )?;
    detail.push("AEAD and KDF vectors exact".into());
    Ok(detail.join(", "))
}

fn golden_vectors() -> Outcome {
    for line in testdata("merkle_roots.txt").lines().filter(|l| l.starts_with("seed=00")) {
        let (depth, root) = line
            .strip_prefix("seed=00 depth=")
            .and_then(|r| r.split_once(" root="))
            .ok_or(format!("bad line {line:?}"))?;
        let depth: u8 = depth.parse().map_err(|_| format!("bad depth in {line:?}"))?;
        let kp = hash_merkle::keygen_with_depth(&[0; 32], depth).map_err(|e| e.to_string())?;
        ensure(hex::encode(kp.public_key_bytes()) == root, || format!("seed-zero root at depth {depth} differs"))?;
    }

    let mut key = hash_merkle::keygen_with_depth(&[0; 32], 10).map_err(|e| e.to_string())?;
    let env = seal(
        &mut key,
        "ground_station",
        "/command",
        &mut SequenceCounter::new(),
        br#"{"v":0.5,"omega":0.1}"#,
        &ManualClock::new(1_700_000_000_000),
    )
    .map_err(|e| e.to_string())?;
    let wire = hex::encode(env.encode_wire().map_err(|e| e.to_string())?);
    ensure(wire == testdata("envelopes/seed_zero_command.hex"), || "envelope bytes differ from the vector".into())?;

    let ca_key = hash_merkle::keygen_with_depth(&[0; 32], 10).map_err(|e| e.to_string())?;
    let validity = Validity::new(1_700_000_000, 1_700_000_000 + 365 * 86_400);
    let mut ca = create_ca_with_key("groundCA", ca_key, validity).map_err(|e| e.to_string())?;
    let subject = hash_merkle::keygen_with_depth(&[1; 32], 10).map_err(|e| e.to_string())?;
    let cert = ca
        .issue_certificate("ground_station", Role::GroundStation, &subject.public_key(), validity)
        .map_err(|e| e.to_string())?;
    ensure(hex::encode(cert.encode()) == testdata("certs/seed_zero_ground_station.hex"), || {
        "certificate bytes differ from the vector".into()
    })?;
    Ok(format!("merkle roots, envelope ({} B), certificate ({} B)", wire.len() / 2, cert.encode().len()))
}

/// Accepts a sequence number iff it is non-zero, was never accepted before,
/// and is newer than the 64 numbers below the highest accepted one.
struct BruteForce {
    accepted: HashSet<u64>,
    highest: u64,
}

impl BruteForce {
    fn check(&mut self, seq: u64) -> bool {
        let fresh = seq != 0 && !self.accepted.contains(&seq) && seq + 64 > self.highest;
        if fresh {
            self.accepted.insert(seq);
            self.highest = self.highest.max(seq);
        }
        fresh
    }
}

fn replay_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut accepts = 0;
    for trial in 0..100 {
        let mut window = pqc2::envelope::ReplayWindow::new();
        let mut oracle = BruteForce { accepted: HashSet::new(), highest: 0 };
        let mut top = 0u64;
        for i in 0..1000 {
            let seq = match rng.gen_range(0..100) {
                0..=39 => top + rng.gen_range(1..4),
                40..=59 => top.saturating_sub(rng.gen_range(0..8)),
                60..=84 => top.saturating_sub(rng.gen_range(50..80)),
                85..=94 => top + rng.gen_range(60..200),
                _ => rng.gen_range(0..top + 2),
            };
            top = top.max(seq);
            let got = window.check(seq) == pqc2::envelope::ReplayDecision::Accept;
            let want = oracle.check(seq);
            ensure(got == want, || format!("trial {trial}, element {i}: seq {seq} window {got} oracle {want}"))?;
            accepts += usize::from(got);
        }
    }
    Ok(format!("100 x 1000 decisions equal ({accepts} accepts)"))
}

/// Classical fourth-order Runge-Kutta on the unicycle, used as the
/// fine-step reference.
fn rk4(mut p: [f64; 3], v: f64, omega: f64, t: f64, h: f64) -> [f64; 3] {
    let f = |s: [f64; 3]| [v * s[2].cos(), v * s[2].sin(), omega];
    let steps = (t / h).round() as usize;
    for _ in 0..steps {
        let k1 = f(p);
        let k2 = f([p[0] + h / 2.0 * k1[0], p[1] + h / 2.0 * k1[1], p[2] + h / 2.0 * k1[2]]);
        let k3 = f([p[0] + h / 2.0 * k2[0], p[1] + h / 2.0 * k2[1], p[2] + h / 2.0 * k2[2]]);
        let k4 = f([p[0] + h * k3[0], p[1] + h * k3[1], p[2] + h * k3[2]]);
        for i in 0..3 {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    p
}

fn kinematics() -> Outcome {
    let origin = AgentPose::default();

    let start = AgentPose::new(1.5, -2.0, 0.7);
    let mut p = start;
    for _ in 0..1000 {
        p = pose_step(p, VelocityCommand::STOP, 0.01);
    }
    ensure(p.distance_to(&start) < 1e-9 && (p.theta - start.theta).abs() < 1e-9, || "rest drifted".into())?;

    let config = AgentConfig { command_timeout: 100.0, ..AgentConfig::default() };
    let mut core = AgentCore::new(config);
    core.apply(COMMAND_TOPIC, &velocity_payload(1.0, 0.0), 1).map_err(|e| e.to_string())?;
    core.advance_ticks(100);
    let line = core.pose();
    ensure((line.x - 1.0).abs() < 1e-9 && line.y.abs() < 1e-9 && line.theta.abs() < 1e-9, || {
        format!("straight line ended at {line:?}")
    })?;

    // One full turn at v = 1, omega = 1: 628 steps of 10 ms.
    let mut core = AgentCore::new(config);
    core.apply(COMMAND_TOPIC, &velocity_payload(1.0, 1.0), 1).map_err(|e| e.to_string())?;
    let ticks = (2.0 * std::f64::consts::PI / config.dt).round() as u64;
    core.advance_ticks(ticks);
    let circle = core.pose();
    let reference = rk4([0.0, 0.0, 0.0], 1.0, 1.0, ticks as f64 * config.dt, 1e-5);
    let err = ((circle.x - reference[0]).powi(2) + (circle.y - reference[1]).powi(2)).sqrt();
    let closure = circle.distance_to(&origin);
    ensure(err < 1e-2 && closure < 1e-2, || format!("circle: {err:.4} from reference, {closure:.4} from start"))?;

    let mut core = AgentCore::new(AgentConfig::default());
    core.apply(COMMAND_TOPIC, &velocity_payload(1.0, 0.3), 1).map_err(|e| e.to_string())?;
    core.advance_ticks(20);
    core.apply(ESTOP_TOPIC, &estop_payload(true), 1).map_err(|e| e.to_string())?;
    let frozen = core.pose();
    for seq in 2..50 {
        core.apply(COMMAND_TOPIC, &velocity_payload(2.0, -1.0), seq).map_err(|e| e.to_string())?;
        core.advance_ticks(10);
    }
    let after = core.pose();
    ensure(
        after.x.to_bits() == frozen.x.to_bits()
            && after.y.to_bits() == frozen.y.to_bits()
            && after.theta.to_bits() == frozen.theta.to_bits(),
        || format!("pose moved under e-stop: {frozen:?} -> {after:?}"),
    )?;
    Ok(format!("rest and line within 1e-9, circle {err:.1e} from RK4 and {closure:.1e} from start, e-stop bit-exact"))
}

fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    reader.deserialize().collect::<Result<_, _>>().map_err(|e| format!("{}: {e}", path.display()))
}

fn num(row: &BTreeMap<String, String>, col: &str) -> Result<f64, String> {
    row.get(col).and_then(|v| v.parse().ok()).ok_or(format!("column {col} missing or not a number"))
}

fn bench_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = pqc2(&["bench", "all", "--out", dir.path().to_str().unwrap()])?;
    ensure(out.status.success(), || {
        format!("pqc2 bench all exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;

    let sign = read_csv(&dir.path().join("sign_verify.csv"))?;
    let grid: BTreeSet<(String, String)> =
        sign.iter().map(|r| (r["scheme"].clone(), r["size_bytes"].clone())).collect();
    for scheme in ["hash-merkle", "rsa-2048"] {
        for size in ["1000", "10000", "100000", "1000000"] {
            ensure(grid.contains(&(scheme.into(), size.into())), || format!("sign-verify row {scheme}/{size} missing"))?;
        }
    }
    ensure(sign.len() == 8, || format!("{} sign-verify rows", sign.len()))?;

    let throughput = read_csv(&dir.path().join("throughput.csv"))?;
    let mut worst = 0.0f64;
    let mut small_cells = Vec::new();
    for size in [706, 1306, 6106, 12176, 60502] {
        for rate in [5, 50, 500] {
            let rows: Vec<_> = throughput
                .iter()
                .filter(|r| num(r, "size_bytes") == Ok(size as f64) && num(r, "target_hz") == Ok(rate as f64))
                .collect();
            ensure(!rows.is_empty(), || format!("throughput cell {size} B/{rate} Hz missing"))?;
            for r in rows {
                let achieved = num(r, "achieved_hz")?;
                worst = worst.max(achieved / rate as f64);
                if (size, rate) == (706, 5) {
                    ensure((achieved - 5.0).abs() <= 0.1, || format!("{}: 706 B/5 Hz achieved {achieved}", r["mode"]))?;
                    small_cells.push(achieved);
                }
            }
        }
    }
    ensure(worst <= 1.01, || format!("a cell reached {worst:.4}x its target"))?;

    let handshake = read_csv(&dir.path().join("handshake.csv"))?;
    let pq = CipherSuite::post_quantum_default().to_string();
    let row = handshake.iter().find(|r| r["suite"] == pq).ok_or(format!("no handshake row for {pq}"))?;
    let pq_ms = num(row, "mean_ms")?;
    ensure(pq_ms < 1000.0, || format!("{pq} handshake mean {pq_ms} ms"))?;
    Ok(format!(
        "8 sign-verify cells, {} throughput rows (max {worst:.3}x target, 706 B/5 Hz {small_cells:?}), {pq} {pq_ms:.2} ms",
        throughput.len()
    ))
}

fn flood() -> Outcome {
    let spec = bundled_scenario("flood").ok_or("flood scenario missing")?;
    let report = runtime().block_on(scenario_run(&spec)).map_err(|e| e.to_string())?;
    let step = report.steps.iter().find(|s| s.latency.is_some()).ok_or("flood step reported no latency")?;
    let latency = step.latency.as_ref().unwrap();
    let sent = step.attack.as_ref().map(|a| a.sent).unwrap_or(0);
    ensure(sent == 10_000, || format!("only {sent} garbage frames sent"))?;
    ensure(latency.ratio <= 10.0, || format!("loaded/unloaded median latency ratio {:.2}", latency.ratio))?;
    Ok(format!(
        "median {:.0} us unloaded, {:.0} us under flood ({:.2}x)",
        latency.unloaded_median_us, latency.loaded_median_us, latency.ratio
    ))
}

const CRITERIA: [Criterion; 10] = [
    Criterion { name: "table1_matrix", limit: Duration::from_secs(30), run: table1 },
    Criterion { name: "drop_semantics", limit: Duration::from_secs(120), run: drop_semantics },
    Criterion { name: "fig5_capture", limit: Duration::from_secs(30), run: fig5 },
    Criterion { name: "key_agreement_and_channel", limit: Duration::from_secs(60), run: key_agreement },
    Criterion { name: "crypto_properties", limit: Duration::from_secs(120), run: crypto_properties },
    Criterion { name: "golden_wire_vectors", limit: Duration::from_secs(60), run: golden_vectors },
    Criterion { name: "replay_oracle", limit: Duration::from_secs(60), run: replay_oracle },
    Criterion { name: "kinematics", limit: Duration::from_secs(60), run: kinematics },
    Criterion { name: "benchmark_protocol", limit: Duration::from_secs(15 * 60), run: bench_protocol },
    Criterion { name: "flood_containment", limit: Duration::from_secs(120), run: flood },
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        ran += 1;
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > c.limit => Err(format!("took {:.1} s, limit {} s", elapsed.as_secs_f64(), c.limit.as_secs())),
            other => other,
        };
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:<26} {secs:>7.1} s  {detail}", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<26} {secs:>7.1} s  {why}", c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
