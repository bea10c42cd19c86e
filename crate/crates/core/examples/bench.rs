//! A reduced run of the three benchmarks, small enough to finish in a few
//! seconds. The full grids are behind `pqc2 bench all`.
//!
//! ```text
//! cargo run --release --example bench [output-dir]
//! ```

use std::path::PathBuf;
use std::time::Duration;

use pqc2::bench::{
    bench_handshake, bench_sign_verify, bench_throughput, plot_sign_verify, write_csv, ThroughputMode,
};
use pqc2::channel::CipherSuite;
use pqc2::crypto::SchemeId;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir).join("pqc2-bench-example");
    std::fs::create_dir_all(&out)?;

    let records = bench_sign_verify(&[SchemeId::HASH_MERKLE, SchemeId::RSA_2048], &[1_000, 100_000], 10)?;
    for r in &records {
        println!("{:<12} {:>7} B  sign {:>8.1} us  verify {:>8.1} us", r.scheme, r.size_bytes, r.sign_mean_us, r.verify_mean_us);
    }
    write_csv(&records, &out.join("sign_verify.csv"))?;
    plot_sign_verify(&records, &out.join("sign_verify.svg"))?;

    let modes = [ThroughputMode::Plain, ThroughputMode::Channel(CipherSuite::post_quantum_default())];
    for r in bench_throughput(&modes, &[706, 12_176], &[5, 50], Duration::from_secs(2)).await? {
        println!("{:<28} {:>6} B  target {:>3} Hz  achieved {:>6.2} Hz", r.mode, r.size_bytes, r.target_hz, r.achieved_hz);
    }

    for r in bench_handshake(&[CipherSuite::post_quantum_default(), CipherSuite::classical_baseline()], 5).await? {
        println!("{:<42} handshake mean {:.2} ms", r.suite, r.mean_ms);
    }
    println!("sign/verify CSV and chart in {}", out.display());
    Ok(())
}
