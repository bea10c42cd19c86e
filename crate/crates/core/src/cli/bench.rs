use std::path::PathBuf;
use std::time::Duration;

use crate::bench::{
    bench_handshake, bench_sign_verify, bench_throughput, comparable_at, plot_handshake, plot_sign_verify,
    plot_throughput, write_csv, ThroughputMode, DEFAULT_RATES, DEFAULT_SIZES, DEFAULT_THROUGHPUT_SIZES,
};
use crate::channel::CipherSuite;
use crate::crypto::SchemeId;

use super::pki::signature_scheme;
use super::{config_err, runtime_err, BenchArgs, BenchKind, CliError};

/// Shortest throughput cell the command line accepts.
const MIN_DURATION_S: f64 = 10.0;

pub struct BenchPlan {
    out: PathBuf,
    sign_verify: Option<(Vec<SchemeId>, Vec<usize>, usize)>,
    throughput: Option<(Vec<ThroughputMode>, Vec<usize>, Vec<u32>, Duration)>,
    handshake: Option<(Vec<CipherSuite>, usize)>,
}

fn parse_suite(s: &str) -> Result<CipherSuite, CliError> {
    let parts: Vec<&str> = s.split('+').collect();
    let [sig, kem, aead] = parts[..] else {
        return Err(config_err(format!("suite {s:?} is not sig+kem+aead")));
    };
    CipherSuite::from_names(sig, kem, aead).map_err(config_err)
}

pub fn plan(args: &BenchArgs) -> Result<BenchPlan, CliError> {
    let wants = |k: BenchKind| args.kind == k || args.kind == BenchKind::All;
    if args.reps == Some(0) {
        return Err(config_err("--reps must be at least 1"));
    }
    if args.sizes.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
        return Err(config_err("--sizes must be positive"));
    }
    let sign_verify = if wants(BenchKind::SignVerify) {
        let schemes = match &args.schemes {
            Some(names) => names.iter().map(|n| signature_scheme(n).map(|d| d.scheme_id)).collect::<Result<_, _>>()?,
            None => vec![SchemeId::HASH_MERKLE, SchemeId::RSA_2048],
        };
        let sizes = args.sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec());
        Some((schemes, sizes, args.reps.unwrap_or(30)))
    } else {
        None
    };
    let throughput = if wants(BenchKind::Throughput) {
        if !(args.duration >= MIN_DURATION_S && args.duration.is_finite()) {
            return Err(config_err(format!("--duration must be at least {MIN_DURATION_S} seconds")));
        }
        let modes = match &args.modes {
            Some(m) => m.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(config_err)?,
            None => ThroughputMode::defaults(),
        };
        let rates = args.rates.clone().unwrap_or_else(|| DEFAULT_RATES.to_vec());
        if rates.is_empty() || rates.contains(&0) {
            return Err(config_err("--rates must be positive"));
        }
        let sizes = args.sizes.clone().unwrap_or_else(|| DEFAULT_THROUGHPUT_SIZES.to_vec());
        Some((modes, sizes, rates, Duration::from_secs_f64(args.duration)))
    } else {
        None
    };
    let handshake = if wants(BenchKind::Handshake) {
        let suites = match &args.suites {
            Some(s) => s.iter().map(|s| parse_suite(s)).collect::<Result<_, _>>()?,
            None => vec![CipherSuite::post_quantum_default(), CipherSuite::classical_baseline()],
        };
        Some((suites, args.reps.unwrap_or(20)))
    } else {
        None
    };
    if args.out.exists() && !args.out.is_dir() {
        return Err(config_err(format!("{} is not a directory", args.out.display())));
    }
    Ok(BenchPlan { out: args.out.clone(), sign_verify, throughput, handshake })
}

pub async fn run(plan: BenchPlan) -> Result<(), CliError> {
    std::fs::create_dir_all(&plan.out).map_err(|e| runtime_err(format!("{}: {e}", plan.out.display())))?;
    let out = |name: &str| plan.out.join(name);

    if let Some((schemes, sizes, reps)) = plan.sign_verify {
        let records = tokio::task::spawn_blocking(move || bench_sign_verify(&schemes, &sizes, reps))
            .await
            .map_err(runtime_err)?
            .map_err(runtime_err)?;
        write_csv(&records, &out("sign_verify.csv")).map_err(runtime_err)?;
        plot_sign_verify(&records, &out("sign_verify.svg")).map_err(runtime_err)?;
        println!("sign-verify ({} cells, all signatures verified)", records.len());
        println!("  {:<12} {:>9} {:>12} {:>12}", "scheme", "bytes", "sign us", "verify us");
        for r in &records {
            println!("  {:<12} {:>9} {:>12.1} {:>12.1}", r.scheme, r.size_bytes, r.sign_mean_us, r.verify_mean_us);
        }
        if let Some(ratio) = comparable_at(&records, "hash-merkle", "rsa-2048", 100_000) {
            let verdict = if ratio <= 2.0 { "within" } else { "outside" };
            println!("  hash-merkle/rsa-2048 at 100 KB: {ratio:.2}x ({verdict} 2x)");
        }
    }

    if let Some((modes, sizes, rates, duration)) = plan.throughput {
        let records = bench_throughput(&modes, &sizes, &rates, duration).await.map_err(runtime_err)?;
        write_csv(&records, &out("throughput.csv")).map_err(runtime_err)?;
        plot_throughput(&records, &out("throughput.svg")).map_err(runtime_err)?;
        println!("throughput ({} cells, {} s each)", records.len(), duration.as_secs_f64());
        println!("  {:<26} {:>7} {:>8} {:>10}", "mode", "bytes", "target", "achieved");
        for r in &records {
            println!("  {:<26} {:>7} {:>8} {:>10.3}", r.mode, r.size_bytes, r.target_hz, r.achieved_hz);
        }
        let over: Vec<_> = records.iter().filter(|r| r.achieved_hz > 1.01 * r.target_hz).collect();
        if !over.is_empty() {
            return Err(CliError::Runtime(format!("{} cells exceeded their target rate", over.len())));
        }
    }

    if let Some((suites, reps)) = plan.handshake {
        let records = bench_handshake(&suites, reps).await.map_err(runtime_err)?;
        write_csv(&records, &out("handshake.csv")).map_err(runtime_err)?;
        if records.iter().any(|r| r.failure.is_none()) {
            plot_handshake(&records, &out("handshake.svg")).map_err(runtime_err)?;
        }
        println!("handshake ({reps} reps per suite)");
        for r in &records {
            match &r.failure {
                None => println!("  {:<45} mean {:>8.2} ms  median {:>8.2} ms", r.suite, r.mean_ms, r.median_ms),
                Some(f) => println!("  {:<45} FAILED: {f}", r.suite),
            }
        }
        let failed = records.iter().filter(|r| r.failure.is_some()).count();
        if failed > 0 {
            return Err(CliError::Runtime(format!("{failed} handshake suites failed")));
        }
    }
    println!("results in {}", plan.out.display());
    Ok(())
}
