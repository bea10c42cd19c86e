use std::path::{Path, PathBuf};

use crate::agents::{bundled_scenario, scenario_run, ScenarioReport, ScenarioSpec, BUNDLED_SCENARIOS};
use crate::bus::{capture_load, capture_scan as scan, BusMode};

use super::{config_err, runtime_err, CliError};

pub fn list() {
    for (name, _) in BUNDLED_SCENARIOS {
        let spec = bundled_scenario(name).expect("bundled scenarios parse");
        println!("{name:<12} {:<8} {}", spec.mode, spec.description);
    }
}

/// A bundled name, or else a path to a scenario file.
pub fn prepare(name_or_file: &str, mode: Option<&str>) -> Result<ScenarioSpec, CliError> {
    let mut spec = match bundled_scenario(name_or_file) {
        Some(spec) => spec,
        None => {
            let path = Path::new(name_or_file);
            if !path.is_file() {
                let names: Vec<_> = BUNDLED_SCENARIOS.iter().map(|(n, _)| *n).collect();
                return Err(config_err(format!(
                    "{name_or_file:?} is neither a bundled scenario ({}) nor a file",
                    names.join(", ")
                )));
            }
            ScenarioSpec::load(path).map_err(config_err)?
        }
    };
    if let Some(m) = mode {
        spec.mode = m.parse::<BusMode>().map_err(config_err)?;
    }
    spec.validate().map_err(config_err)?;
    Ok(spec)
}

pub fn print_report(report: &ScenarioReport) {
    for step in &report.steps {
        let mark = if step.passed { "ok  " } else { "FAIL" };
        println!(
            "{mark} {:>3} t={:<5} {:<15} {:<8} {:<12} expected {:<10} {}",
            step.index,
            step.at,
            step.actor,
            step.action,
            step.outcome,
            step.expected.as_deref().unwrap_or("-"),
            step.detail
        );
    }
    println!(
        "{} [{}]: {} in {} ms; final pose x={:.4} y={:.4} theta={:.4}, e-stop {}",
        report.name,
        report.mode,
        if report.passed { "PASS" } else { "FAIL" },
        report.elapsed_ms,
        report.final_pose.x,
        report.final_pose.y,
        report.final_pose.theta,
        if report.estop_engaged { "engaged" } else { "released" }
    );
}

pub async fn run(spec: ScenarioSpec, report_path: Option<PathBuf>) -> Result<(), CliError> {
    if let Some(dir) = report_path.as_ref().and_then(|p| p.parent()).filter(|d| !d.as_os_str().is_empty()) {
        if !dir.is_dir() {
            return Err(config_err(format!("{}: directory does not exist", dir.display())));
        }
    }
    let report = scenario_run(&spec).await.map_err(runtime_err)?;
    print_report(&report);
    if let Some(path) = &report_path {
        let json = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
        std::fs::write(path, json).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Expectation(report.failures.join("\n")))
    }
}

pub fn capture_scan(file: &Path, needle: Option<String>, hex: Option<String>, window: usize) -> Result<(), CliError> {
    let needle = match (needle, hex) {
        (Some(text), None) => text.into_bytes(),
        (None, Some(h)) => hex::decode(h.trim()).map_err(|e| config_err(format!("--hex: {e}")))?,
        _ => return Err(config_err("give exactly one of --needle and --hex")),
    };
    if needle.is_empty() || window == 0 {
        return Err(config_err("needle and window must not be empty"));
    }
    let records = capture_load(file).map_err(|e| config_err(format!("{}: {e}", file.display())))?;
    let full = scan(&records, &needle);
    for m in &full {
        let r = &records[m.record];
        println!("match: record {} ({:?} {}) offset {}", m.record, r.direction, r.peer, m.offset);
    }
    let windows: usize = if needle.len() >= window {
        needle.windows(window).map(|w| scan(&records, w).len()).sum()
    } else {
        0
    };
    println!(
        "{} records, {} bytes; {} full matches, {windows} {window}-byte window matches",
        records.len(),
        records.iter().map(|r| r.bytes.len()).sum::<usize>(),
        full.len()
    );
    Ok(())
}
