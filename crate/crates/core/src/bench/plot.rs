use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use super::{BenchError, HandshakeRecord, SignVerifyRecord, ThroughputRecord};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(e: impl std::fmt::Display) -> BenchError {
    BenchError::Plot(e.to_string())
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn draw(path: &Path, caption: &str, x_desc: &str, y_desc: &str, series: &Series, log_x: bool) -> Result<(), BenchError> {
    let points = series.values().flatten();
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, 0.0f64, 0.0f64);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(BenchError::EmptyInput);
    }
    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.caption(caption, ("sans-serif", 22)).margin(15).x_label_area_size(45).y_label_area_size(70);
    let y_range = 0.0..(y1 * 1.1).max(f64::MIN_POSITIVE);
    if log_x {
        let mut chart = builder.build_cartesian_2d((x0 / 2.0..x1 * 2.0).log_scale(), y_range).map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
        }
        chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(plot_err)?;
    } else {
        let mut chart = builder.build_cartesian_2d(0.0..x1 * 1.05, y_range).map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
        }
        chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Mean sign and verify time against message size, one line per scheme and
/// operation, message size on a log axis.
pub fn plot_sign_verify(records: &[SignVerifyRecord], path: &Path) -> Result<(), BenchError> {
    let mut series = Series::new();
    for r in records {
        let x = r.size_bytes as f64;
        series.entry(format!("{} sign", r.scheme)).or_default().push((x, r.sign_mean_us));
        series.entry(format!("{} verify", r.scheme)).or_default().push((x, r.verify_mean_us));
    }
    sort_x(&mut series);
    draw(path, "Sign and verify time", "message size (bytes)", "mean time (us)", &series, true)
}

/// Achieved rate against message size, one line per (mode, target rate).
pub fn plot_throughput(records: &[ThroughputRecord], path: &Path) -> Result<(), BenchError> {
    let mut series = Series::new();
    for r in records {
        series
            .entry(format!("{} @ {} Hz", r.mode, r.target_hz))
            .or_default()
            .push((r.size_bytes as f64, r.achieved_hz));
    }
    sort_x(&mut series);
    draw(path, "Delivered message rate", "message size (bytes)", "achieved rate (Hz)", &series, true)
}

/// Mean setup time per suite, drawn as points along the suite index.
pub fn plot_handshake(records: &[HandshakeRecord], path: &Path) -> Result<(), BenchError> {
    let mut series = Series::new();
    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.failure.is_none()) {
        series.insert(format!("{i}: {}", r.suite), vec![(i as f64, r.mean_ms)]);
    }
    draw(path, "Handshake time", "suite", "mean time (ms)", &series, false)
}

fn sort_x(series: &mut Series) {
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_chart_is_svg() {
        let rec = |scheme: &str, size, t| SignVerifyRecord {
            scheme: scheme.into(),
            size_bytes: size,
            reps: 30,
            sign_mean_us: t,
            sign_median_us: t,
            sign_p95_us: t,
            verify_mean_us: t / 2.0,
            verify_median_us: t / 2.0,
            verify_p95_us: t / 2.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sv.svg");
        plot_sign_verify(&[rec("a", 1000, 5.0), rec("a", 1_000_000, 50.0), rec("b", 1000, 9.0)], &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("a sign"));
        assert!(matches!(plot_sign_verify(&[], &path), Err(BenchError::EmptyInput)));
    }
}
