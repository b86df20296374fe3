//! Trajectory export: CSV for analysis and a self-contained SVG plot of
//! test accuracy against sparsity.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trajectory::{Phase, TrajectoryRecord};

pub const CSV_HEADER: [&str; 7] = [
    "phase",
    "step",
    "sparsity",
    "train_loss",
    "test_accuracy",
    "active_params",
    "elapsed_ms",
];

pub fn format_trajectory_csv(records: &[TrajectoryRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Usage("no trajectory records to export".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.phase.to_string(),
            r.step.to_string(),
            format!("{:.6}", r.sparsity),
            format!("{:.6}", r.train_loss),
            format!("{:.6}", r.test_accuracy),
            r.active_params.to_string(),
            r.elapsed_ms.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn emit_trajectory_csv(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_trajectory_csv(records)?)?;
    Ok(())
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!(
            "unexpected CSV header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Format(e.to_string()))?;
        let bad = |field: &str| Error::Format(format!("CSV row {}: bad {field}", line + 1));
        let real = |i: usize, name: &str| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(name))
        };
        out.push(TrajectoryRecord {
            phase: row[0].parse().map_err(|_| bad("phase"))?,
            step: row[1].parse().map_err(|_| bad("step"))?,
            sparsity: real(2, "sparsity")?,
            train_loss: real(3, "train_loss")?,
            test_accuracy: real(4, "test_accuracy")?,
            active_params: row[5].parse().map_err(|_| bad("active_params"))?,
            elapsed_ms: row[6].parse().map_err(|_| bad("elapsed_ms"))?,
        });
    }
    Ok(out)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    parse_trajectory_csv(&std::fs::read_to_string(path)?)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 770.0;
const TOP: f64 = 60.0;
const BOTTOM: f64 = 520.0;

/// Axis range padded out to whole multiples of a 1-2-5 tick step.
struct Axis {
    lo: f64,
    hi: f64,
    step: f64,
    decimals: usize,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        if hi - lo < 1e-9 {
            lo -= 0.05;
            hi += 0.05;
        }
        let raw = (hi - lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|&s| s >= raw)
            .unwrap_or(10.0 * mag);
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        Self {
            lo: (lo / step).floor() * step,
            hi: (hi / step).ceil() * step,
            step,
            decimals,
        }
    }

    fn ticks(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

fn style(phase: Phase) -> (&'static str, &'static str) {
    match phase {
        Phase::Pretrain => ("pretrain", "#2ca02c"),
        Phase::Prune => ("prune", "#1f77b4"),
        Phase::Regrow => ("regrow", "#d62728"),
    }
}

/// Renders test accuracy against sparsity with one polyline per phase.
/// Markers are circles for pretrain, squares for prune and triangles for
/// regrow records.
pub fn render_svg(records: &[TrajectoryRecord]) -> Result<String> {
    if records.len() < 2 {
        return Err(Error::Usage(format!(
            "a plot needs at least 2 records, got {}",
            records.len()
        )));
    }
    let xa = Axis::fit(records.iter().map(|r| r.sparsity));
    let ya = Axis::fit(records.iter().map(|r| r.test_accuracy));
    let px = |v: f64| xa.map(v, LEFT, RIGHT);
    let py = |v: f64| ya.map(v, BOTTOM, TOP);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<path d="M0 0H{WIDTH}V{HEIGHT}H0Z" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="16">Test accuracy vs. sparsity</text>"#,
        (LEFT + RIGHT) / 2.0
    );

    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{BOTTOM}" x2="{RIGHT}" y2="{BOTTOM}"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}"/>"#
    );
    for t in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{BOTTOM}" x2="{x:.2}" y2="{}"/>"#,
            BOTTOM + 5.0
        );
    }
    for t in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}"/>"#,
            LEFT - 5.0
        );
    }
    let _ = writeln!(s, "</g>");

    for t in xa.ticks() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.*}</text>"#,
            px(t),
            BOTTOM + 20.0,
            xa.decimals,
            t
        );
    }
    for t in ya.ticks() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{:.*}</text>"#,
            LEFT - 8.0,
            py(t),
            ya.decimals,
            t
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Sparsity</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 45.0
    );
    let _ = writeln!(
        s,
        r#"<text x="25" y="{y}" text-anchor="middle" transform="rotate(-90 25 {y})">Test accuracy</text>"#,
        y = (TOP + BOTTOM) / 2.0
    );

    for phase in [Phase::Pretrain, Phase::Prune, Phase::Regrow] {
        let pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| (px(r.sparsity), py(r.test_accuracy)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let (name, color) = style(phase);
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r#"<g class="{name}" fill="{color}" stroke="{color}">"#);
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke-width="2"/>"#,
            coords.join(" ")
        );
        for (x, y) in pts {
            let _ = match phase {
                Phase::Pretrain => writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="5"/>"#),
                Phase::Prune => writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="9" height="9"/>"#,
                    x - 4.5,
                    y - 4.5
                ),
                Phase::Regrow => writeln!(
                    s,
                    r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
                    x,
                    y - 6.0,
                    x - 5.5,
                    y + 4.0,
                    x + 5.5,
                    y + 4.0
                ),
            };
        }
        let _ = writeln!(s, "</g>");
    }

    // Legend above the plot area: coloured strokes and labels only, so marker
    // elements map one to one onto records.
    for (i, phase) in [Phase::Pretrain, Phase::Prune, Phase::Regrow]
        .into_iter()
        .enumerate()
    {
        let (name, color) = style(phase);
        let x = RIGHT - 300.0 + 100.0 * i as f64;
        let y = TOP - 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/>"#,
            x + 24.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" dominant-baseline="middle">{name}</text>"#,
            x + 30.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot_svg(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(records)?)?;
    Ok(())
}
