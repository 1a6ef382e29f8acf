//! Deterministic report artifacts: metric tables and PR points as CSV,
//! plus a self-contained SVG precision-recall plot. Identical inputs
//! always produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{DistanceBandReport, Metrics, PRCurve};

const PALETTE: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22",
];

/// Writes `metrics.csv`, `pr_points.csv`, `bands.csv` and `pr.svg` into
/// `dir`, returning the written paths in that order. Rows keep the
/// order of the input slices.
pub fn export_report(
    models: &[(String, Metrics)],
    curves: &[(String, PRCurve)],
    bands: &[(String, DistanceBandReport)],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let mut metrics_csv = String::from("model,recall,precision,f1\n");
    for (name, m) in models {
        let _ = writeln!(
            metrics_csv,
            "{},{:.4},{:.4},{:.4}",
            name, m.recall, m.precision, m.f1
        );
    }

    let mut pr_csv = String::from("model,threshold,precision,recall\n");
    for (name, curve) in curves {
        for p in &curve.points {
            let _ = writeln!(
                pr_csv,
                "{},{:.6},{:.6},{:.6}",
                name, p.threshold, p.precision, p.recall
            );
        }
    }

    let mut bands_csv =
        String::from("model,band_lo,band_hi,positives,detected,recall,out_of_band_positives\n");
    for (name, report) in bands {
        for b in &report.bands {
            let _ = writeln!(
                bands_csv,
                "{},{},{},{},{},{:.4},{}",
                name, b.lo, b.hi, b.positives, b.detected, b.recall, report.out_of_band_positives
            );
        }
    }

    let svg = pr_svg(curves);

    let mut written = Vec::new();
    for (name, content) in [
        ("metrics.csv", metrics_csv),
        ("pr_points.csv", pr_csv),
        ("bands.csv", bands_csv),
        ("pr.svg", svg),
    ] {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(path);
    }
    Ok(written)
}

/// Precision (y) against recall (x) on the unit square.
fn pr_svg(curves: &[(String, PRCurve)]) -> String {
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 20.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let x = |recall: f64| ml + recall * pw;
    let y = |precision: f64| mt + (1.0 - precision) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>",
            x(f),
            y(0.0),
            x(f),
            y(1.0)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>",
            x(0.0),
            y(f),
            x(1.0),
            y(f)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{:.1}</text>",
            x(f),
            h - mb + 18.0,
            f
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">{:.1}</text>",
            ml - 8.0,
            y(f) + 4.0,
            f
        );
    }
    let _ = writeln!(
        s,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"14\" text-anchor=\"middle\">recall</text>",
        ml + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.1}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">precision</text>",
        mt + ph / 2.0,
        mt + ph / 2.0
    );

    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !curve.points.is_empty() {
            let mut pts: Vec<(f64, f64)> = curve
                .points
                .iter()
                .map(|p| (p.recall, p.precision))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let path: Vec<String> = pts
                .iter()
                .map(|&(r, p)| format!("{:.2},{:.2}", x(r), y(p)))
                .collect();
            if pts.len() == 1 {
                let _ = writeln!(
                    s,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>",
                    x(pts[0].0),
                    y(pts[0].1)
                );
            } else {
                let _ = writeln!(
                    s,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                    path.join(" ")
                );
            }
        }
        let ly = mt + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            ml + 8.0,
            ly - 4.0,
            ml + 28.0,
            ly - 4.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>",
            ml + 34.0,
            ly,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
