//! Schema-versioned report emission: JSON envelopes, CSV curves, and simple
//! SVG line plots, all written atomically.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const SCHEMA: &str = "camsim-report/1";

/// JSON envelope carried by every emitted report.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub schema: &'static str,
    pub kind: String,
    pub payload: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(kind: &str, payload: T) -> Self {
        Report {
            schema: SCHEMA,
            kind: kind.to_string(),
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

/// Resolve the output directory: explicit flag, then config, then the
/// CAMSIM_OUT environment variable, then ./camsim_out.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = config {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("CAMSIM_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("camsim_out")
}

/// Write a file atomically: stage next to the target, then rename over it.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn write_report<T: Serialize>(dir: &Path, name: &str, report: &Report<T>) -> Result<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, &report.to_json()?)?;
    Ok(path)
}

/// Two-column CSV with a documentation header comment.
pub fn curve_csv(comment: &str, x_name: &str, y_name: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("# {comment}\n{x_name},{y_name}\n");
    for (x, y) in points {
        out.push_str(&format!("{x:.12e},{y:.12e}\n"));
    }
    out
}

/// Minimal SVG line plot: one polyline per series, linear axes, a legend.
pub fn svg_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.clone()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    if (x1 - x0).abs() < 1e-300 {
        x1 = x0 + 1.0;
    }
    if (y1 - y0).abs() < 1e-300 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
        W / 2.0,
        H - 16.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        xml_escape(y_label)
    ));
    // Axis extremes.
    for (v, x, y, anchor) in [
        (x0, M, H - M + 16.0, "middle"),
        (x1, W - M, H - M + 16.0, "middle"),
        (y0, M - 6.0, H - M, "end"),
        (y1, M - 6.0, M, "end"),
    ] {
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\" font-size=\"10\">{v:.4}</text>\n"
        ));
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        let ly = M + 16.0 * k as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            W - M - 120.0,
            W - M - 100.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>\n",
            W - M - 94.0,
            ly + 4.0,
            xml_escape(name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_envelope_is_schema_versioned() {
        let r = Report::new("demo", vec![1, 2, 3]);
        let json = r.to_json().unwrap();
        assert!(json.contains("\"schema\": \"camsim-report/1\""));
        assert!(json.contains("\"kind\": \"demo\""));
    }

    #[test]
    fn report_serialization_is_deterministic() {
        let r = Report::new("demo", vec![0.1, 0.2]);
        assert_eq!(r.to_json().unwrap(), r.to_json().unwrap());
    }

    #[test]
    fn empty_sweep_is_still_schema_conformant() {
        let r = Report::new("sweep", Vec::<f64>::new());
        let json = r.to_json().unwrap();
        assert!(json.contains("camsim-report/1"));
        assert!(json.contains("[]"));
    }

    #[test]
    fn csv_has_header_comment_and_rows() {
        let csv = curve_csv("demo curve", "x_s", "y_v", &[(0.0, 1.0), (1.0, 2.0)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("# "));
        assert_eq!(lines[1], "x_s,y_v");
    }

    #[test]
    fn svg_plot_contains_polyline() {
        let svg = svg_line_plot(
            "t",
            "x",
            "y",
            &[("a".to_string(), vec![(0.0, 0.0), (1.0, 1.0)])],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<polyline"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn atomic_write_round_trips() {
        let dir = std::env::temp_dir().join("camsim_report_test");
        let path = dir.join("x.json");
        write_atomic(&path, "hello").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "hello");
        write_atomic(&path, "world").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "world");
        let _ = std::fs::remove_dir_all(&dir);
    }
}
