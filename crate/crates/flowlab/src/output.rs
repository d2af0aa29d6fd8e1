//! CSV tables, SVG plots and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// Shortest round-trip rendering, so equal values always print equal bytes.
pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
    }
}

/// One named output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn csv(name: &str, t: &Table) -> Result<Self> {
        Ok(Self { name: name.into(), bytes: t.to_csv()? })
    }
    pub fn svg(name: &str, svg: String) -> Self {
        Self { name: name.into(), bytes: svg.into_bytes() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub wall_time_s: f64,
    pub workers: usize,
    pub matrix_norm: String,
    pub outputs: Vec<String>,
}

/// Writes files into one directory and removes everything it wrote if a
/// later write fails or [`OutputDir::discard`] is called.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, a: &Artifact) -> Result<()> {
        let p = self.dir.join(&a.name);
        let r = fs::write(&p, &a.bytes);
        // a failed write may leave a truncated file behind
        self.written.push(p);
        if let Err(e) = r {
            self.discard();
            return Err(e.into());
        }
        Ok(())
    }

    pub fn discard(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }

    pub fn written(&self) -> Vec<String> {
        self.written.iter().filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect()
    }
}

/// One polyline of a [`line_plot`].
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 60.0;

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal SVG line plot; log axes plot `log10` of positive values.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool, log_y: bool) -> String {
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let ok = |p: &(f64, f64)| (!log_x || p.0 > 0.0) && (!log_y || p.1 > 0.0) && p.0.is_finite() && p.1.is_finite();
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().filter(|p| ok(p)).map(|p| tx(p.0))));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().filter(|p| ok(p)).map(|p| ty(p.1))));
    let sx = |v: f64| M + (tx(v) - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |v: f64| H - M - (ty(v) - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    s += &format!("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n", W / 2.0, esc(title));
    s += &format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M,
        H - M
    );
    let lx = if log_x { format!("log10 {x_label}") } else { x_label.to_string() };
    let ly = if log_y { format!("log10 {y_label}") } else { y_label.to_string() };
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n", W / 2.0, H - 15.0, esc(&lx));
    s += &format!(
        "<text x=\"15\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 15 {})\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        esc(&ly)
    );
    for (v, anchor, x, y) in [(x0, "start", M, H - M + 18.0), (x1, "end", W - M, H - M + 18.0)] {
        s += &format!("<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\" font-size=\"11\">{v:.3}</text>\n");
    }
    for (v, y) in [(y0, H - M), (y1, M)] {
        s += &format!("<text x=\"{}\" y=\"{y}\" text-anchor=\"end\" font-size=\"11\">{v:.3}</text>\n", M - 4.0);
    }
    for (i, se) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = se.points.iter().filter(|p| ok(p)).map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        s += &format!("<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"2\" points=\"{}\"/>\n", pts.join(" "));
        s += &format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{c}\">{}</text>\n",
            W - M - 150.0,
            M + 16.0 * (i as f64 + 1.0),
            esc(&se.name)
        );
    }
    s += "</svg>\n";
    s
}

/// Shaded `(α, 2/q)` cells with the two boundary lines.
pub fn regime_svg(cells: &[(f64, f64, &str)], alpha_range: (f64, f64), y_max: f64) -> String {
    let (a0, a1) = alpha_range;
    let sx = |a: f64| M + (a - a0) / (a1 - a0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - y / y_max * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for &(a, y, label) in cells {
        let c = match label {
            "StrongExistence" => "#a6dba0",
            "NonExistence" => "#f4a582",
            _ => "#e0e0e0",
        };
        s += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{c}\"/>\n", sx(a), sy(y.min(y_max)));
    }
    for (off, name) in [(0.0, "2/q = alpha"), (1.0, "2/q = alpha + 1")] {
        s += &format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>\n",
            sx(a0),
            sy((a0 + off).min(y_max)),
            sx(a1),
            sy((a1 + off).min(y_max))
        );
        s += &format!("<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{name}</text>\n", sx(a1) - 90.0, sy((a1 + off).min(y_max)) - 6.0);
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">alpha</text>\n<text x=\"15\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 15 {})\">2/q</text>\n",
        W / 2.0,
        H - 15.0,
        H / 2.0,
        H / 2.0
    );
    s += "</svg>\n";
    s
}
