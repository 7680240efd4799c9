//! Report files: metrics CSV, per-run log, curves and adversarial tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use natspace::metrics::MetricsReport;

pub const METRICS_HEADER: [&str; 9] = ["experiment", "variant", "runs", "A", "sigma_A", "P_c", "P_i", "P_g", "N"];

/// Where artifacts go; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    dir: Option<PathBuf>,
}

impl Outputs {
    pub fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Writes `name` (relative, may contain directories) unless in memory.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_with(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

pub fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_default()
}

/// One metrics CSV line per `(variant, report)`.
pub fn metrics_csv(experiment: &str, rows: &[(String, MetricsReport)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for (variant, r) in rows {
        w.write_record([
            experiment.to_string(),
            variant.clone(),
            r.runs.to_string(),
            pct(r.accuracy),
            pct(r.sigma_accuracy),
            opt_pct(r.p_c),
            opt_pct(r.p_i),
            opt_pct(r.p_g),
            format!("{:.2}", r.noise_rate),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Renders a CSV file as an aligned text table.
pub fn render_table(csv_bytes: &[u8]) -> Result<String> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(csv_bytes);
    let rows: Vec<Vec<String>> = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

/// Appends `x` in shortest round-trip form.
pub fn push_num(line: &mut Vec<u8>, x: f64) {
    write!(line, "{x}").expect("writing to a Vec");
}
