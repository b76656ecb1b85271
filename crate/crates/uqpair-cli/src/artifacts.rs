//! Run-directory plumbing: manifests, flat reports, per-sample CSVs, and
//! a dependency-free SVG scatter renderer for the analysis panels.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use uqpair::metrics::MetricReport;
use uqpair::trainer::SampleRecord;
use uqpair::{Error, Result};

use crate::config::FullConfig;

/// Every run directory starts with one of these; reports reference it by
/// living next to it. Immutable once written.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: FullConfig,
    pub seeds: Vec<u64>,
    pub dataset_paths: Vec<PathBuf>,
    pub tool_version: String,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: &FullConfig, seeds: &[u64], paths: &[PathBuf]) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            seeds: seeds.to_vec(),
            dataset_paths: paths.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(dir.join("manifest.json"), body + "\n")?;
        Ok(())
    }
}

/// Create the run directory; refuses to reuse one that already holds a
/// manifest, since manifests are immutable.
pub fn create_run_dir(dir: &Path) -> Result<()> {
    if dir.join("manifest.json").exists() {
        return Err(Error::Config(format!(
            "{} already contains a manifest; pick a fresh --out-dir",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Nine significant digits, the serialization contract for every float in
/// reports and CSVs.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    format!("{v:.8e}")
}

/// Flat machine-readable report: one `key = value` line per metric.
pub fn write_flat_report(path: &Path, sections: &[(&str, &MetricReport)]) -> Result<()> {
    let mut out = String::new();
    for (prefix, report) in sections {
        for (k, v) in report.flat() {
            if prefix.is_empty() {
                out.push_str(&format!("{k} = {}\n", sig9(v)));
            } else {
                out.push_str(&format!("{prefix}.{k} = {}\n", sig9(v)));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-sample records with the noisy-label columns, re-runnable downstream.
pub fn write_samples_csv(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "id\ty\toriginal_score\ty_bar\tsigma2_bar\tis_noisy")?;
    for r in records {
        let orig = r.original_score.map(sig9).unwrap_or_default();
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            sig9(r.y),
            orig,
            sig9(r.y_bar),
            sig9(r.sigma2_bar),
            r.is_noisy
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Validation history: one row per epoch.
pub fn write_history_csv(path: &Path, history: &[MetricReport], train_loss: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch\ttrain_loss\tpcc\tscc\tccc\trmse\tnlpd\tcal\tshp")?;
    for (i, (m, loss)) in history.iter().zip(train_loss).enumerate() {
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            sig9(*loss),
            sig9(m.pcc),
            sig9(m.scc),
            sig9(m.ccc),
            sig9(m.rmse),
            sig9(m.nlpd),
            sig9(m.cal),
            sig9(m.shp)
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Equal-width histogram over [min, max] of the pooled values.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let mut b = ((v - lo) / width) as usize;
        if b >= bins {
            b = bins - 1;
        }
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

/// Minimal self-contained scatter SVG: two point classes, axes with end
/// labels. Cosmetic output; the CSV panels are the contract.
pub fn scatter_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    clean: &[(f64, f64)],
    noisy: &[(f64, f64)],
) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let all = clean.iter().chain(noisy);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        W / 2.0
    );
    s.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M,
        H - M
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x_label}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        W / 2.0,
        H - 16.0,
        H / 2.0,
        H / 2.0
    ));
    for (lbl, v, x, anchor) in [
        (sig9(x0), H - M + 16.0, M, "middle"),
        (sig9(x1), H - M + 16.0, W - M, "middle"),
    ] {
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{v}\" text-anchor=\"{anchor}\" font-family=\"monospace\" font-size=\"10\">{lbl}</text>\n"
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"10\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"10\">{}</text>\n",
        M - 4.0,
        H - M,
        sig9(y0),
        M - 4.0,
        M + 10.0,
        sig9(y1)
    ));
    for &(x, y) in clean {
        s.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"#3366cc\" fill-opacity=\"0.55\"/>\n",
            px(x),
            py(y)
        ));
    }
    for &(x, y) in noisy {
        s.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"#cc3333\" fill-opacity=\"0.55\"/>\n",
            px(x),
            py(y)
        ));
    }
    s.push_str(&format!(
        "<circle cx=\"{}\" cy=\"20\" r=\"3\" fill=\"#3366cc\"/><text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"11\">clean</text>\n\
         <circle cx=\"{}\" cy=\"20\" r=\"3\" fill=\"#cc3333\"/><text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"11\">noisy</text>\n</svg>\n",
        W - 150.0,
        W - 142.0,
        W - 90.0,
        W - 82.0
    ));
    std::fs::write(path, s)?;
    Ok(())
}
