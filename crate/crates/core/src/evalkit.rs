//! Cosine similarity, percentile bootstrap intervals, heatmaps and atomic
//! file output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mdp::GridWorld;
use crate::rng::{stream_rng, streams};

pub fn cosine_similarity(a: &[f64], b: &[f64], center: bool) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("cosine of vectors of length {} and {}", a.len(), b.len())));
    }
    let shift = |x: &[f64]| {
        let m = if center { x.iter().sum::<f64>() / x.len() as f64 } else { 0.0 };
        x.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let (a, b) = (shift(a), shift(b));
    let (na, nb) = (crate::matrix::norm2(&a), crate::matrix::norm2(&b));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Invalid("cosine similarity of a zero-norm vector".into()));
    }
    Ok((crate::matrix::dot(&a, &b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSpec {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec { resamples: 10_000, confidence: 0.95, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub low: f64,
    pub mean: f64,
    pub high: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.low <= other.high && other.low <= self.high
    }
}

/// Percentile bootstrap over resampled means.
pub fn bootstrap_ci(samples: &[f64], spec: BootstrapSpec) -> Result<Interval> {
    if samples.len() < 2 {
        return Err(Error::Invalid("bootstrap needs at least two samples".into()));
    }
    if spec.resamples < 1000 || !(spec.confidence > 0.0 && spec.confidence < 1.0) {
        return Err(Error::Invalid("bootstrap needs >= 1000 resamples and confidence in (0, 1)".into()));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut rng = stream_rng(spec.seed, streams::BOOTSTRAP);
    let mut means: Vec<f64> = (0..spec.resamples)
        .map(|_| (0..n).map(|_| samples[rng.gen_range(0..n as u32) as usize]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - spec.confidence) / 2.0;
    let b = spec.resamples as f64;
    let lo = ((tail * b).floor() as usize).min(spec.resamples - 1);
    let hi = (((1.0 - tail) * b).ceil() as usize).clamp(1, spec.resamples) - 1;
    Ok(Interval { low: means[lo].min(mean), mean, high: means[hi].max(mean) })
}

/// Grid of values in layout shape; wall cells are empty fields.
pub fn heatmap_csv(gw: &GridWorld, values: &[f64]) -> Result<String> {
    check_len(gw, values)?;
    let mut out = String::new();
    for r in 0..gw.layout.rows {
        for c in 0..gw.layout.cols {
            if c > 0 {
                out.push(',');
            }
            if let Some(s) = gw.state_at(r, c) {
                write!(out, "{}", values[s]).unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Inverse of `heatmap_csv`.
pub fn parse_heatmap_csv(gw: &GridWorld, text: &str) -> Result<Vec<f64>> {
    let mut values = vec![f64::NAN; gw.n_states];
    for (r, line) in text.lines().enumerate() {
        for (c, field) in line.split(',').enumerate() {
            if let Some(s) = gw.state_at(r, c) {
                values[s] = field.parse().map_err(|e| Error::Format(format!("heatmap ({r}, {c}): {e}")))?;
            }
        }
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Format("heatmap does not cover every state".into()));
    }
    Ok(values)
}

/// 8-bit binary graymap ("P5"), min-max scaled over states; walls are black
/// and a constant vector maps to mid-gray.
pub fn heatmap_pgm(gw: &GridWorld, values: &[f64]) -> Result<Vec<u8>> {
    check_len(gw, values)?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Invalid("heatmap values must be finite".into()));
    }
    let (rows, cols) = (gw.layout.rows, gw.layout.cols);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in 0..rows {
        for c in 0..cols {
            out.push(match gw.state_at(r, c) {
                None => 0,
                Some(_) if hi == lo => 128,
                Some(s) => (255.0 * (values[s] - lo) / (hi - lo)).round() as u8,
            });
        }
    }
    Ok(out)
}

/// Writes `<stem>.csv` and `<stem>.pgm`.
pub fn export_heatmap(gw: &GridWorld, values: &[f64], stem: &Path) -> Result<()> {
    write_atomic(&stem.with_extension("csv"), heatmap_csv(gw, values)?.as_bytes())?;
    write_atomic(&stem.with_extension("pgm"), &heatmap_pgm(gw, values)?)
}

fn check_len(gw: &GridWorld, values: &[f64]) -> Result<()> {
    if values.len() != gw.n_states {
        return Err(Error::Shape(format!("{} values for {} states", values.len(), gw.n_states)));
    }
    Ok(())
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `step,<column>` CSV of a curve.
pub fn curve_csv<T: std::fmt::Display>(column: &str, curve: &[(usize, T)]) -> String {
    let mut out = format!("step,{column}\n");
    for (s, v) in curve {
        writeln!(out, "{s},{v}").unwrap();
    }
    out
}

/// `state_id,<column>` CSV of a per-state vector.
pub fn state_csv(column: &str, values: &[f64]) -> String {
    let mut out = format!("state_id,{column}\n");
    for (s, v) in values.iter().enumerate() {
        writeln!(out, "{s},{v}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        let x = [1.0, -2.0, 0.5];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine_similarity(&x, &x, false).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&x, &neg, false).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0], false).is_err());
        assert!(cosine_similarity(&[1.0, 1.0], &[1.0, 2.0], true).is_err());
    }

    #[test]
    fn bootstrap_constant_and_range() {
        let spec = BootstrapSpec::default();
        let iv = bootstrap_ci(&[3.0; 5], spec).unwrap();
        assert_eq!((iv.low, iv.mean, iv.high), (3.0, 3.0, 3.0));
        let iv = bootstrap_ci(&[0.0, 1.0], spec).unwrap();
        assert!(0.0 <= iv.low && iv.high <= 1.0 && iv.low <= iv.mean && iv.mean <= iv.high);
        assert!(bootstrap_ci(&[1.0], spec).is_err());
        assert_eq!(bootstrap_ci(&[1.0, 4.0, 2.0], spec).unwrap(), bootstrap_ci(&[1.0, 4.0, 2.0], spec).unwrap());
    }

    #[test]
    fn constant_heatmap_is_mid_gray() {
        let gw = GridWorld::bundled("grid_task").unwrap();
        let img = heatmap_pgm(&gw, &vec![2.5; gw.n_states]).unwrap();
        let header = format!("P5\n{} {}\n255\n", gw.layout.cols, gw.layout.rows);
        assert!(img.starts_with(header.as_bytes()));
        let pixels = &img[header.len()..];
        for s in 0..gw.n_states {
            let (r, c) = gw.states[s];
            assert_eq!(pixels[r * gw.layout.cols + c], 128);
        }
    }
}
