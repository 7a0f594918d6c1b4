//! Error metrics, per-sample error distributions and configuration
//! comparison reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{PathlossNormalization, RadioMap};
use crate::remnet::{RemArch, RemMode};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BINS: usize = 40;

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "metric inputs have lengths {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("metrics need at least one value"));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sum: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / y.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sum: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / y.len() as f64).sqrt())
}

fn map_values(map: &RadioMap) -> Vec<f64> {
    map.values.data().iter().map(|v| *v as f64).collect()
}

/// RMSE of each prediction against its paired truth.
pub fn per_sample_rmse(predictions: &[RadioMap], truths: &[RadioMap]) -> Result<Vec<f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    predictions
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (p, t))| {
            if p.shape() != t.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i}: prediction {:?} vs truth {:?}",
                    p.shape(),
                    t.shape()
                )));
            }
            rmse(&map_values(t), &map_values(p))
        })
        .collect()
}

/// Density-normalised histogram with the sample mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    /// Density per bin; `density[i] × width` sums to 1.
    pub density: Vec<f64>,
    pub mean: f64,
    pub n: usize,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }
}

/// Histogram of `samples` over their range.
///
/// When every sample is equal the range is widened to one unit around the
/// value, so all mass lands in a single central bin.
pub fn error_distribution(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.len() < 2 || bins < 2 {
        return Err(Error::invalid("error distribution needs n >= 2 and bins >= 2"));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("error distribution samples must be finite"));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for s in samples {
        let i = (((s - lo) / width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    let density = counts
        .iter()
        .map(|c| *c as f64 / (n as f64 * width))
        .collect();
    Ok(Histogram {
        edges,
        density,
        mean,
        n,
    })
}

/// Gaussian kernel density estimate at `points` with Scott's-rule bandwidth.
/// Presentation only; the histogram is the reference artefact.
pub fn smoothed_density(samples: &[f64], points: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::invalid("density smoothing needs n >= 2"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let bw = (sd * n.powf(-0.2)).max(1e-12);
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    Ok(points
        .iter()
        .map(|x| {
            norm * samples
                .iter()
                .map(|s| (-0.5 * ((x - s) / bw).powi(2)).exp())
                .sum::<f64>()
        })
        .collect())
}

/// Relative RMSE reduction in percent.
pub fn improvement_pct(rmse_baseline: f64, rmse_new: f64) -> Result<f64> {
    if !(rmse_baseline > 0.0) {
        return Err(Error::invalid(format!(
            "baseline RMSE must be positive, got {rmse_baseline}"
        )));
    }
    Ok(100.0 * (rmse_baseline - rmse_new) / rmse_baseline)
}

/// Fraction of samples strictly above `threshold`.
pub fn tail_mass(samples: &[f64], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("tail mass needs at least one sample"));
    }
    Ok(samples.iter().filter(|s| **s > threshold).count() as f64 / samples.len() as f64)
}

/// One configuration's scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub mode: RemMode,
    pub arch: RemArch,
    pub rmse_norm: f64,
    pub mae_norm: f64,
    pub rmse_db: f64,
    pub mae_db: f64,
    pub n_samples: usize,
    pub per_sample_rmse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub arch: RemArch,
    pub baseline: RemMode,
    pub mode: RemMode,
    pub pct: f64,
}

/// Table-II-shaped comparison across configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub normalization: PathlossNormalization,
    pub entries: Vec<EvalEntry>,
    pub improvements: Vec<Improvement>,
    pub distributions: Vec<(RemArch, RemMode, Histogram)>,
}

/// Scores predictions against truths under one configuration.
pub fn evaluate(
    mode: RemMode,
    arch: RemArch,
    predictions: &[RadioMap],
    truths: &[RadioMap],
    normalization: &PathlossNormalization,
) -> Result<EvalEntry> {
    let per = per_sample_rmse(predictions, truths)?;
    if per.is_empty() {
        return Err(Error::EmptyDataset("no samples to evaluate".into()));
    }
    let y: Vec<f64> = truths.iter().flat_map(map_values).collect();
    let y_hat: Vec<f64> = predictions.iter().flat_map(map_values).collect();
    let rmse_norm = rmse(&y, &y_hat)?;
    let mae_norm = mae(&y, &y_hat)?;
    Ok(EvalEntry {
        mode,
        arch,
        rmse_norm,
        mae_norm,
        rmse_db: normalization.error_to_db(rmse_norm),
        mae_db: normalization.error_to_db(mae_norm),
        n_samples: per.len(),
        per_sample_rmse: per,
    })
}

impl EvalReport {
    /// Sorts entries by (architecture, mode), derives improvements over the
    /// image-only baseline and per-sample RMSE histograms.
    pub fn new(normalization: PathlossNormalization, mut entries: Vec<EvalEntry>) -> Result<Self> {
        entries.sort_by_key(|e| (e.arch, e.mode));
        let mut improvements = Vec::new();
        for base in entries.iter().filter(|e| e.mode == RemMode::ImageOnly) {
            for e in entries
                .iter()
                .filter(|e| e.arch == base.arch && e.mode != RemMode::ImageOnly)
            {
                improvements.push(Improvement {
                    arch: e.arch,
                    baseline: base.mode,
                    mode: e.mode,
                    pct: improvement_pct(base.rmse_norm, e.rmse_norm)?,
                });
            }
        }
        let distributions = entries
            .iter()
            .filter(|e| e.per_sample_rmse.len() >= 2)
            .map(|e| Ok((e.arch, e.mode, error_distribution(&e.per_sample_rmse, DEFAULT_BINS)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            normalization,
            entries,
            improvements,
            distributions,
        })
    }

    pub fn entry(&self, arch: RemArch, mode: RemMode) -> Option<&EvalEntry> {
        self.entries.iter().find(|e| e.arch == arch && e.mode == mode)
    }

    /// Fixed-width text table, one row per configuration.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:<16} {:>10} {:>10} {:>9} {:>9} {:>8} {:>8}",
            "architecture", "configuration", "RMSE", "MAE", "RMSE dB", "MAE dB", "n", "vs img"
        );
        for e in &self.entries {
            let imp = self
                .improvements
                .iter()
                .find(|i| i.arch == e.arch && i.mode == e.mode)
                .map(|i| format!("{:+.2}%", i.pct))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<14} {:<16} {:>10.4} {:>10.4} {:>9.3} {:>9.3} {:>8} {:>8}",
                e.arch.display_name(),
                e.mode.to_string(),
                e.rmse_norm,
                e.mae_norm,
                e.rmse_db,
                e.mae_db,
                e.n_samples,
                imp
            );
        }
        s
    }
}

/// SVG line plot of several histograms with dashed mean markers.
pub fn distribution_svg(title: &str, series: &[(String, Histogram)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let x_lo = series.iter().map(|(_, h)| h.edges[0]).fold(f64::INFINITY, f64::min);
    let x_hi = series
        .iter()
        .map(|(_, h)| *h.edges.last().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let y_hi = series
        .iter()
        .flat_map(|(_, h)| h.density.iter().cloned())
        .fold(0.0, f64::max)
        .max(1e-12);
    let (x_lo, x_hi) = if series.is_empty() { (0.0, 1.0) } else { (x_lo, x_hi) };
    let sx = |x: f64| M + (x - x_lo) / (x_hi - x_lo).max(1e-12) * (W - 2.0 * M);
    let sy = |y: f64| H - M - y / y_hi * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{y}" stroke="black"/>"#,
        y = H - M,
        x2 = W - M
    );
    let _ = writeln!(s, r#"<text x="{M}" y="{}" text-anchor="middle">{x_lo:.4}</text>"#, H - M + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_hi:.4}</text>"#, W - M, H - M + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">per-sample RMSE</text>"#, W / 2.0, H - 10.0);
    for (k, (label, h)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts = String::new();
        for (i, d) in h.density.iter().enumerate() {
            let xc = 0.5 * (h.edges[i] + h.edges[i + 1]);
            let _ = write!(pts, "{:.2},{:.2} ", sx(xc), sy(*d));
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.trim_end());
        let mx = sx(h.mean);
        let _ = writeln!(
            s,
            r#"<line x1="{mx:.2}" y1="{M}" x2="{mx:.2}" y2="{}" stroke="{color}" stroke-dasharray="6,4"/>"#,
            H - M
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{} (mean {:.4})</text>"#,
            W - M - 200.0,
            M + 16.0 * k as f64,
            escape(label),
            h.mean
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_computed_metrics() {
        assert_eq!(mae(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!((rmse(&[0.0, 2.0], &[0.0, 0.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch(_))));
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn normalised_rmse_converts_to_db() {
        let norm = PathlossNormalization::default();
        let e = rmse(&[0.0, 0.1], &[0.0735, 0.1735]).unwrap();
        assert!((norm.error_to_db(e) - 7.35).abs() < 1e-9);
    }

    #[test]
    fn histogram_normalisation_and_spike() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..20000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let h = error_distribution(&xs, 20).unwrap();
        let total: f64 = h.density.iter().map(|d| d * h.bin_width()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(h.density.iter().all(|d| (d - 1.0).abs() < 0.1), "{:?}", h.density);

        let flat = error_distribution(&[0.25; 5], 4).unwrap();
        assert_eq!(flat.mean, 0.25);
        assert_eq!(flat.density.iter().filter(|d| **d > 0.0).count(), 1);
        assert!(error_distribution(&[1.0], 4).is_err());
    }

    #[test]
    fn improvement_and_tail() {
        assert!((improvement_pct(0.0942, 0.0901).unwrap() - 4.3524).abs() < 1e-3);
        assert!((improvement_pct(0.0885, 0.0847).unwrap() - 4.2938).abs() < 1e-3);
        assert_eq!(improvement_pct(0.5, 0.5).unwrap(), 0.0);
        assert!(improvement_pct(0.0, 0.1).is_err());
        assert_eq!(tail_mass(&[0.1, 0.2, 0.3], 0.15).unwrap(), 2.0 / 3.0);
        assert_eq!(tail_mass(&[0.1, 0.2, 0.3], 0.0).unwrap(), 1.0);
        assert_eq!(tail_mass(&[0.1, 0.2, 0.3], 0.3).unwrap(), 0.0);
    }

    fn map(values: Vec<f32>) -> RadioMap {
        RadioMap::new(Grid::from_vec(1, values.len(), values).unwrap(), PathlossNormalization::default()).unwrap()
    }

    #[test]
    fn report_is_ordered_and_consistent() {
        let norm = PathlossNormalization::default();
        let truth = vec![map(vec![0.5, 0.5]), map(vec![0.2, 0.4])];
        let worse = vec![map(vec![0.6, 0.5]), map(vec![0.2, 0.1])];
        let better = vec![map(vec![0.55, 0.5]), map(vec![0.2, 0.3])];
        let a = evaluate(RemMode::TrueNdsm, RemArch::LitRadioUNet, &better, &truth, &norm).unwrap();
        let b = evaluate(RemMode::ImageOnly, RemArch::LitRadioUNet, &worse, &truth, &norm).unwrap();
        let report = EvalReport::new(norm, vec![a, b]).unwrap();
        assert_eq!(report.entries[0].mode, RemMode::ImageOnly);
        assert_eq!(report.improvements.len(), 1);
        assert!(report.improvements[0].pct > 0.0);
        for e in &report.entries {
            assert!(e.rmse_norm >= e.mae_norm);
            assert!((e.rmse_db - 100.0 * e.rmse_norm).abs() < 1e-12);
        }
        assert!(report.table().lines().count() == 3);
        let svg = distribution_svg("t", &[("a".into(), report.distributions[0].2.clone())]);
        assert!(svg.starts_with("<svg") && svg.contains("stroke-dasharray"));
    }
}
