//! Difficulty distributions per item variant, pairwise comparisons and
//! plot-ready series.
//!
//! Standard deviations are population values. Quartiles interpolate
//! linearly between order statistics. Densities use a Gaussian kernel with
//! Silverman's bandwidth.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::psychometrics::IrtFit;

pub const HISTOGRAM_BINS: usize = 20;
pub const BANDWIDTH_RULE: &str = "silverman: 0.9 * min(sd_pop, iqr / 1.34) * n^(-1/5)";
/// Grid half-extent beyond the data, in bandwidths.
const KDE_PAD: f64 = 5.0;
/// Grid points per bandwidth.
const KDE_STEPS_PER_H: f64 = 4.0;
/// Bandwidth used when the data have no spread.
const FALLBACK_BANDWIDTH: f64 = 0.1;
/// An IQR below this fraction of the sd is fitting noise around a tie and
/// counts as zero.
const IQR_NOISE: f64 = 1e-6;
/// Upper bound on KDE grid points; the spacing widens beyond it.
const KDE_MAX_POINTS: usize = 4096;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("none of the requested items are in the fit")]
    EmptySubset,
    #[error("need at least two variants to compare, got {0}")]
    TooFewVariants(usize),
    #[error("duplicate variant label {0:?}")]
    DuplicateVariant(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Hard,
    Easy,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Hard => "hard",
            Variant::Easy => "easy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `None` for empty input.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Summary {
        n,
        mean,
        sd: var.sqrt(),
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyDistribution {
    pub variant: Variant,
    /// Strategy name, or "original" for the unmodified items.
    pub strategy: String,
    pub gap_control: bool,
    pub values: Vec<f64>,
    pub summary: Summary,
}

impl DifficultyDistribution {
    pub fn new(variant: Variant, strategy: impl Into<String>, gap_control: bool, values: Vec<f64>) -> Result<Self, ReportError> {
        let summary = summarize(&values).ok_or(ReportError::EmptySubset)?;
        Ok(DifficultyDistribution {
            variant,
            strategy: strategy.into(),
            gap_control,
            values,
            summary,
        })
    }

    /// File-name-safe identifier, e.g. `hard-three-factor-gap`.
    pub fn label(&self) -> String {
        if self.variant == Variant::Original && self.strategy == "original" {
            return if self.gap_control { "original-gap".into() } else { "original".into() };
        }
        let mut s = format!("{}-{}", self.variant.as_str(), self.strategy);
        if self.gap_control {
            s.push_str("-gap");
        }
        s
    }
}

/// Difficulties of the listed items. Ids missing from the fit are skipped.
pub fn difficulty_summary(
    fit: &IrtFit,
    items: &[String],
    variant: Variant,
    strategy: &str,
    gap_control: bool,
) -> Result<DifficultyDistribution, ReportError> {
    let values: Vec<f64> = items.iter().filter_map(|id| fit.b(id)).collect();
    if values.len() < items.len() {
        log::debug!("{} of {} items absent from fit", items.len() - values.len(), items.len());
    }
    DifficultyDistribution::new(variant, strategy, gap_control, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub from: String,
    pub to: String,
    /// mean(to) − mean(from)
    pub mean_shift: f64,
    /// sd(to) − sd(from)
    pub sd_delta: f64,
    /// iqr(to) − iqr(from)
    pub iqr_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub distributions: Vec<DifficultyDistribution>,
    /// All ordered pairs of distinct variants.
    pub shifts: Vec<Shift>,
    pub bandwidth_rule: String,
    pub sd_kind: String,
}

impl ComparisonReport {
    pub fn distribution(&self, label: &str) -> Option<&DifficultyDistribution> {
        self.distributions.iter().find(|d| d.label() == label)
    }

    pub fn shift(&self, from: &str, to: &str) -> Option<&Shift> {
        self.shifts.iter().find(|s| s.from == from && s.to == to)
    }
}

pub fn compare_variants(distributions: Vec<DifficultyDistribution>) -> Result<ComparisonReport, ReportError> {
    if distributions.len() < 2 {
        return Err(ReportError::TooFewVariants(distributions.len()));
    }
    let labels: Vec<String> = distributions.iter().map(|d| d.label()).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(ReportError::DuplicateVariant(l.clone()));
        }
    }
    let mut shifts = Vec::new();
    for (a, da) in distributions.iter().enumerate() {
        for (b, db) in distributions.iter().enumerate() {
            if a == b {
                continue;
            }
            shifts.push(Shift {
                from: labels[a].clone(),
                to: labels[b].clone(),
                mean_shift: db.summary.mean - da.summary.mean,
                sd_delta: db.summary.sd - da.summary.sd,
                iqr_delta: db.summary.iqr() - da.summary.iqr(),
            });
        }
    }
    Ok(ComparisonReport {
        distributions,
        shifts,
        bandwidth_rule: BANDWIDTH_RULE.into(),
        sd_kind: "population".into(),
    })
}

pub fn silverman_bandwidth(summary: &Summary) -> f64 {
    let spread = match (summary.sd, summary.iqr() / 1.34) {
        (sd, iqr) if iqr > IQR_NOISE * sd => sd.min(iqr),
        (sd, _) => sd,
    };
    let h = 0.9 * spread * (summary.n as f64).powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        FALLBACK_BANDWIDTH
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeSeries {
    pub bandwidth: f64,
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
}

/// Gaussian KDE on a grid covering the data ± 5 bandwidths, spaced at most
/// a quarter bandwidth apart (or coarser when that would need more than
/// 4096 points).
pub fn kde(values: &[f64]) -> Option<KdeSeries> {
    let s = summarize(values)?;
    let h = silverman_bandwidth(&s);
    let lo = s.min - KDE_PAD * h;
    let hi = s.max + KDE_PAD * h;
    let steps = ((hi - lo) / h * KDE_STEPS_PER_H)
        .ceil()
        .clamp(1.0, (KDE_MAX_POINTS - 1) as f64) as usize;
    let dx = (hi - lo) / steps as f64;
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let xs: Vec<f64> = (0..=steps).map(|k| lo + k as f64 * dx).collect();
    let density = xs
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Some(KdeSeries { bandwidth: h, xs, density })
}

/// Equal-width bins over [min, max] (left edges and counts); the last bin
/// includes max. Data without spread get unit-width bins centered on the value.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, usize)> {
    let Some(s) = summarize(values) else {
        return Vec::new();
    };
    let (lo, hi) = if s.max > s.min {
        (s.min, s.max)
    } else {
        (s.min - 0.5 * bins as f64, s.min + 0.5 * bins as f64)
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, c))
        .collect()
}

#[derive(Debug, Serialize)]
struct SummaryRecord<'a> {
    variant: Variant,
    strategy: &'a str,
    gap_control: bool,
    mean: f64,
    sd: f64,
    q1: f64,
    median: f64,
    q3: f64,
    min: f64,
    max: f64,
    n: usize,
    bandwidth: f64,
}

pub const SUMMARY_FILE: &str = "summary.jsonl";

/// Writes one `<label>.dat` series file per distribution (a KDE block, two
/// blank lines, then a histogram block) and a newline-delimited summary
/// file. Returns the paths written, summary last.
pub fn export_plot_data(report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut summary = String::new();
    for d in &report.distributions {
        let k = kde(&d.values).ok_or(ReportError::EmptySubset)?;
        let mut text = String::new();
        let _ = writeln!(
            text,
            "# variant={} strategy={} gap_control={} n={}",
            d.variant.as_str(),
            d.strategy,
            d.gap_control,
            d.summary.n
        );
        let _ = writeln!(text, "# kde bandwidth={} ({BANDWIDTH_RULE})", k.bandwidth);
        let _ = writeln!(text, "# x density");
        for (x, y) in k.xs.iter().zip(&k.density) {
            let _ = writeln!(text, "{x} {y}");
        }
        let _ = writeln!(text, "\n\n# histogram bins={HISTOGRAM_BINS}\n# bin_left count");
        for (left, count) in histogram(&d.values, HISTOGRAM_BINS) {
            let _ = writeln!(text, "{left} {count}");
        }
        let path = dir.join(format!("{}.dat", d.label()));
        fs::write(&path, text)?;
        written.push(path);

        let s = &d.summary;
        summary.push_str(&serde_json::to_string(&SummaryRecord {
            variant: d.variant,
            strategy: &d.strategy,
            gap_control: d.gap_control,
            mean: s.mean,
            sd: s.sd,
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            min: s.min,
            max: s.max,
            n: s.n,
            bandwidth: k.bandwidth,
        })?);
        summary.push('\n');
    }
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary)?;
    written.push(path);
    Ok(written)
}
