//! One-class detection: thresholds from training errors, strict-inequality
//! verdicts, confusion metrics and latent-space exports.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::data::LabeledImage;
use crate::signal::{Label, Scalogram};
use crate::vae::{images_to_tensor, score_errors, VaeError, VaeModel};

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("no training errors to derive thresholds from")]
    EmptyErrors,
    #[error("error value {value} at index {index} is not finite and non-negative")]
    InvalidError { index: usize, value: f64 },
    #[error("invalid thresholds: p99 {p99} must not exceed max {max}")]
    InvalidThresholds { p99: f64, max: f64 },
    #[error("sample `{0}` has no Baseline/Damage label")]
    UnlabeledSample(String),
    #[error("malformed {file}: {reason}")]
    Parse { file: &'static str, reason: String },
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Healthy,
    Anomaly,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Healthy => "healthy",
            Verdict::Anomaly => "anomaly",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Total per-sample error: reconstruction plus weighted KL.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub id: String,
    pub label: Label,
    pub error: f64,
}

/// Per-sample error with its two terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub id: String,
    pub label: Label,
    pub reconstruction: f64,
    pub kl: f64,
    pub error: f64,
}

impl ScoredSample {
    pub fn to_error_sample(&self) -> ErrorSample {
        ErrorSample {
            id: self.id.clone(),
            label: self.label,
            error: self.error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSet {
    pub p99: f64,
    pub max: f64,
}

impl ThresholdSet {
    pub fn new(p99: f64, max: f64) -> Result<Self, AnomalyError> {
        if !(p99.is_finite() && max.is_finite() && p99 <= max) {
            return Err(AnomalyError::InvalidThresholds { p99, max });
        }
        Ok(ThresholdSet { p99, max })
    }

    pub fn get(&self, kind: ThresholdKind) -> f64 {
        match kind {
            ThresholdKind::P99 => self.p99,
            ThresholdKind::Max => self.max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThresholdKind {
    P99,
    Max,
}

impl ThresholdKind {
    pub const ALL: [ThresholdKind; 2] = [ThresholdKind::P99, ThresholdKind::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdKind::P99 => "p99",
            ThresholdKind::Max => "max",
        }
    }
}

/// Nearest-rank 99th percentile and maximum.
///
/// The percentile is the sorted value at 1-based rank `ceil(0.99 n)`; it is
/// always an observed error.
pub fn compute_thresholds(errors: &[f64]) -> Result<ThresholdSet, AnomalyError> {
    if errors.is_empty() {
        return Err(AnomalyError::EmptyErrors);
    }
    if let Some((index, &value)) = errors
        .iter()
        .enumerate()
        .find(|(_, e)| !(e.is_finite() && **e >= 0.0))
    {
        return Err(AnomalyError::InvalidError { index, value });
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // 99n/100 in integers: ceil without floating-point rounding at exact ranks
    let rank = (99 * n).div_ceil(100).clamp(1, n);
    ThresholdSet::new(sorted[rank - 1], sorted[n - 1])
}

/// Anomaly iff `error > threshold`.
pub fn classify(error: f64, threshold: f64) -> Verdict {
    if error > threshold {
        Verdict::Anomaly
    } else {
        Verdict::Healthy
    }
}

/// Damage-positive confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, label: Label, verdict: Verdict) {
        match (label == Label::Damage, verdict) {
            (true, Verdict::Anomaly) => self.tp += 1,
            (true, Verdict::Healthy) => self.fn_ += 1,
            (false, Verdict::Anomaly) => self.fp += 1,
            (false, Verdict::Healthy) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// FP / (FP + TN), 0 when there are no negatives.
    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// FN / (FN + TP), 0 when there are no positives.
    pub fn fnr(&self) -> f64 {
        ratio(self.fn_, self.fn_ + self.tp)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleVerdict {
    pub id: String,
    pub label: Label,
    pub error: f64,
    pub p99: Verdict,
    pub max: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub thresholds: ThresholdSet,
    pub samples: Vec<SampleVerdict>,
    pub p99: ConfusionMatrix,
    pub max: ConfusionMatrix,
}

impl DetectionReport {
    pub fn matrix(&self, kind: ThresholdKind) -> &ConfusionMatrix {
        match kind {
            ThresholdKind::P99 => &self.p99,
            ThresholdKind::Max => &self.max,
        }
    }
}

pub fn evaluate(
    test_errors: &[ErrorSample],
    thresholds: &ThresholdSet,
) -> Result<DetectionReport, AnomalyError> {
    let mut report = DetectionReport {
        thresholds: *thresholds,
        samples: Vec::with_capacity(test_errors.len()),
        p99: ConfusionMatrix::default(),
        max: ConfusionMatrix::default(),
    };
    for s in test_errors {
        if s.label == Label::Unknown {
            return Err(AnomalyError::UnlabeledSample(s.id.clone()));
        }
        let p99 = classify(s.error, thresholds.p99);
        let max = classify(s.error, thresholds.max);
        report.p99.record(s.label, p99);
        report.max.record(s.label, max);
        report.samples.push(SampleVerdict {
            id: s.id.clone(),
            label: s.label,
            error: s.error,
            p99,
            max,
        });
    }
    Ok(report)
}

/// Scores labeled images with one seeded stochastic pass each; the error is
/// the training objective `reconstruction + kl_weight · kl`.
pub fn score_samples(
    model: &VaeModel<f32>,
    samples: &[LabeledImage],
    seed: u64,
    threads: usize,
    kl_weight: f64,
) -> Result<Vec<ScoredSample>, AnomalyError> {
    let images: Vec<Scalogram> = samples.iter().map(|s| s.image.clone()).collect();
    let scores = score_errors(model, &images, seed, threads)?;
    Ok(samples
        .iter()
        .zip(scores)
        .map(|(s, (reconstruction, kl))| ScoredSample {
            id: s.id.clone(),
            label: s.label,
            reconstruction,
            kl,
            error: reconstruction + kl_weight * kl,
        })
        .collect())
}

/// Posterior mean for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub id: String,
    pub label: Label,
    pub mu: Vec<f64>,
}

const LATENT_CHUNK: usize = 32;

/// Latent means from the encoder alone (no sampling).
pub fn export_latent(
    model: &VaeModel<f32>,
    samples: &[LabeledImage],
) -> Result<Vec<LatentRow>, AnomalyError> {
    let side = model.arch().image_size;
    let dim = model.latent_dim();
    let mut rows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(LATENT_CHUNK) {
        let images: Vec<&Scalogram> = chunk.iter().map(|s| &s.image).collect();
        let x = images_to_tensor::<f32>(&images, side)?;
        let (mu, _) = model.encode(&x).map_err(VaeError::from)?;
        for (s, m) in chunk.iter().zip(mu.data().chunks(dim)) {
            rows.push(LatentRow {
                id: s.id.clone(),
                label: s.label,
                mu: m.iter().map(|&v| v as f64).collect(),
            });
        }
    }
    Ok(rows)
}

/// Class-centroid distance against the pooled within-class spread.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub baseline_centroid: Vec<f64>,
    pub damage_centroid: Vec<f64>,
    pub distance: f64,
    /// `sqrt(((n_b-1) s_b² + (n_d-1) s_d²) / (n_b + n_d - 2))`, where `s²` is
    /// the mean squared Euclidean distance to the class centroid with the
    /// `n - 1` correction.
    pub pooled_std: f64,
}

impl Separation {
    pub fn ratio(&self) -> f64 {
        self.distance / self.pooled_std
    }
}

/// `None` unless both classes have at least two rows.
pub fn centroid_separation(rows: &[LatentRow]) -> Option<Separation> {
    let class = |label| {
        rows.iter()
            .filter(move |r| r.label == label)
            .collect::<Vec<_>>()
    };
    let (base, dmg) = (class(Label::Baseline), class(Label::Damage));
    if base.len() < 2 || dmg.len() < 2 {
        return None;
    }
    let dim = base[0].mu.len();
    let centroid = |set: &[&LatentRow]| -> Vec<f64> {
        (0..dim)
            .map(|j| set.iter().map(|r| r.mu[j]).sum::<f64>() / set.len() as f64)
            .collect()
    };
    let sq_dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let (cb, cd) = (centroid(&base), centroid(&dmg));
    let scatter =
        |set: &[&LatentRow], c: &[f64]| set.iter().map(|r| sq_dist(&r.mu, c)).sum::<f64>();
    let dof = (base.len() + dmg.len() - 2) as f64;
    let pooled_std = ((scatter(&base, &cb) + scatter(&dmg, &cd)) / dof).sqrt();
    let distance = sq_dist(&cb, &cd).sqrt();
    Some(Separation {
        baseline_centroid: cb,
        damage_centroid: cd,
        distance,
        pooled_std,
    })
}

/// `name,value` rows: `p99`, `max`, then any extra key/value pairs.
pub fn write_thresholds_csv<W: Write>(
    thresholds: &ThresholdSet,
    extra: &[(String, String)],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "name,value")?;
    writeln!(out, "p99,{}", thresholds.p99)?;
    writeln!(out, "max,{}", thresholds.max)?;
    for (k, v) in extra {
        writeln!(out, "{k},{v}")?;
    }
    Ok(())
}

/// Inverse of [`write_thresholds_csv`].
pub fn read_thresholds_csv<R: BufRead>(
    input: R,
) -> Result<(ThresholdSet, BTreeMap<String, String>), AnomalyError> {
    let err = |reason: String| AnomalyError::Parse {
        file: "thresholds.csv",
        reason,
    };
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == "name,value" => {}
        other => return Err(err(format!("bad header {other:?}"))),
    }
    let mut fields = BTreeMap::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| err(format!("row `{line}` lacks a comma")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut value = |key: &str| -> Result<f64, AnomalyError> {
        let text = fields
            .remove(key)
            .ok_or_else(|| err(format!("missing `{key}` row")))?;
        text.parse()
            .map_err(|_| err(format!("`{key}` value `{text}` is not a number")))
    };
    let (p99, max) = (value("p99")?, value("max")?);
    Ok((ThresholdSet::new(p99, max)?, fields))
}

/// `id,label,reconstruction,kl,error` rows.
pub fn write_errors_csv<W: Write>(samples: &[ScoredSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "id,label,reconstruction,kl,error")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.id, s.label, s.reconstruction, s.kl, s.error
        )?;
    }
    Ok(())
}

pub fn write_verdicts_csv<W: Write>(report: &DetectionReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "id,label,error,verdict_p99,verdict_max")?;
    for s in &report.samples {
        writeln!(out, "{},{},{},{},{}", s.id, s.label, s.error, s.p99, s.max)?;
    }
    Ok(())
}

/// One confusion-matrix row per entry of `kinds`, in that order.
pub fn write_metrics_csv<W: Write>(
    report: &DetectionReport,
    kinds: &[ThresholdKind],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "threshold,tp,fp,tn,fn,accuracy,fpr,fnr")?;
    for &kind in kinds {
        let m = report.matrix(kind);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            kind.as_str(),
            m.tp,
            m.fp,
            m.tn,
            m.fn_,
            m.accuracy(),
            m.fpr(),
            m.fnr()
        )?;
    }
    Ok(())
}

/// `id,label,mu1,mu2,...` rows.
pub fn write_latent_csv<W: Write>(rows: &[LatentRow], mut out: W) -> std::io::Result<()> {
    let dim = rows.first().map_or(2, |r| r.mu.len());
    let cols: Vec<String> = (1..=dim).map(|j| format!("mu{j}")).collect();
    writeln!(out, "id,label,{}", cols.join(","))?;
    for r in rows {
        let mu: Vec<String> = r.mu.iter().map(f64::to_string).collect();
        writeln!(out, "{},{},{}", r.id, r.label, mu.join(","))?;
    }
    Ok(())
}

pub fn read_latent_csv<R: BufRead>(input: R) -> Result<Vec<LatentRow>, AnomalyError> {
    let err = |reason: String| AnomalyError::Parse {
        file: "latent.csv",
        reason,
    };
    let mut lines = input.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| err("empty file".into()))?;
    let dim = header.split(',').count().saturating_sub(2);
    if !header.starts_with("id,label,") || dim == 0 {
        return Err(err(format!("bad header `{header}`")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != dim + 2 {
            return Err(err(format!("row `{line}` has {} fields", parts.len())));
        }
        let label = parts[1]
            .parse()
            .map_err(|_| err(format!("bad label `{}`", parts[1])))?;
        let mu = parts[2..]
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| err(format!("bad value `{p}`")))
            })
            .collect::<Result<_, _>>()?;
        rows.push(LatentRow {
            id: parts[0].to_string(),
            label,
            mu,
        });
    }
    Ok(rows)
}
