//! Continuous wavelet transform of 1-D signals into normalized scalograms.

mod cwt;
mod scalogram;

pub use cwt::{cwt, cwt_complex, morlet_eval, CwtPlan};
pub use scalogram::{
    normalize_minmax, read_scg1, resize_bilinear, write_pgm, write_scg1, Scalogram, SCG1_MAGIC,
};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("signal `{id}` is invalid: {reason}")]
    InvalidSignal { id: String, reason: String },
    #[error("Morlet center parameter must be >= 5, got {0}")]
    InvalidBasis(f64),
    #[error("scale grid must be non-empty, positive and strictly increasing")]
    InvalidGrid,
    #[error("scale {0} is below one sample and cannot be resolved")]
    InvalidScale(f64),
    #[error("scalogram is empty")]
    EmptyMap,
    #[error("invalid resize target {0}x{1}")]
    InvalidSize(usize, usize),
    #[error("scalogram values do not match {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize },
    #[error("malformed SCG1 data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Class of a recording. Positives for detection metrics are `Damage`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Baseline,
    Damage,
    Unknown,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Baseline => 0,
            Label::Damage => 1,
            Label::Unknown => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Baseline),
            1 => Some(Label::Damage),
            2 => Some(Label::Unknown),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Baseline => "baseline",
            Label::Damage => "damage",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" | "healthy" => Ok(Label::Baseline),
            "damage" | "anomaly" => Ok(Label::Damage),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// A sampled 1-D recording.
///
/// Samples are kept in 32-bit precision so that the on-disk corpus format
/// round-trips them exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub id: String,
    pub label: Label,
    pub sample_rate: f64,
    pub samples: Vec<f32>,
}

impl Signal {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        sample_rate: f64,
        samples: Vec<f32>,
    ) -> Result<Self, SignalError> {
        let signal = Signal {
            id: id.into(),
            label,
            sample_rate,
            samples,
        };
        signal.validate()?;
        Ok(signal)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let invalid = |reason: &str| SignalError::InvalidSignal {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.samples.is_empty() {
            return Err(invalid("no samples"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(invalid("sample rate must be positive"));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite sample"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletKind {
    Morlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveletBasis {
    pub kind: WaveletKind,
    /// Morlet ω₀.
    pub center_param: f64,
}

impl WaveletBasis {
    pub fn morlet(center_param: f64) -> Result<Self, SignalError> {
        if !(center_param >= 5.0 && center_param.is_finite()) {
            return Err(SignalError::InvalidBasis(center_param));
        }
        Ok(WaveletBasis {
            kind: WaveletKind::Morlet,
            center_param,
        })
    }

    /// Scale (in samples) whose passband centre sits at `freq_hz`.
    pub fn scale_for_frequency(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        self.center_param / (2.0 * std::f64::consts::PI) * sample_rate / freq_hz
    }
}

impl Default for WaveletBasis {
    fn default() -> Self {
        WaveletBasis {
            kind: WaveletKind::Morlet,
            center_param: 6.0,
        }
    }
}

/// Ascending wavelet scales, in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    scales: Vec<f64>,
}

impl ScaleGrid {
    pub fn new(scales: Vec<f64>) -> Result<Self, SignalError> {
        if scales.is_empty()
            || scales.iter().any(|s| !(*s > 0.0 && s.is_finite()))
            || scales.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(SignalError::InvalidGrid);
        }
        Ok(ScaleGrid { scales })
    }

    /// `count` logarithmically spaced scales from `min` to `max` inclusive.
    pub fn logspace(min: f64, max: f64, count: usize) -> Result<Self, SignalError> {
        if count == 0
            || !(min.is_finite() && min > 0.0)
            || !(max.is_finite() && max >= min)
            || (count > 1 && max == min)
        {
            return Err(SignalError::InvalidGrid);
        }
        if count == 1 {
            return ScaleGrid::new(vec![min]);
        }
        let (lo, hi) = (min.ln(), max.ln());
        let step = (hi - lo) / (count - 1) as f64;
        let mut scales: Vec<f64> = (0..count).map(|i| (lo + step * i as f64).exp()).collect();
        // pin the endpoints against exp/ln roundoff
        scales[0] = min;
        scales[count - 1] = max;
        ScaleGrid::new(scales)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

impl Default for ScaleGrid {
    /// 64 log-spaced scales over [2, 128] samples.
    fn default() -> Self {
        ScaleGrid::logspace(2.0, 128.0, 64).expect("default grid is valid")
    }
}
