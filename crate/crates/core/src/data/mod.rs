//! Signal corpora: the GWS1 binary format, CSV import, seeded train/test
//! splits and a synthetic tone-burst generator.

mod gws1;
mod import;
mod synth;

pub use gws1::{load_dataset, read_gws1, save_dataset, write_gws1, GWS1_MAGIC, GWS1_VERSION};
pub use import::{import_csv, import_csv_reader};
pub use synth::{hann_burst, synthesize, SynthConfig};

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::signal::{Label, Scalogram, Signal, SignalError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid synthesis configuration: {0}")]
    InvalidConfig(String),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported GWS1 version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid label code {0}")]
    BadLabel(u8),
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("cannot parse `{text}` at row {row}, column {column}")]
    ParseError {
        row: usize,
        column: usize,
        text: String,
    },
    #[error("requested {requested} {label} signals, only {available} available")]
    InsufficientSamples {
        label: Label,
        requested: usize,
        available: usize,
    },
    #[error("duplicate signal id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Signals sharing one sample rate and length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub signals: Vec<Signal>,
    pub sample_rate: f64,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(signals: Vec<Signal>, sample_rate: f64) -> Result<Self, DataError> {
        let ds = Dataset {
            signals,
            sample_rate,
            metadata: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(DataError::InvalidConfig(
                "sample rate must be positive".into(),
            ));
        }
        let n = self.n_samples();
        let mut seen = HashSet::new();
        for s in &self.signals {
            s.validate()?;
            if s.len() != n {
                return Err(DataError::LengthMismatch(format!(
                    "signal `{}` has {} samples, expected {n}",
                    s.id,
                    s.len()
                )));
            }
            if s.sample_rate != self.sample_rate {
                return Err(DataError::LengthMismatch(format!(
                    "signal `{}` is sampled at {} Hz, dataset at {} Hz",
                    s.id, s.sample_rate, self.sample_rate
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::DuplicateId(s.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    /// Samples per signal (0 for an empty dataset).
    pub fn n_samples(&self) -> usize {
        self.signals.first().map_or(0, Signal::len)
    }

    pub fn count(&self, label: Label) -> usize {
        self.signals.iter().filter(|s| s.label == label).count()
    }

    fn subset(&self, signals: Vec<Signal>) -> Dataset {
        Dataset {
            signals,
            sample_rate: self.sample_rate,
            metadata: self.metadata.clone(),
        }
    }
}

/// Requested partition sizes for [`split`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_train_baseline: usize,
    pub n_test_baseline: usize,
    pub n_test_damage: usize,
    pub seed: u64,
}

/// Baseline-only training set and a mixed test set, sampled without
/// replacement. Test signals are listed baseline first, then damage.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    let indices = |label: Label| -> Vec<usize> {
        dataset
            .signals
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect()
    };
    let mut baseline = indices(Label::Baseline);
    let mut damage = indices(Label::Damage);
    let need_baseline = spec.n_train_baseline + spec.n_test_baseline;
    if need_baseline > baseline.len() {
        return Err(DataError::InsufficientSamples {
            label: Label::Baseline,
            requested: need_baseline,
            available: baseline.len(),
        });
    }
    if spec.n_test_damage > damage.len() {
        return Err(DataError::InsufficientSamples {
            label: Label::Damage,
            requested: spec.n_test_damage,
            available: damage.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    baseline.shuffle(&mut rng);
    damage.shuffle(&mut rng);

    let pick = |idx: &[usize]| {
        idx.iter()
            .map(|&i| dataset.signals[i].clone())
            .collect::<Vec<_>>()
    };
    let train = pick(&baseline[..spec.n_train_baseline]);
    let mut test = pick(&baseline[spec.n_train_baseline..need_baseline]);
    test.extend(pick(&damage[..spec.n_test_damage]));
    Ok((dataset.subset(train), dataset.subset(test)))
}

/// A network-ready image with its identity, as listed in a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub label: Label,
    pub image: Scalogram,
}
