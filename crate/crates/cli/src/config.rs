//! Flat `key = value` run configuration.
//!
//! Resolution order, later wins: built-in defaults, the `--config` file,
//! `--set key=value` pairs, then dedicated command-line flags.

use std::fmt::Display;
use std::str::FromStr;

use gwvae::anomaly::ThresholdKind;
use gwvae::data::{SplitSpec, SynthConfig};
use gwvae::nn::AdamConfig;
use gwvae::signal::{ScaleGrid, WaveletBasis};
use gwvae::vae::{TrainConfig, VaeArch};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    DuplicateKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("`{0}` is required for this command")]
    Missing(&'static str),
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,

    pub out: String,
    pub corpus: String,
    pub manifest: String,
    pub model: String,
    pub thresholds: String,

    pub synth: SynthConfig,

    pub wavelet_center: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub scale_count: usize,
    pub image_size: usize,
    pub write_pgm: bool,
    pub split: bool,
    pub n_train_baseline: usize,
    pub n_test_baseline: usize,
    pub n_test_damage: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub latent_dim: usize,
    pub filters: Vec<usize>,
    pub negative_slope: f64,
    pub output_bias_init: f64,
    pub kl_weight: f64,

    pub detect_thresholds: Vec<ThresholdKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = VaeArch::default();
        let train = TrainConfig::default();
        let grid = ScaleGrid::default();
        let split = SplitSpec {
            n_train_baseline: 512,
            n_test_baseline: 128,
            n_test_damage: 128,
            seed: 0,
        };
        RunConfig {
            seed: 0,
            threads: 1,
            out: "out".into(),
            corpus: "corpus.gws".into(),
            manifest: String::new(),
            model: String::new(),
            thresholds: String::new(),
            synth: SynthConfig::default(),
            wavelet_center: WaveletBasis::default().center_param,
            scale_min: grid.scales()[0],
            scale_max: grid.scales()[grid.len() - 1],
            scale_count: grid.len(),
            image_size: arch.image_size,
            write_pgm: false,
            split: true,
            n_train_baseline: split.n_train_baseline,
            n_test_baseline: split.n_test_baseline,
            n_test_damage: split.n_test_damage,
            epochs: train.epochs,
            batch_size: train.batch_size,
            adam: train.adam,
            latent_dim: arch.latent_dim,
            filters: arch.filters,
            negative_slope: arch.negative_slope,
            output_bias_init: arch.output_bias_init,
            kl_weight: train.kl_weight,
            detect_thresholds: ThresholdKind::ALL.to_vec(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_kind(key: &str, value: &str) -> Result<ThresholdKind, ConfigError> {
    ThresholdKind::ALL
        .into_iter()
        .find(|k| k.as_str() == value)
        .ok_or_else(|| ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: "expected p99 or max".into(),
        })
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "out" => self.out = v.into(),
            "corpus" => self.corpus = v.into(),
            "manifest" => self.manifest = v.into(),
            "model" => self.model = v.into(),
            "thresholds" => self.thresholds = v.into(),
            "n_baseline" => s.n_baseline = parse(key, v)?,
            "n_damage" => s.n_damage = parse(key, v)?,
            "n_samples" => s.n_samples = parse(key, v)?,
            "sample_rate" => s.sample_rate = parse(key, v)?,
            "excitation_freqs" => s.excitation_freqs = parse_list(key, v)?,
            "cycles" => s.cycles = parse(key, v)?,
            "burst_onset" => s.burst_onset = parse(key, v)?,
            "boundary_echo_delay" => s.boundary_echo_delay = parse(key, v)?,
            "boundary_echo_amplitude" => s.boundary_echo_amplitude = parse(key, v)?,
            "noise_sigma" => s.noise_sigma = parse(key, v)?,
            "damage_echo_delay" => s.damage_echo_delay = parse(key, v)?,
            "damage_echo_amplitude" => s.damage_echo_amplitude = parse(key, v)?,
            "damage_attenuation" => s.damage_attenuation = parse(key, v)?,
            "wavelet_center" => self.wavelet_center = parse(key, v)?,
            "scale_min" => self.scale_min = parse(key, v)?,
            "scale_max" => self.scale_max = parse(key, v)?,
            "scale_count" => self.scale_count = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "write_pgm" => self.write_pgm = parse(key, v)?,
            "split" => self.split = parse(key, v)?,
            "n_train_baseline" => self.n_train_baseline = parse(key, v)?,
            "n_test_baseline" => self.n_test_baseline = parse(key, v)?,
            "n_test_damage" => self.n_test_damage = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.adam.lr = parse(key, v)?,
            "adam_beta1" => self.adam.beta1 = parse(key, v)?,
            "adam_beta2" => self.adam.beta2 = parse(key, v)?,
            "adam_epsilon" => self.adam.epsilon = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "filters" => self.filters = parse_list(key, v)?,
            "negative_slope" => self.negative_slope = parse(key, v)?,
            "output_bias_init" => self.output_bias_init = parse(key, v)?,
            "kl_weight" => self.kl_weight = parse(key, v)?,
            "detect_thresholds" => {
                self.detect_thresholds = v
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| parse_kind(key, t))
                    .collect::<Result<_, _>>()?
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// All keys with their current values, in echo order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        vec![
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("out", self.out.clone()),
            ("corpus", self.corpus.clone()),
            ("manifest", self.manifest.clone()),
            ("model", self.model.clone()),
            ("thresholds", self.thresholds.clone()),
            ("n_baseline", s.n_baseline.to_string()),
            ("n_damage", s.n_damage.to_string()),
            ("n_samples", s.n_samples.to_string()),
            ("sample_rate", s.sample_rate.to_string()),
            ("excitation_freqs", join(&s.excitation_freqs)),
            ("cycles", s.cycles.to_string()),
            ("burst_onset", s.burst_onset.to_string()),
            ("boundary_echo_delay", s.boundary_echo_delay.to_string()),
            (
                "boundary_echo_amplitude",
                s.boundary_echo_amplitude.to_string(),
            ),
            ("noise_sigma", s.noise_sigma.to_string()),
            ("damage_echo_delay", s.damage_echo_delay.to_string()),
            ("damage_echo_amplitude", s.damage_echo_amplitude.to_string()),
            ("damage_attenuation", s.damage_attenuation.to_string()),
            ("wavelet_center", self.wavelet_center.to_string()),
            ("scale_min", self.scale_min.to_string()),
            ("scale_max", self.scale_max.to_string()),
            ("scale_count", self.scale_count.to_string()),
            ("image_size", self.image_size.to_string()),
            ("write_pgm", self.write_pgm.to_string()),
            ("split", self.split.to_string()),
            ("n_train_baseline", self.n_train_baseline.to_string()),
            ("n_test_baseline", self.n_test_baseline.to_string()),
            ("n_test_damage", self.n_test_damage.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.adam.lr.to_string()),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_epsilon", self.adam.epsilon.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("filters", join(&self.filters)),
            ("negative_slope", self.negative_slope.to_string()),
            ("output_bias_init", self.output_bias_init.to_string()),
            ("kl_weight", self.kl_weight.to_string()),
            (
                "detect_thresholds",
                self.detect_thresholds
                    .iter()
                    .map(|k| k.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ]
    }

    /// Applies a config file body. Blank lines and `#` comments are skipped;
    /// each key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(head, _)| head).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey(key.into()));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// `--set key=value`.
    pub fn apply_assignment(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (key, value) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: pair.to_string(),
        })?;
        self.set(key.trim(), value)
    }

    /// The resolved configuration in the file syntax accepted by
    /// [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut text = String::from("# resolved gwvae configuration\n");
        for (k, v) in self.entries() {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text
    }

    pub fn basis(&self) -> Result<WaveletBasis, ConfigError> {
        WaveletBasis::morlet(self.wavelet_center).map_err(|e| self.bad("wavelet_center", e))
    }

    pub fn grid(&self) -> Result<ScaleGrid, ConfigError> {
        ScaleGrid::logspace(self.scale_min, self.scale_max, self.scale_count)
            .map_err(|e| self.bad("scale_min", e))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            n_train_baseline: self.n_train_baseline,
            n_test_baseline: self.n_test_baseline,
            n_test_damage: self.n_test_damage,
            seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn arch(&self) -> VaeArch {
        VaeArch {
            image_size: self.image_size,
            latent_dim: self.latent_dim,
            filters: self.filters.clone(),
            negative_slope: self.negative_slope,
            output_bias_init: self.output_bias_init,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.adam,
            kl_weight: self.kl_weight,
        }
    }

    /// A path key that has no default.
    pub fn required<'a>(
        &'a self,
        key: &'static str,
        value: &'a str,
    ) -> Result<&'a str, ConfigError> {
        if value.is_empty() {
            Err(ConfigError::Missing(key))
        } else {
            Ok(value)
        }
    }

    fn bad(&self, key: &str, e: impl Display) -> ConfigError {
        let value = self
            .entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .unwrap_or_default();
        ConfigError::BadValue {
            key: key.into(),
            value,
            reason: e.to_string(),
        }
    }
}
