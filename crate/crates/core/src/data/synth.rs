use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset};
use crate::signal::{Label, Signal};

/// Tone-burst corpus generator settings. Times are in seconds, amplitudes
/// relative to the direct burst.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_baseline: usize,
    pub n_damage: usize,
    pub n_samples: usize,
    pub sample_rate: f64,
    pub excitation_freqs: Vec<f64>,
    pub cycles: f64,
    pub burst_onset: f64,
    pub boundary_echo_delay: f64,
    pub boundary_echo_amplitude: f64,
    pub noise_sigma: f64,
    pub damage_echo_delay: f64,
    pub damage_echo_amplitude: f64,
    /// Fractional loss of direct-burst amplitude in damage signals.
    pub damage_attenuation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_baseline: 640,
            n_damage: 128,
            n_samples: 2048,
            sample_rate: 1e6,
            excitation_freqs: (0..12).map(|i| 40e3 + 20e3 * i as f64).collect(),
            cycles: 5.0,
            burst_onset: 100e-6,
            boundary_echo_delay: 1000e-6,
            boundary_echo_amplitude: 0.4,
            noise_sigma: 0.02,
            damage_echo_delay: 400e-6,
            damage_echo_amplitude: 1.0,
            damage_attenuation: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.n_baseline + self.n_damage == 0 {
            return bad("at least one signal must be requested");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad("sample_rate must be positive");
        }
        if self.excitation_freqs.is_empty() {
            return bad("excitation_freqs is empty");
        }
        let nyquist = self.sample_rate / 2.0;
        if let Some(f) = self
            .excitation_freqs
            .iter()
            .find(|f| !(f.is_finite() && **f > 0.0 && **f < nyquist))
        {
            return Err(DataError::InvalidConfig(format!(
                "excitation frequency {f} Hz outside (0, {nyquist})"
            )));
        }
        if !(self.cycles.is_finite() && self.cycles > 0.0) {
            return bad("cycles must be positive");
        }
        let nonneg = [
            ("burst_onset", self.burst_onset),
            ("boundary_echo_delay", self.boundary_echo_delay),
            ("boundary_echo_amplitude", self.boundary_echo_amplitude),
            ("noise_sigma", self.noise_sigma),
            ("damage_echo_delay", self.damage_echo_delay),
            ("damage_echo_amplitude", self.damage_echo_amplitude),
        ];
        if let Some((name, _)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(DataError::InvalidConfig(format!(
                "{name} must be finite and >= 0"
            )));
        }
        if !(0.0..=1.0).contains(&self.damage_attenuation) {
            return bad("damage_attenuation must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Hann-windowed sine of `cycles` periods at `freq`, starting at `onset`.
pub fn hann_burst(t: f64, onset: f64, freq: f64, cycles: f64) -> f64 {
    let tau = t - onset;
    let width = cycles / freq;
    if !(0.0..=width).contains(&tau) {
        return 0.0;
    }
    let phase = std::f64::consts::TAU * tau;
    0.5 * (1.0 - (phase / width).cos()) * (phase * freq).sin()
}

/// Baseline signals first (`b00000`, ...), then damage (`d00000`, ...). Each
/// signal draws its frequency and then its noise from one seeded stream, in
/// the same order for both classes.
pub fn synthesize(config: &SynthConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    let dt = 1.0 / config.sample_rate;
    let echo_onset = config.burst_onset + config.boundary_echo_delay;
    let damage_onset = config.burst_onset + config.damage_echo_delay;

    let mut signals = Vec::with_capacity(config.n_baseline + config.n_damage);
    let jobs = std::iter::repeat_n(Label::Baseline, config.n_baseline)
        .chain(std::iter::repeat_n(Label::Damage, config.n_damage));
    let (mut nb, mut nd) = (0, 0);
    for label in jobs {
        let f = config.excitation_freqs[rng.random_range(0..config.excitation_freqs.len())];
        let damaged = label == Label::Damage;
        let direct = if damaged {
            1.0 - config.damage_attenuation
        } else {
            1.0
        };
        let samples = (0..config.n_samples)
            .map(|k| {
                let t = k as f64 * dt;
                let mut v = direct * hann_burst(t, config.burst_onset, f, config.cycles)
                    + config.boundary_echo_amplitude * hann_burst(t, echo_onset, f, config.cycles);
                if damaged {
                    v += config.damage_echo_amplitude
                        * hann_burst(t, damage_onset, f, config.cycles);
                }
                (v + noise.sample(&mut rng)) as f32
            })
            .collect();
        let id = if damaged {
            nd += 1;
            format!("d{:05}", nd - 1)
        } else {
            nb += 1;
            format!("b{:05}", nb - 1)
        };
        signals.push(Signal::new(id, label, config.sample_rate, samples)?);
    }
    let mut ds = Dataset::new(signals, config.sample_rate)?;
    ds.metadata.insert("generator".into(), "tone-burst".into());
    ds.metadata.insert("seed".into(), config.seed.to_string());
    Ok(ds)
}
