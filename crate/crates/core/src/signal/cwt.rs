use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{
    normalize_minmax, resize_bilinear, ScaleGrid, Scalogram, Signal, SignalError, WaveletBasis,
};

/// Morlet mother wavelet `π^(-1/4) · e^(iω₀t) · e^(-t²/2)`.
pub fn morlet_eval(t: f64, center_param: f64) -> Complex64 {
    let envelope = PI.powf(-0.25) * (-0.5 * t * t).exp();
    Complex64::from_polar(envelope, center_param * t)
}

/// Precomputed kernel spectra for one (signal length, basis, scale grid).
///
/// Coefficient `(i, b)` is `Σ_t F(t) · conj(Φ((t - b)/aᵢ)) / √aᵢ` summed over
/// the signal support, i.e. zero padding outside it. The sum is evaluated as
/// a linear convolution through a zero-padded FFT, so it equals the direct
/// discrete sum up to rounding.
pub struct CwtPlan {
    n: usize,
    fft_len: usize,
    scales: Vec<f64>,
    kernel_spectra: Vec<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl CwtPlan {
    pub fn new(n: usize, basis: &WaveletBasis, grid: &ScaleGrid) -> Result<Self, SignalError> {
        if n == 0 {
            return Err(SignalError::EmptyMap);
        }
        if let Some(&bad) = grid.scales().iter().find(|&&a| a < 1.0) {
            return Err(SignalError::InvalidScale(bad));
        }
        // offsets t - b span [-(n-1), n-1]; 2n-1 slots avoid circular wrap
        let fft_len = (2 * n - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);

        let w0 = basis.center_param;
        let span = n as i64 - 1;
        let kernel_spectra = grid
            .scales()
            .iter()
            .map(|&a| {
                let norm = 1.0 / a.sqrt();
                let mut g = vec![Complex64::new(0.0, 0.0); fft_len];
                // correlation with conj(Φ((t-b)/a)) is convolution with g[m] = conj(Φ(-m/a))
                for m in -span..=span {
                    let slot = m.rem_euclid(fft_len as i64) as usize;
                    g[slot] = morlet_eval(-(m as f64) / a, w0).conj() * norm;
                }
                forward.process(&mut g);
                g
            })
            .collect();

        Ok(CwtPlan {
            n,
            fft_len,
            scales: grid.scales().to_vec(),
            kernel_spectra,
            forward,
            inverse,
        })
    }

    pub fn signal_len(&self) -> usize {
        self.n
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Complex coefficients, row-major `[n_scales × n]`.
    pub fn transform(&self, samples: &[f32]) -> Result<Vec<Complex64>, SignalError> {
        let input: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
        self.transform_f64(&input)
    }

    pub fn transform_f64(&self, samples: &[f64]) -> Result<Vec<Complex64>, SignalError> {
        if samples.len() != self.n {
            return Err(SignalError::ShapeMismatch {
                rows: self.scales.len(),
                cols: self.n,
            });
        }
        let mut spectrum = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (slot, &v) in spectrum.iter_mut().zip(samples) {
            slot.re = v;
        }
        self.forward.process(&mut spectrum);

        let scale = 1.0 / self.fft_len as f64;
        let mut out = Vec::with_capacity(self.scales.len() * self.n);
        let mut work = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for kernel in &self.kernel_spectra {
            for ((w, s), k) in work.iter_mut().zip(&spectrum).zip(kernel) {
                *w = s * k;
            }
            self.inverse.process(&mut work);
            out.extend(work[..self.n].iter().map(|c| c * scale));
        }
        Ok(out)
    }

    /// Magnitude scalogram of `signal`.
    pub fn scalogram(&self, signal: &Signal) -> Result<Scalogram, SignalError> {
        signal.validate()?;
        let coeffs = self.transform(&signal.samples)?;
        let values = coeffs.iter().map(|c| c.norm()).collect();
        Scalogram::new(
            values,
            self.scales.clone(),
            (0..self.n).map(|t| t as f64).collect(),
        )
    }

    /// Scalogram resized to `size × size` and min-max normalized: the
    /// network input representation.
    pub fn image(&self, signal: &Signal, size: usize) -> Result<Scalogram, SignalError> {
        let map = resize_bilinear(&self.scalogram(signal)?, size, size)?;
        Ok(normalize_minmax(&map))
    }
}

/// Complex CWT coefficients of `signal`, row-major `[n_scales × n_samples]`.
pub fn cwt_complex(
    signal: &Signal,
    basis: &WaveletBasis,
    grid: &ScaleGrid,
) -> Result<Vec<Complex64>, SignalError> {
    signal.validate()?;
    CwtPlan::new(signal.len(), basis, grid)?.transform(&signal.samples)
}

/// Magnitude scalogram of `signal`. Build a [`CwtPlan`] directly when
/// transforming many signals of the same length.
pub fn cwt(
    signal: &Signal,
    basis: &WaveletBasis,
    grid: &ScaleGrid,
) -> Result<Scalogram, SignalError> {
    signal.validate()?;
    CwtPlan::new(signal.len(), basis, grid)?.scalogram(signal)
}
