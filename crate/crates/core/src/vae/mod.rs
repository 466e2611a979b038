//! Convolutional variational autoencoder with a Gaussian latent space.
//!
//! The encoder is a stack of 3×3 stride-2 convolutions (16, 32, 64, 128, 256
//! filters, Leaky ReLU) followed by two dense heads producing the posterior
//! mean and log-variance. The decoder mirrors it with transposed
//! convolutions and ends in a sigmoid so reconstructions live in (0, 1).
//!
//! Per sample, the objective is the pixel-mean squared error plus the KL
//! divergence of `N(mu, exp(logvar))` from `N(0, I)` summed over latent
//! dimensions; a batch loss is the batch mean of that sum.

mod io;
mod train;

pub use io::{
    load_checkpoint, load_optimizer, model_from_record, model_to_record, optimizer_from_record,
    optimizer_to_record, save_checkpoint, save_optimizer,
};
pub use train::{
    score_errors, train, train_with_optimizer, write_history_csv, EpochLoss, TrainConfig,
    TrainOutcome,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::checkpoint::CheckpointError;
use crate::nn::{init_he_uniform, Layer, LayerSpec, NnError, Scalar, Sequential, Tensor};
use crate::signal::Scalogram;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set contains a non-baseline sample at index {0}")]
    NonBaseline(usize),
    #[error("input image {index} is {rows}x{cols}, model expects {expected}x{expected}")]
    InputShape {
        index: usize,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("non-finite loss at epoch {epoch}{}", batch.map(|b| format!(", batch {b}")).unwrap_or_default())]
    NonFiniteLoss { epoch: usize, batch: Option<usize> },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Architecture hyperparameters. The default is the 64×64, 2-D latent
/// network used throughout the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeArch {
    pub image_size: usize,
    pub latent_dim: usize,
    pub filters: Vec<usize>,
    pub negative_slope: f64,
    /// Starting value of the output layer's bias, a logit. Scalograms are
    /// mostly dark, and a zero start lets the sigmoid saturate on the way
    /// down before any structure is learned.
    pub output_bias_init: f64,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch {
            image_size: 64,
            latent_dim: 2,
            filters: vec![16, 32, 64, 128, 256],
            negative_slope: 0.2,
            output_bias_init: -3.5,
        }
    }
}

impl VaeArch {
    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: String| Err(VaeError::InvalidArch(m));
        if self.filters.is_empty() || self.filters.contains(&0) {
            return bad("filter counts must be positive".into());
        }
        let factor = 1usize << self.filters.len();
        if self.image_size == 0 || !self.image_size.is_multiple_of(factor) {
            return bad(format!(
                "image size {} is not divisible by 2^{}",
                self.image_size,
                self.filters.len()
            ));
        }
        if self.latent_dim == 0 {
            return bad("latent dimension must be positive".into());
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return bad("negative slope must lie in (0, 1)".into());
        }
        if !self.output_bias_init.is_finite() {
            return bad("output bias must be finite".into());
        }
        Ok(())
    }

    /// Spatial side of the innermost feature map.
    pub fn bottleneck_side(&self) -> usize {
        self.image_size >> self.filters.len()
    }

    /// Length of the flattened encoder output.
    pub fn features(&self) -> usize {
        let side = self.bottleneck_side();
        self.filters.last().copied().unwrap_or(0) * side * side
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut channels = 1;
        for &f in &self.filters {
            specs.push(LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: f,
                stride: 2,
                padding: 1,
            });
            specs.push(LayerSpec::LeakyRelu {
                negative_slope: self.negative_slope,
            });
            channels = f;
        }
        specs.push(LayerSpec::Flatten);
        specs
    }

    pub fn head_spec(&self) -> LayerSpec {
        LayerSpec::Dense {
            in_features: self.features(),
            out_features: self.latent_dim,
        }
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let side = self.bottleneck_side();
        let last = *self.filters.last().expect("validated");
        let mut specs = vec![
            LayerSpec::Dense {
                in_features: self.latent_dim,
                out_features: self.features(),
            },
            LayerSpec::LeakyRelu {
                negative_slope: self.negative_slope,
            },
            LayerSpec::Reshape {
                shape: vec![last, side, side],
            },
        ];
        let mut channels: Vec<usize> = self.filters.iter().rev().copied().collect();
        channels.push(1);
        for (i, pair) in channels.windows(2).enumerate() {
            specs.push(LayerSpec::ConvTranspose2d {
                in_channels: pair[0],
                out_channels: pair[1],
                stride: 2,
                padding: 1,
                output_padding: 1,
            });
            specs.push(if i + 2 == channels.len() {
                LayerSpec::Sigmoid
            } else {
                LayerSpec::LeakyRelu {
                    negative_slope: self.negative_slope,
                }
            });
        }
        specs
    }
}

/// KL weight used unless configured otherwise: `2^-14`, i.e. a pixel-sum
/// squared error on 64×64 images with the KL term weighted by 1/4.
pub const DEFAULT_KL_WEIGHT: f64 = 1.0 / 16384.0;

/// Per-batch objective, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    /// `reconstruction + kl_weight · kl`.
    pub total: f64,
}

impl LossBreakdown {
    /// Unweighted sum of the two terms.
    pub fn new(reconstruction: f64, kl: f64) -> Self {
        Self::weighted(reconstruction, kl, 1.0)
    }

    pub fn weighted(reconstruction: f64, kl: f64, kl_weight: f64) -> Self {
        LossBreakdown {
            reconstruction,
            kl,
            total: reconstruction + kl_weight * kl,
        }
    }
}

/// Posterior statistics and the sampled code for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
    pub z: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct VaeModel<T> {
    arch: VaeArch,
    encoder: Sequential<T>,
    mu_head: Layer<T>,
    logvar_head: Layer<T>,
    decoder: Sequential<T>,
}

fn clamp_logvar<T: Scalar>(raw: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (T::from_f64_lossy(LOGVAR_MIN), T::from_f64_lossy(LOGVAR_MAX));
    let mut out = raw.clone();
    out.clear_grad();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.max(lo).min(hi));
    out
}

/// `z = mu + exp(0.5 · logvar) ⊙ noise`.
pub fn reparameterize<T: Scalar>(
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    noise: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if mu.shape() != logvar.shape() || mu.shape() != noise.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "mu {:?}, logvar {:?} and noise {:?} must agree",
            mu.shape(),
            logvar.shape(),
            noise.shape()
        )));
    }
    let half = T::from_f64_lossy(0.5);
    let mut z = mu.clone();
    z.clear_grad();
    for ((zv, &lv), &e) in z.data_mut().iter_mut().zip(logvar.data()).zip(noise.data()) {
        *zv = *zv + (half * lv).exp() * e;
    }
    Ok(z)
}

/// `0.5 · Σ_d (exp(logvar) + mu² - 1 - logvar)` per sample.
pub fn kl_divergence<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<Vec<T>, NnError> {
    if mu.shape() != logvar.shape() || mu.rank() != 2 {
        return Err(NnError::ShapeMismatch(format!(
            "mu {:?} and logvar {:?} must be matching [N, D]",
            mu.shape(),
            logvar.shape()
        )));
    }
    let d = mu.shape()[1];
    let half = T::from_f64_lossy(0.5);
    Ok(mu
        .data()
        .chunks_exact(d)
        .zip(logvar.data().chunks_exact(d))
        .map(|(m, lv)| {
            let s = m
                .iter()
                .zip(lv)
                .map(|(&m, &l)| l.exp() + m * m - T::one() - l)
                .sum::<T>();
            // exp(l) >= 1 + l holds exactly; clip rounding below zero
            (half * s).max(T::zero())
        })
        .collect())
}

/// Pixel-mean squared error per sample.
pub fn reconstruction_error<T: Scalar>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
) -> Result<Vec<T>, NnError> {
    if x.shape() != x_hat.shape() || x.rank() == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "input {:?} and reconstruction {:?} differ",
            x.shape(),
            x_hat.shape()
        )));
    }
    let p = x.row_len();
    let inv = T::one() / T::from_usize(p).unwrap();
    Ok(x.data()
        .chunks_exact(p)
        .zip(x_hat.data().chunks_exact(p))
        .map(|(a, b)| a.iter().zip(b).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() * inv)
        .collect())
}

/// Stacks normalized scalograms into a `[N, 1, side, side]` batch.
pub fn images_to_tensor<T: Scalar>(
    images: &[&Scalogram],
    side: usize,
) -> Result<Tensor<T>, VaeError> {
    if images.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    let mut data = Vec::with_capacity(images.len() * side * side);
    for (index, img) in images.iter().enumerate() {
        if img.rows() != side || img.cols() != side {
            return Err(VaeError::InputShape {
                index,
                rows: img.rows(),
                cols: img.cols(),
                expected: side,
            });
        }
        data.extend(img.values().iter().map(|&v| T::from_f64_lossy(v)));
    }
    Ok(Tensor::from_vec(&[images.len(), 1, side, side], data)?)
}

impl<T: Scalar> VaeModel<T> {
    /// Model with all parameters zero.
    pub fn zeros(arch: VaeArch) -> Result<Self, VaeError> {
        arch.validate()?;
        Ok(VaeModel {
            encoder: Sequential::new(&arch.encoder_specs())?,
            mu_head: Layer::new(arch.head_spec())?,
            logvar_head: Layer::new(arch.head_spec())?,
            decoder: Sequential::new(&arch.decoder_specs())?,
            arch,
        })
    }

    /// He-uniform weights and zero biases from one seeded stream, consumed
    /// encoder first, then the mean head, the log-variance head and the
    /// decoder. The output bias then takes `arch.output_bias_init`.
    pub fn new(arch: VaeArch, seed: u64) -> Result<Self, VaeError> {
        let mut model = VaeModel::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.encoder.layers_mut() {
            init_he_uniform(layer, &mut rng);
        }
        init_he_uniform(&mut model.mu_head, &mut rng);
        init_he_uniform(&mut model.logvar_head, &mut rng);
        for layer in model.decoder.layers_mut() {
            init_he_uniform(layer, &mut rng);
        }
        let bias = T::from_f64_lossy(model.arch.output_bias_init);
        if let Some(last) = model
            .decoder
            .layers_mut()
            .iter_mut()
            .rev()
            .find_map(|l| l.bias_mut())
        {
            last.data_mut().fill(bias);
        }
        Ok(model)
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn encoder(&self) -> &Sequential<T> {
        &self.encoder
    }

    pub fn mu_head(&self) -> &Layer<T> {
        &self.mu_head
    }

    pub fn logvar_head(&self) -> &Layer<T> {
        &self.logvar_head
    }

    pub fn decoder(&self) -> &Sequential<T> {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        let s = self.arch.image_size;
        if x.rank() != 4 || x.shape()[1..] != [1, s, s] {
            return Err(NnError::ShapeMismatch(format!(
                "expected [N, 1, {s}, {s}] input, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Tensor<T>) -> Result<(), NnError> {
        if z.rank() != 2 || z.shape()[1] != self.arch.latent_dim {
            return Err(NnError::ShapeMismatch(format!(
                "expected [N, {}] latent, got {:?}",
                self.arch.latent_dim,
                z.shape()
            )));
        }
        Ok(())
    }

    /// Posterior mean and clamped log-variance.
    pub fn encode(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), NnError> {
        self.check_input(x)?;
        let h = self.encoder.forward(x)?;
        let mu = self.mu_head.forward(&h)?;
        let logvar = clamp_logvar(&self.logvar_head.forward(&h)?);
        Ok((mu, logvar))
    }

    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_latent(z)?;
        self.decoder.forward(z)
    }

    /// Encode, sample with the injected noise, decode.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        noise: &Tensor<T>,
    ) -> Result<(LatentCode<T>, Tensor<T>), NnError> {
        let (mu, logvar) = self.encode(x)?;
        let z = reparameterize(&mu, &logvar, noise)?;
        let x_hat = self.decode(&z)?;
        Ok((LatentCode { mu, logvar, z }, x_hat))
    }

    /// Per-sample `(reconstruction, kl)` for one stochastic pass.
    pub fn sample_losses(&self, x: &Tensor<T>, noise: &Tensor<T>) -> Result<Vec<(T, T)>, NnError> {
        let (code, x_hat) = self.forward(x, noise)?;
        let rec = reconstruction_error(x, &x_hat)?;
        let kl = kl_divergence(&code.mu, &code.logvar)?;
        Ok(rec.into_iter().zip(kl).collect())
    }

    /// Batch objective without gradients.
    pub fn loss(
        &self,
        x: &Tensor<T>,
        noise: &Tensor<T>,
        kl_weight: f64,
    ) -> Result<LossBreakdown, NnError> {
        Ok(batch_mean(&self.sample_losses(x, noise)?, kl_weight))
    }

    /// Batch objective; accumulates gradients of the total into every
    /// parameter's gradient slot.
    pub fn loss_backward(
        &mut self,
        x: &Tensor<T>,
        noise: &Tensor<T>,
        kl_weight: f64,
    ) -> Result<LossBreakdown, NnError> {
        self.check_input(x)?;
        let h = self.encoder.forward_train(x)?;
        let mu = self.mu_head.forward_train(&h)?;
        let raw_logvar = self.logvar_head.forward_train(&h)?;
        let logvar = clamp_logvar(&raw_logvar);
        let z = reparameterize(&mu, &logvar, noise)?;
        let x_hat = self.decoder.forward_train(&z)?;

        let rec = reconstruction_error(x, &x_hat)?;
        let kl = kl_divergence(&mu, &logvar)?;
        let breakdown = batch_mean(&rec.into_iter().zip(kl).collect::<Vec<_>>(), kl_weight);

        let n = T::from_usize(x.batch()).unwrap();
        let pixels = T::from_usize(x.row_len()).unwrap();
        let two = T::from_f64_lossy(2.0);
        let half = T::from_f64_lossy(0.5);
        let beta = T::from_f64_lossy(kl_weight);

        let mut g_xhat = Tensor::zeros(x_hat.shape());
        for ((g, &xh), &xv) in g_xhat.data_mut().iter_mut().zip(x_hat.data()).zip(x.data()) {
            *g = two * (xh - xv) / (pixels * n);
        }
        let g_z = self.decoder.backward(&g_xhat)?;

        let (lo, hi) = (T::from_f64_lossy(LOGVAR_MIN), T::from_f64_lossy(LOGVAR_MAX));
        let mut g_mu = Tensor::zeros(mu.shape());
        let mut g_logvar = Tensor::zeros(mu.shape());
        for i in 0..mu.len() {
            let (m, lv, raw, e, gz) = (
                mu.data()[i],
                logvar.data()[i],
                raw_logvar.data()[i],
                noise.data()[i],
                g_z.data()[i],
            );
            g_mu.data_mut()[i] = gz + beta * m / n;
            let g = gz * half * (half * lv).exp() * e + beta * half * (lv.exp() - T::one()) / n;
            // the clamp passes gradient only inside its range
            g_logvar.data_mut()[i] = if raw >= lo && raw <= hi { g } else { T::zero() };
        }
        let mut g_h = self.mu_head.backward(&g_mu)?;
        let g_h_logvar = self.logvar_head.backward(&g_logvar)?;
        for (a, &b) in g_h.data_mut().iter_mut().zip(g_h_logvar.data()) {
            *a = *a + b;
        }
        self.encoder.backward(&g_h)?;
        Ok(breakdown)
    }

    /// Parameter tensors in canonical order, paired with checkpoint names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let encoder = self
            .encoder
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("encoder.{i}"), l));
        let heads = [
            ("mu_head".to_string(), &self.mu_head),
            ("logvar_head".to_string(), &self.logvar_head),
        ];
        let decoder = self
            .decoder
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("decoder.{i}"), l));
        let mut out = Vec::new();
        for (prefix, layer) in encoder.chain(heads).chain(decoder) {
            if let Some((w, b)) = layer.params() {
                out.push((format!("{prefix}.weight"), w));
                out.push((format!("{prefix}.bias"), b));
            }
        }
        out
    }

    /// Mutable parameter tensors in the same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        let layers = self
            .encoder
            .layers_mut()
            .iter_mut()
            .chain(std::iter::once(&mut self.mu_head))
            .chain(std::iter::once(&mut self.logvar_head))
            .chain(self.decoder.layers_mut().iter_mut());
        for layer in layers {
            if let Some((w, b)) = layer.params_mut() {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.named_params().iter().map(|(_, t)| t.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn params_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> VaeModel<U> {
        VaeModel {
            arch: self.arch.clone(),
            encoder: self.encoder.cast(),
            mu_head: self.mu_head.cast(),
            logvar_head: self.logvar_head.cast(),
            decoder: self.decoder.cast(),
        }
    }
}

fn batch_mean<T: Scalar>(per_sample: &[(T, T)], kl_weight: f64) -> LossBreakdown {
    let n = per_sample.len().max(1) as f64;
    let (r, k) = per_sample.iter().fold((0.0, 0.0), |(r, k), (a, b)| {
        (r + a.to_f64().unwrap(), k + b.to_f64().unwrap())
    });
    LossBreakdown::weighted(r / n, k / n, kl_weight)
}
