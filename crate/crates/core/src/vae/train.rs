use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{images_to_tensor, LossBreakdown, VaeError, VaeModel, DEFAULT_KL_WEIGHT};
use crate::nn::{AdamConfig, AdamState, Tensor};
use crate::signal::Scalogram;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the KL term in the objective.
    pub kl_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            kl_weight: DEFAULT_KL_WEIGHT,
        }
    }
}

/// Sample-weighted epoch means of the batch objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochLoss>,
    pub optimizer: AdamState<f32>,
}

fn draw_noise(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tensor<f32> {
    let data = (0..rows * dim)
        .map(|_| StandardNormal.sample(rng))
        .collect::<Vec<f32>>();
    Tensor::from_vec(&[rows, dim], data).expect("noise shape")
}

/// Minibatch Adam training on baseline images.
///
/// A single `ChaCha8` stream seeded with `seed` drives the per-epoch shuffle
/// and every reparameterization draw, so equal seeds reproduce the loss
/// history bit for bit.
pub fn train(
    model: &mut VaeModel<f32>,
    dataset: &[Scalogram],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, VaeError> {
    let optimizer = AdamState::new(config.adam, &model.param_sizes())?;
    train_with_optimizer(model, dataset, config, seed, optimizer)
}

/// As [`train`], continuing from existing optimizer state.
pub fn train_with_optimizer(
    model: &mut VaeModel<f32>,
    dataset: &[Scalogram],
    config: &TrainConfig,
    seed: u64,
    mut optimizer: AdamState<f32>,
) -> Result<TrainOutcome, VaeError> {
    if dataset.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(VaeError::InvalidArch("batch size must be positive".into()));
    }
    if !(config.kl_weight.is_finite() && config.kl_weight >= 0.0) {
        return Err(VaeError::InvalidArch(
            "kl weight must be finite and >= 0".into(),
        ));
    }
    let side = model.arch().image_size;
    // validate every image up front
    images_to_tensor::<f32>(&dataset.iter().collect::<Vec<_>>(), side)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let latent = model.latent_dim();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut rec_sum, mut kl_sum) = (0.0, 0.0);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let images: Vec<&Scalogram> = chunk.iter().map(|&i| &dataset[i]).collect();
            let x = images_to_tensor::<f32>(&images, side)?;
            let noise = draw_noise(&mut rng, chunk.len(), latent);
            model.zero_grad();
            let loss = model.loss_backward(&x, &noise, config.kl_weight)?;
            if !loss.total.is_finite() {
                return Err(VaeError::NonFiniteLoss {
                    epoch,
                    batch: Some(batch_idx),
                });
            }
            optimizer.step(&mut model.params_mut())?;
            rec_sum += loss.reconstruction * chunk.len() as f64;
            kl_sum += loss.kl * chunk.len() as f64;
        }
        if !model.params_finite() {
            return Err(VaeError::NonFiniteLoss { epoch, batch: None });
        }
        let n = dataset.len() as f64;
        history.push(EpochLoss {
            epoch,
            loss: LossBreakdown::weighted(rec_sum / n, kl_sum / n, config.kl_weight),
        });
    }
    Ok(TrainOutcome { history, optimizer })
}

/// Chunk size for inference batches; fixed so results do not depend on the
/// thread count.
const SCORE_CHUNK: usize = 32;

/// Per-sample `(reconstruction, kl)` from one stochastic pass each.
///
/// Noise for sample `i` is the `i`-th draw block of a `ChaCha8` stream
/// seeded with `seed`, so scores depend only on the seed and sample order.
pub fn score_errors(
    model: &VaeModel<f32>,
    images: &[Scalogram],
    seed: u64,
    threads: usize,
) -> Result<Vec<(f64, f64)>, VaeError> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let side = model.arch().image_size;
    let latent = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = draw_noise(&mut rng, images.len(), latent);

    let run_chunk = |(ci, chunk): (usize, &[Scalogram])| -> Result<Vec<(f64, f64)>, VaeError> {
        let x = images_to_tensor::<f32>(&chunk.iter().collect::<Vec<_>>(), side)?;
        let start = ci * SCORE_CHUNK * latent;
        let eps = Tensor::from_vec(
            &[chunk.len(), latent],
            noise.data()[start..start + chunk.len() * latent].to_vec(),
        )?;
        Ok(model
            .sample_losses(&x, &eps)?
            .into_iter()
            .map(|(r, k)| (r as f64, k as f64))
            .collect())
    };

    let chunks: Vec<Result<Vec<(f64, f64)>, VaeError>> = if threads <= 1 {
        images
            .chunks(SCORE_CHUNK)
            .enumerate()
            .map(run_chunk)
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| VaeError::ThreadPool(e.to_string()))?;
        pool.install(|| {
            images
                .par_chunks(SCORE_CHUNK)
                .enumerate()
                .map(run_chunk)
                .collect()
        })
    };
    let mut out = Vec::with_capacity(images.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// `epoch,reconstruction,kl,total` rows.
pub fn write_history_csv<W: Write>(history: &[EpochLoss], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,reconstruction,kl,total")?;
    for h in history {
        writeln!(
            out,
            "{},{},{},{}",
            h.epoch, h.loss.reconstruction, h.loss.kl, h.loss.total
        )?;
    }
    Ok(())
}
