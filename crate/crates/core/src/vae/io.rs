use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{VaeArch, VaeError, VaeModel};
use crate::nn::checkpoint::{
    read_record, write_record, CheckpointError, NamedTensor, TensorRecord, OPT1_MAGIC,
    RECORD_VERSION, VAE1_MAGIC,
};
use crate::nn::{AdamConfig, AdamState};

fn arch_err(msg: impl Into<String>) -> VaeError {
    VaeError::Checkpoint(CheckpointError::Architecture(msg.into()))
}

pub fn model_to_record(model: &VaeModel<f32>) -> TensorRecord {
    TensorRecord {
        magic: *VAE1_MAGIC,
        version: RECORD_VERSION,
        step_count: None,
        tensors: model
            .named_params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect(),
    }
}

/// Recovers the architecture from tensor shapes: encoder filter counts,
/// latent width from the mean head, image side from the bottleneck size.
fn infer_arch(record: &TensorRecord) -> Result<VaeArch, VaeError> {
    let mut filters = Vec::new();
    for t in &record.tensors {
        if t.name.starts_with("encoder.") && t.name.ends_with(".weight") {
            if t.shape.len() != 4 {
                return Err(arch_err(format!("{} is not a convolution kernel", t.name)));
            }
            filters.push(t.shape[0]);
        }
    }
    let head = record
        .tensors
        .iter()
        .find(|t| t.name == "mu_head.weight")
        .ok_or_else(|| arch_err("mu_head.weight missing"))?;
    if head.shape.len() != 2 {
        return Err(arch_err("mu_head.weight must be a matrix"));
    }
    let (features, latent_dim) = (head.shape[0], head.shape[1]);
    let last = *filters
        .last()
        .ok_or_else(|| arch_err("no encoder layers"))?;
    let cells = features / last.max(1);
    let side = (cells as f64).sqrt().round() as usize;
    if side == 0 || side * side * last != features {
        return Err(arch_err(format!(
            "{features} head features do not form a square map of {last} channels"
        )));
    }
    Ok(VaeArch {
        image_size: side << filters.len(),
        latent_dim,
        filters,
        ..VaeArch::default()
    })
}

pub fn model_from_record(record: &TensorRecord) -> Result<VaeModel<f32>, VaeError> {
    if &record.magic != VAE1_MAGIC {
        return Err(arch_err("not a VAE1 record"));
    }
    let arch = infer_arch(record)?;
    let mut model = VaeModel::<f32>::zeros(arch.clone()).map_err(|e| arch_err(e.to_string()))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != record.tensors.len() {
        return Err(arch_err(format!(
            "expected {} tensors for {:?}, found {}",
            names.len(),
            arch,
            record.tensors.len()
        )));
    }
    for (slot, (name, stored)) in model
        .params_mut()
        .into_iter()
        .zip(names.iter().zip(&record.tensors))
    {
        if &stored.name != name || stored.shape != slot.shape() {
            return Err(arch_err(format!(
                "tensor `{}` {:?} does not match expected `{name}` {:?}",
                stored.name,
                stored.shape,
                slot.shape()
            )));
        }
        slot.data_mut().copy_from_slice(&stored.values);
    }
    if !model.params_finite() {
        return Err(arch_err("checkpoint holds non-finite parameters"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &VaeModel<f32>, path: &Path) -> Result<(), VaeError> {
    let mut out = BufWriter::new(File::create(path).map_err(CheckpointError::from)?);
    write_record(&model_to_record(model), &mut out)?;
    out.flush().map_err(CheckpointError::from)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<VaeModel<f32>, VaeError> {
    let input = BufReader::new(File::open(path).map_err(CheckpointError::from)?);
    model_from_record(&read_record(input, VAE1_MAGIC, false)?)
}

/// Adam moments as `m.<param>` / `v.<param>` tensors plus the step count.
pub fn optimizer_to_record(state: &AdamState<f32>, model: &VaeModel<f32>) -> TensorRecord {
    let params = model.named_params();
    let mut tensors = Vec::with_capacity(2 * params.len());
    for (prefix, moments) in [("m", state.first_moments()), ("v", state.second_moments())] {
        for ((name, t), values) in params.iter().zip(moments) {
            tensors.push(NamedTensor {
                name: format!("{prefix}.{name}"),
                shape: t.shape().to_vec(),
                values: values.clone(),
            });
        }
    }
    TensorRecord {
        magic: *OPT1_MAGIC,
        version: RECORD_VERSION,
        step_count: Some(state.step_count),
        tensors,
    }
}

pub fn optimizer_from_record(
    record: &TensorRecord,
    model: &VaeModel<f32>,
    config: AdamConfig,
) -> Result<AdamState<f32>, VaeError> {
    let params = model.named_params();
    if record.tensors.len() != 2 * params.len() {
        return Err(arch_err(format!(
            "optimizer state holds {} tensors, model needs {}",
            record.tensors.len(),
            2 * params.len()
        )));
    }
    let (m_part, v_part) = record.tensors.split_at(params.len());
    let mut moments = [Vec::new(), Vec::new()];
    for (slot, (prefix, part)) in moments.iter_mut().zip([("m", m_part), ("v", v_part)]) {
        for ((name, t), stored) in params.iter().zip(part) {
            if stored.name != format!("{prefix}.{name}") || stored.shape != t.shape() {
                return Err(arch_err(format!(
                    "optimizer tensor `{}` does not match",
                    stored.name
                )));
            }
            slot.push(stored.values.clone());
        }
    }
    let [m, v] = moments;
    Ok(AdamState::from_parts(
        config,
        record.step_count.unwrap_or(0),
        m,
        v,
    )?)
}

pub fn save_optimizer(
    state: &AdamState<f32>,
    model: &VaeModel<f32>,
    path: &Path,
) -> Result<(), VaeError> {
    let mut out = BufWriter::new(File::create(path).map_err(CheckpointError::from)?);
    write_record(&optimizer_to_record(state, model), &mut out)?;
    out.flush().map_err(CheckpointError::from)?;
    Ok(())
}

pub fn load_optimizer(
    path: &Path,
    model: &VaeModel<f32>,
    config: AdamConfig,
) -> Result<AdamState<f32>, VaeError> {
    let input = BufReader::new(File::open(path).map_err(CheckpointError::from)?);
    optimizer_from_record(&read_record(input, OPT1_MAGIC, true)?, model, config)
}
