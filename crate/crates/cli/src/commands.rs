use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use gwvae::anomaly::{
    centroid_separation, compute_thresholds, evaluate, export_latent, read_thresholds_csv,
    score_samples, write_errors_csv, write_latent_csv, write_metrics_csv, write_thresholds_csv,
    write_verdicts_csv, DetectionReport, LatentRow, Separation, ThresholdSet,
};
use gwvae::data::{load_dataset, save_dataset, split, synthesize, LabeledImage};
use gwvae::signal::{write_pgm, write_scg1, CwtPlan, Label, Scalogram};
use gwvae::vae::{
    load_checkpoint, save_checkpoint, save_optimizer, train, write_history_csv, EpochLoss,
    VaeError, VaeModel,
};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{file_stem, load_images, write_manifest, write_text, ManifestEntry};

pub const MODEL_FILE: &str = "model.vae";
pub const OPTIMIZER_FILE: &str = "model.opt";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const TRAINING_ERRORS_FILE: &str = "training_errors.csv";
pub const THRESHOLDS_FILE: &str = "thresholds.csv";
pub const VERDICTS_FILE: &str = "verdicts.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LATENT_FILE: &str = "latent.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRAIN_MANIFEST_FILE: &str = "train_manifest.csv";
pub const TEST_MANIFEST_FILE: &str = "test_manifest.csv";

/// Extra `thresholds.csv` rows tying thresholds to the checkpoint and the
/// error definition they were computed with.
pub const CHECKPOINT_DIGEST_KEY: &str = "checkpoint_sha256";
pub const KL_WEIGHT_KEY: &str = "kl_weight";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir).map_err(|e| CliError::input(dir.display(), e))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::input(path.display(), e))
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, CliError> {
    if cfg.threads == 0 {
        return Err(CliError::Usage("threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub path: PathBuf,
    pub n_baseline: usize,
    pub n_damage: usize,
    pub n_samples: usize,
}

/// Writes the synthetic corpus to the `corpus` path.
pub fn cmd_synth(cfg: &RunConfig, log: &mut dyn Write) -> Result<SynthSummary, CliError> {
    let ds = synthesize(&cfg.synth_config())?;
    let path = PathBuf::from(cfg.required("corpus", &cfg.corpus)?);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(&ds, &path)?;
    write_text(
        &PathBuf::from(format!("{}.config", path.display())),
        &cfg.to_text(),
    )?;
    let summary = SynthSummary {
        path,
        n_baseline: ds.count(Label::Baseline),
        n_damage: ds.count(Label::Damage),
        n_samples: ds.n_samples(),
    };
    writeln!(
        log,
        "synth: {} baseline + {} damage signals of {} samples -> {}",
        summary.n_baseline,
        summary.n_damage,
        summary.n_samples,
        summary.path.display()
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CwtSummary {
    pub manifest: PathBuf,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub count: usize,
}

/// Scalograms for every corpus signal, plus manifests.
pub fn cmd_cwt(cfg: &RunConfig, log: &mut dyn Write) -> Result<CwtSummary, CliError> {
    let corpus = cfg.required("corpus", &cfg.corpus)?;
    let ds = load_dataset(Path::new(corpus))?;
    if let Some(s) = ds
        .signals
        .iter()
        .find(|s| s.id.contains([',', '"', '\n', '\r']))
    {
        return Err(CliError::Input(format!(
            "signal id `{}` contains CSV delimiters",
            s.id
        )));
    }
    let (basis, grid) = (cfg.basis()?, cfg.grid()?);
    let plan = CwtPlan::new(ds.n_samples(), &basis, &grid)?;
    let size = cfg.image_size;
    let images: Vec<Scalogram> = pool(cfg)?.install(|| {
        ds.signals
            .par_iter()
            .map(|s| plan.image(s, size))
            .collect::<Result<_, _>>()
    })?;

    let dir = out_dir(cfg)?;
    let scg_dir = dir.join("scalograms");
    fs::create_dir_all(&scg_dir)?;
    let mut used = HashMap::new();
    let mut entries = Vec::with_capacity(images.len());
    for (i, (signal, image)) in ds.signals.iter().zip(&images).enumerate() {
        let mut stem = file_stem(&signal.id);
        if used.insert(stem.clone(), i).is_some() {
            stem = format!("{stem}-{i}");
        }
        let rel = format!("scalograms/{stem}.scg");
        let mut w = create(&dir.join(&rel))?;
        write_scg1(image, &mut w)?;
        w.flush()?;
        if cfg.write_pgm {
            let mut p = create(&scg_dir.join(format!("{stem}.pgm")))?;
            write_pgm(image, &mut p)?;
            p.flush()?;
        }
        entries.push(ManifestEntry {
            id: signal.id.clone(),
            label: signal.label,
            path: rel,
        });
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&entries, &manifest)?;

    let (mut train_manifest, mut test_manifest) = (None, None);
    if cfg.split {
        let (train_ds, test_ds) = split(&ds, &cfg.split_spec())?;
        let by_id: HashMap<&str, &ManifestEntry> =
            entries.iter().map(|e| (e.id.as_str(), e)).collect();
        let pick = |d: &gwvae::data::Dataset| -> Vec<ManifestEntry> {
            d.signals
                .iter()
                .map(|s| by_id[s.id.as_str()].clone())
                .collect()
        };
        let (tr, te) = (dir.join(TRAIN_MANIFEST_FILE), dir.join(TEST_MANIFEST_FILE));
        write_manifest(&pick(&train_ds), &tr)?;
        write_manifest(&pick(&test_ds), &te)?;
        train_manifest = Some(tr);
        test_manifest = Some(te);
    }
    write_text(&dir.join("cwt.config"), &cfg.to_text())?;
    writeln!(
        log,
        "cwt: {} scalograms ({size}x{size}) -> {}",
        entries.len(),
        manifest.display()
    )?;
    Ok(CwtSummary {
        manifest,
        train_manifest,
        test_manifest,
        count: entries.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub history: Vec<EpochLoss>,
    pub thresholds: ThresholdSet,
    pub checkpoint_sha256: String,
}

/// Trains on a baseline-only manifest and derives detection thresholds from
/// the training errors.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let samples = load_images(Path::new(cfg.required("manifest", &cfg.manifest)?))?;
    if let Some(i) = samples.iter().position(|s| s.label != Label::Baseline) {
        return Err(VaeError::NonBaseline(i).into());
    }
    let images: Vec<Scalogram> = samples.iter().map(|s| s.image.clone()).collect();
    let mut model = VaeModel::<f32>::new(cfg.arch(), cfg.seed)?;
    let outcome = train(&mut model, &images, &cfg.train_config(), cfg.seed)?;

    let dir = out_dir(cfg)?;
    let model_path = dir.join(MODEL_FILE);
    save_checkpoint(&model, &model_path)?;
    save_optimizer(&outcome.optimizer, &model, &dir.join(OPTIMIZER_FILE))?;
    let mut h = create(&dir.join(HISTORY_FILE))?;
    write_history_csv(&outcome.history, &mut h)?;
    h.flush()?;

    let scored = score_samples(&model, &samples, cfg.seed, cfg.threads, cfg.kl_weight)?;
    let mut e = create(&dir.join(TRAINING_ERRORS_FILE))?;
    write_errors_csv(&scored, &mut e)?;
    e.flush()?;
    let thresholds = compute_thresholds(&scored.iter().map(|s| s.error).collect::<Vec<_>>())?;
    let digest = sha256_hex(&fs::read(&model_path)?);
    let extra = [
        (CHECKPOINT_DIGEST_KEY.to_string(), digest.clone()),
        (KL_WEIGHT_KEY.to_string(), cfg.kl_weight.to_string()),
    ];
    let mut t = create(&dir.join(THRESHOLDS_FILE))?;
    write_thresholds_csv(&thresholds, &extra, &mut t)?;
    t.flush()?;
    write_text(&dir.join("train.config"), &cfg.to_text())?;

    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        writeln!(
            log,
            "train: {} epochs on {} images, loss {:.6} -> {:.6}",
            outcome.history.len(),
            images.len(),
            first.loss.total,
            last.loss.total
        )?;
    }
    writeln!(
        log,
        "thresholds: p99 {} max {}",
        thresholds.p99, thresholds.max
    )?;
    Ok(TrainSummary {
        history: outcome.history,
        thresholds,
        checkpoint_sha256: digest,
    })
}

fn load_model(cfg: &RunConfig) -> Result<(VaeModel<f32>, PathBuf), CliError> {
    let path = PathBuf::from(cfg.required("model", &cfg.model)?);
    if !path.is_file() {
        return Err(CliError::Input(format!(
            "{}: no such checkpoint",
            path.display()
        )));
    }
    Ok((load_checkpoint(&path)?, path))
}

fn check_sizes(model: &VaeModel<f32>, samples: &[LabeledImage]) -> Result<(), CliError> {
    let side = model.arch().image_size;
    match samples
        .iter()
        .find(|s| s.image.rows() != side || s.image.cols() != side)
    {
        Some(s) => Err(CliError::Mismatch(format!(
            "scalogram `{}` is {}x{}, checkpoint expects {side}x{side}",
            s.id,
            s.image.rows(),
            s.image.cols()
        ))),
        None => Ok(()),
    }
}

/// Scores a labeled manifest against stored thresholds.
pub fn cmd_detect(cfg: &RunConfig, log: &mut dyn Write) -> Result<DetectionReport, CliError> {
    let t_path = PathBuf::from(cfg.required("thresholds", &cfg.thresholds)?);
    let file = File::open(&t_path).map_err(|e| CliError::input(t_path.display(), e))?;
    let (thresholds, extra) = read_thresholds_csv(BufReader::new(file))?;
    let (model, model_path) = load_model(cfg)?;
    if let Some(expected) = extra.get(CHECKPOINT_DIGEST_KEY) {
        let actual = sha256_hex(&fs::read(&model_path)?);
        if &actual != expected {
            return Err(CliError::Mismatch(format!(
                "{} was computed for checkpoint {expected}, {} is {actual}",
                t_path.display(),
                model_path.display()
            )));
        }
    }
    let kl_weight = match extra.get(KL_WEIGHT_KEY) {
        Some(v) => v
            .parse::<f64>()
            .map_err(|e| CliError::input(t_path.display(), format!("kl_weight `{v}`: {e}")))?,
        None => cfg.kl_weight,
    };
    let samples = load_images(Path::new(cfg.required("manifest", &cfg.manifest)?))?;
    check_sizes(&model, &samples)?;
    let scored = score_samples(&model, &samples, cfg.seed, cfg.threads, kl_weight)?;
    let errors: Vec<_> = scored.iter().map(|s| s.to_error_sample()).collect();
    let report = evaluate(&errors, &thresholds)?;

    let dir = out_dir(cfg)?;
    let mut v = create(&dir.join(VERDICTS_FILE))?;
    write_verdicts_csv(&report, &mut v)?;
    v.flush()?;
    let mut m = create(&dir.join(METRICS_FILE))?;
    write_metrics_csv(&report, &cfg.detect_thresholds, &mut m)?;
    m.flush()?;
    write_text(&dir.join("detect.config"), &cfg.to_text())?;
    for &kind in &cfg.detect_thresholds {
        let c = report.matrix(kind);
        writeln!(
            log,
            "{}: tp {} fp {} tn {} fn {} | accuracy {:.4} fpr {:.4} fnr {:.4}",
            kind.as_str(),
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            c.accuracy(),
            c.fpr(),
            c.fnr()
        )?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSummary {
    pub rows: Vec<LatentRow>,
    pub separation: Option<Separation>,
}

/// Posterior means for every manifest entry.
pub fn cmd_latent(cfg: &RunConfig, log: &mut dyn Write) -> Result<LatentSummary, CliError> {
    let (model, _) = load_model(cfg)?;
    let samples = load_images(Path::new(cfg.required("manifest", &cfg.manifest)?))?;
    check_sizes(&model, &samples)?;
    let rows = export_latent(&model, &samples)?;
    let dir = out_dir(cfg)?;
    let mut w = create(&dir.join(LATENT_FILE))?;
    write_latent_csv(&rows, &mut w)?;
    w.flush()?;
    write_text(&dir.join("latent.config"), &cfg.to_text())?;
    let separation = centroid_separation(&rows);
    writeln!(
        log,
        "latent: {} rows -> {}",
        rows.len(),
        dir.join(LATENT_FILE).display()
    )?;
    if let Some(s) = &separation {
        writeln!(
            log,
            "separation: distance {} pooled_std {} ratio {}",
            s.distance,
            s.pooled_std,
            s.ratio()
        )?;
    }
    Ok(LatentSummary { rows, separation })
}
