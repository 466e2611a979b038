//! End-to-end runs of the `gwvae` binary on small corpora.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gwvae::anomaly::{centroid_separation, read_latent_csv, read_thresholds_csv};
use gwvae::data::load_dataset;
use gwvae::nn::checkpoint::write_record;
use gwvae::vae::{model_to_record, VaeArch, VaeModel};
use tempfile::TempDir;

fn gwvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwvae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gwvae(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    gwvae(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small network and corpus so every stage runs in seconds.
const SMALL: &str = "\
n_baseline = 24
n_damage = 8
n_samples = 256
excitation_freqs = 100000,200000
burst_onset = 0.00002
boundary_echo_delay = 0.00015
damage_echo_delay = 0.00008
scale_min = 2
scale_max = 32
scale_count = 16
image_size = 16
filters = 4,8
n_train_baseline = 16
n_test_baseline = 8
n_test_damage = 8
epochs = 3
batch_size = 8
";

struct Run {
    _tmp: TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let config = root.join("small.config");
        fs::write(&config, SMALL).unwrap();
        Run {
            _tmp: tmp,
            root,
            config,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn synth_and_cwt(&self) {
        let corpus = self.path("corpus.gws");
        ok(&[
            "synth",
            "--config",
            p(&self.config),
            "--seed",
            "3",
            "--out",
            p(&corpus),
        ]);
        ok(&[
            "cwt",
            "--config",
            p(&self.config),
            "--seed",
            "3",
            "--input",
            p(&corpus),
            "--out",
            p(&self.path("scg")),
            "--pgm",
        ]);
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let manifest = self.path("scg/train_manifest.csv");
        let out = self.path(out);
        let mut args = vec![
            "train",
            "--config",
            p(&self.config),
            "--manifest",
            p(&manifest),
            "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        gwvae(&args)
    }

    fn detect(&self, manifest: &str, model_dir: &str, out: &str) -> Output {
        gwvae(&[
            "detect",
            "--config",
            p(&self.config),
            "--manifest",
            p(&self.path(manifest)),
            "--model",
            p(&self.path(&format!("{model_dir}/model.vae"))),
            "--thresholds",
            p(&self.path(&format!("{model_dir}/thresholds.csv"))),
            "--out",
            p(&self.path(out)),
        ])
    }
}

#[test]
fn synth_is_reproducible_and_sized() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.gws"), tmp.path().join("b.gws"));
    for path in [&a, &b] {
        let args = [
            "synth",
            "--n-baseline",
            "512",
            "--n-damage",
            "256",
            "--seed",
            "7",
            "--set",
            "n_samples=64",
        ];
        let mut v = args.to_vec();
        v.extend(["--out", p(path)]);
        ok(&v);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(load_dataset(&a).unwrap().len(), 768);
    assert!(tmp.path().join("a.gws.config").is_file());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x.gws");
    assert_eq!(
        code(&[
            "synth",
            "--n-baseline",
            "0",
            "--n-damage",
            "0",
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(code(&["synth", "--set", "bogus=1", "--out", p(&out)]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(
        code(&[
            "cwt",
            "--input",
            p(&tmp.path().join("missing.gws")),
            "--out",
            p(tmp.path())
        ]),
        2
    );
    let cfg = tmp.path().join("bad.config");
    fs::write(&cfg, "epochs = 3\nunknown_key = 4\n").unwrap();
    assert_eq!(code(&["synth", "--config", p(&cfg), "--out", p(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn cwt_writes_one_scalogram_per_signal() {
    let run = Run::new();
    run.synth_and_cwt();
    let manifest = fs::read_to_string(run.path("scg/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 32);
    let scgs = fs::read_dir(run.path("scg/scalograms"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "scg")
        .count();
    assert_eq!(scgs, 32);
    let pgm = fs::read(run.path("scg/scalograms/b00000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), 13 + 256);
    let train = fs::read_to_string(run.path("scg/train_manifest.csv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 16);
    assert!(train.lines().skip(1).all(|l| l.contains(",baseline,")));

    let before = fs::read(run.path("scg/scalograms/d00003.scg")).unwrap();
    run.synth_and_cwt();
    assert_eq!(
        fs::read(run.path("scg/scalograms/d00003.scg")).unwrap(),
        before
    );
}

#[test]
fn train_detect_latent_pipeline() {
    let run = Run::new();
    run.synth_and_cwt();
    let out = run.train("model", &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "model.vae",
        "model.opt",
        "loss_history.csv",
        "training_errors.csv",
        "thresholds.csv",
    ] {
        assert!(run.path("model").join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(run.path("model/loss_history.csv")).unwrap();
    assert_eq!(
        history.lines().next(),
        Some("epoch,reconstruction,kl,total")
    );
    assert_eq!(history.lines().count(), 4);
    let (t, extra) = read_thresholds_csv(BufReader::new(
        fs::File::open(run.path("model/thresholds.csv")).unwrap(),
    ))
    .unwrap();
    assert!(t.p99 <= t.max);
    assert_eq!(extra["checkpoint_sha256"].len(), 64);

    // training set against its own max threshold
    let out = run.detect("scg/train_manifest.csv", "model", "det_train");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let verdicts = fs::read_to_string(run.path("det_train/verdicts.csv")).unwrap();
    assert_eq!(verdicts.lines().count(), 17);
    assert!(
        verdicts.lines().skip(1).all(|l| l.ends_with(",healthy")),
        "{verdicts}"
    );

    assert!(run
        .detect("scg/test_manifest.csv", "model", "det_a")
        .status
        .success());
    assert!(run
        .detect("scg/test_manifest.csv", "model", "det_b")
        .status
        .success());
    let (va, vb) = (
        fs::read(run.path("det_a/verdicts.csv")).unwrap(),
        fs::read(run.path("det_b/verdicts.csv")).unwrap(),
    );
    assert_eq!(va, vb);
    let metrics = fs::read_to_string(run.path("det_a/metrics.csv")).unwrap();
    for row in metrics.lines().skip(1) {
        let counts: usize = row
            .split(',')
            .skip(1)
            .take(4)
            .map(|c| c.parse::<usize>().unwrap())
            .sum();
        assert_eq!(counts, 16, "{row}");
    }

    let stdout = ok(&[
        "latent",
        "--config",
        p(&run.config),
        "--manifest",
        p(&run.path("scg/test_manifest.csv")),
        "--model",
        p(&run.path("model/model.vae")),
        "--out",
        p(&run.path("lat")),
    ]);
    let rows = read_latent_csv(BufReader::new(
        fs::File::open(run.path("lat/latent.csv")).unwrap(),
    ))
    .unwrap();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.mu.iter().all(|v| v.is_finite())));
    let s = centroid_separation(&rows).unwrap();
    let printed = stdout
        .lines()
        .find(|l| l.starts_with("separation:"))
        .unwrap();
    assert_eq!(
        printed,
        format!(
            "separation: distance {} pooled_std {} ratio {}",
            s.distance,
            s.pooled_std,
            s.ratio()
        )
    );
}

#[test]
fn zero_epochs_keep_initialization() {
    let run = Run::new();
    run.synth_and_cwt();
    let out = run.train("init", &["--epochs", "0", "--seed", "11"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let arch = VaeArch {
        image_size: 16,
        filters: vec![4, 8],
        ..VaeArch::default()
    };
    let mut expected = Vec::new();
    write_record(
        &model_to_record(&VaeModel::<f32>::new(arch, 11).unwrap()),
        &mut expected,
    )
    .unwrap();
    assert_eq!(fs::read(run.path("init/model.vae")).unwrap(), expected);
    let history = fs::read_to_string(run.path("init/loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn config_echo_reproduces_training() {
    let run = Run::new();
    run.synth_and_cwt();
    assert!(run.train("first", &["--seed", "5"]).status.success());
    let echo = run.path("first/train.config");
    let second = run.path("second");
    ok(&["train", "--config", p(&echo), "--out", p(&second)]);
    for f in [
        "model.vae",
        "model.opt",
        "loss_history.csv",
        "training_errors.csv",
        "thresholds.csv",
    ] {
        assert_eq!(
            fs::read(run.path("first").join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn artifact_mismatches_exit_4() {
    let run = Run::new();
    run.synth_and_cwt();
    assert!(run.train("a", &["--seed", "1"]).status.success());
    assert!(run.train("b", &["--seed", "2"]).status.success());
    // thresholds from one run, checkpoint from another
    let out = gwvae(&[
        "detect",
        "--config",
        p(&run.config),
        "--manifest",
        p(&run.path("scg/test_manifest.csv")),
        "--model",
        p(&run.path("b/model.vae")),
        "--thresholds",
        p(&run.path("a/thresholds.csv")),
        "--out",
        p(&run.path("x")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // corrupted checkpoint
    let vae = run.path("a/model.vae");
    let mut bytes = fs::read(&vae).unwrap();
    bytes[0] = b'X';
    fs::write(&vae, &bytes).unwrap();
    let latent = |model: &Path, manifest: &Path| {
        gwvae(&[
            "latent",
            "--model",
            p(model),
            "--manifest",
            p(manifest),
            "--out",
            p(&run.path("y")),
        ])
        .status
        .code()
    };
    assert_eq!(latent(&vae, &run.path("scg/test_manifest.csv")), Some(4));

    // scalograms at a different resolution than the checkpoint
    ok(&[
        "cwt",
        "--config",
        p(&run.config),
        "--input",
        p(&run.path("corpus.gws")),
        "--set",
        "image_size=8",
        "--out",
        p(&run.path("scg8")),
    ]);
    assert_eq!(
        latent(
            &run.path("b/model.vae"),
            &run.path("scg8/test_manifest.csv")
        ),
        Some(4)
    );
}

#[test]
fn training_rejects_damage_and_divergence() {
    let run = Run::new();
    run.synth_and_cwt();
    let out = gwvae(&[
        "train",
        "--config",
        p(&run.config),
        "--manifest",
        p(&run.path("scg/test_manifest.csv")),
        "--out",
        p(&run.path("t")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run.train("diverge", &["--set", "learning_rate=1e30"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss at epoch"));
}
