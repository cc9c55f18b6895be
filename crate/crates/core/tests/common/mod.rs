#![allow(dead_code)]

use std::path::{Path, PathBuf};

use seizure_core::cli::RunConfig;
use seizure_core::dataset::Dataset;
use seizure_core::preprocess::{apply_scaler, denoise_rows, fit_scaler, ThresholdPolicy};

/// Small synthetic run that finishes in a few seconds.
pub fn quick_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        synthetic: true,
        synthetic_per_class: 40,
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.hyper.max_epochs = 3;
    cfg
}

/// Denoise then standardize with statistics fit on `fit`.
pub fn prepare(fit: &Dataset, others: &[&Dataset]) -> (Dataset, Vec<Dataset>) {
    let policy = ThresholdPolicy::Universal;
    let dn = |d: &Dataset| Dataset {
        features: denoise_rows(&d.features, policy).unwrap(),
        ..d.clone()
    };
    let fit_dn = dn(fit);
    let scaler = fit_scaler(&fit_dn.features).unwrap();
    let sc = |d: Dataset| Dataset {
        features: apply_scaler(&d.features, &scaler).unwrap(),
        ..d
    };
    let rest = others.iter().map(|d| sc(dn(d))).collect();
    (sc(fit_dn), rest)
}

/// The real recordings, if someone has dropped them into `data/`.
pub fn real_csv() -> Option<PathBuf> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    [
        "data/Epileptic Seizure Recognition.csv",
        "data/epileptic_seizure_recognition.csv",
        "data/data.csv",
    ]
    .iter()
    .map(|p| root.join(p))
    .find(|p| p.is_file())
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
