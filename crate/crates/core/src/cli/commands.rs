//! Subcommand implementations. Each returns a [`StageError`] naming the
//! pipeline stage that failed; nothing is written until every stage before
//! `write` has succeeded.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::artifact::ModelArtifact;
use super::config::RunConfig;
use crate::dataset::{load_csv, split, synthesize, Dataset, Source, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion, EvalReport};
use crate::nn::gradcheck::{default_checks, run_checks, GradcheckReport};
use crate::nn::model::predict_proba;
use crate::nn::ModelConfig;
use crate::optim::train::{DECISION_THRESHOLD, EVAL_CHUNK};
use crate::optim::{train_with, EpochRecord, TrainState};
use crate::preprocess::{apply_scaler, denoise_rows, fit_scaler};

/// Training pipeline stages, in execution order.
pub const TRAIN_STAGES: [&str; 7] = ["load", "split", "denoise", "scale", "train", "evaluate", "write"];

pub const MODEL_FILE: &str = "model.bin";

#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

pub type CmdResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: &'static str) -> CmdResult<T>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: &'static str) -> CmdResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub stages: Vec<&'static str>,
    pub source: Source,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub state: TrainState,
    pub report: EvalReport,
    pub artifact: ModelArtifact,
    pub out_dir: PathBuf,
}

/// Real CSV when available, otherwise the synthetic surrogate if allowed.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(p) if p.exists() || !cfg.synthetic => load_csv(p),
        None if !cfg.synthetic => Err(Error::config(
            "data",
            "no data file given; pass --data or enable synthetic",
        )),
        _ => synthesize(cfg.synthetic_per_class, cfg.hyper.seed),
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn train_report(o: &TrainOutcome) -> String {
    let s = &o.state;
    let source = match o.source {
        Source::Real => "csv",
        Source::Synthetic => "synthetic",
    };
    let mut r = format!(
        "data = {source}\nn_train = {}\nn_val = {}\nn_test = {}\nepochs_run = {}\nbest_epoch = {}\nbest_val_loss = {:.6}\nstopped_early = {}\nfinal_lr = {}\n",
        o.n_train,
        o.n_val,
        o.n_test,
        s.epochs(),
        s.best_epoch,
        s.best_val_loss,
        s.stopped_early,
        s.lr
    );
    r.push_str(&o.report.to_key_value());
    r.push('\n');
    r.push_str(&o.report.confusion.to_string());
    r.push('\n');
    r
}

fn metrics_csv(r: &EvalReport) -> String {
    format!("{}\n{}\n", EvalReport::CSV_HEADER, r.to_csv_row())
}

/// Full pipeline: load, split, denoise, scale, train, evaluate, write.
///
/// `progress` sees every finished epoch.
pub fn cmd_train(cfg: &RunConfig, progress: &mut dyn FnMut(&EpochRecord)) -> CmdResult<TrainOutcome> {
    let mut stages = Vec::new();
    cfg.validate().at("config")?;
    let model_cfg = ModelConfig::default();

    let data = load_data(cfg).at("load")?;
    stages.push("load");

    let (train_raw, test_raw) = split(&data, &cfg.split).at("split")?;
    stages.push("split");

    let denoise = |d: &Dataset| -> Result<Dataset> {
        Ok(Dataset {
            features: denoise_rows(&d.features, cfg.wavelet)?,
            ..d.clone()
        })
    };
    let train_dn = denoise(&train_raw).at("denoise")?;
    let test_dn = denoise(&test_raw).at("denoise")?;
    stages.push("denoise");

    let scaler = fit_scaler(&train_dn.features).at("scale")?;
    let scale = |d: Dataset| -> Result<Dataset> {
        Ok(Dataset {
            features: apply_scaler(&d.features, &scaler)?,
            ..d
        })
    };
    let train_full = scale(train_dn).at("scale")?;
    let test_set = scale(test_dn).at("scale")?;
    stages.push("scale");

    let val_spec = SplitSpec {
        train_fraction: 1.0 - cfg.val_fraction,
        seed: cfg.split.seed.wrapping_add(1),
        stratified: cfg.split.stratified,
    };
    let (fit_set, val_set) = split(&train_full, &val_spec).at("train")?;
    let (params, state) = train_with(&model_cfg, &fit_set, &val_set, &cfg.hyper, |rec, _| {
        progress(rec);
        std::ops::ControlFlow::Continue(())
    })
    .at("train")?;
    stages.push("train");

    let probs = predict_proba(&model_cfg, &params, &test_set.features, EVAL_CHUNK).at("evaluate")?;
    let report = confusion(&probs, &test_set.labels, DECISION_THRESHOLD)
        .and_then(|cm| compute_metrics(&cm))
        .at("evaluate")?;
    stages.push("evaluate");

    let artifact = ModelArtifact {
        config: model_cfg,
        params,
        scaler,
        wavelet: cfg.wavelet,
        meta: vec![
            ("seed".into(), cfg.hyper.seed.to_string()),
            ("split_seed".into(), cfg.split.seed.to_string()),
            ("epochs_run".into(), state.epochs().to_string()),
            ("best_epoch".into(), state.best_epoch.to_string()),
            ("test_accuracy".into(), format!("{:.6}", report.accuracy)),
        ],
    };
    let mut outcome = TrainOutcome {
        stages,
        source: data.source,
        n_train: fit_set.len(),
        n_val: val_set.len(),
        n_test: test_set.len(),
        state,
        report,
        artifact,
        out_dir: cfg.out_dir.clone(),
    };

    let mut test_csv = Vec::new();
    test_raw
        .write_csv(&mut test_csv)
        .map_err(|e| Error::io(cfg.out_dir.join("test_split.csv"), e))
        .at("write")?;
    let dir = &cfg.out_dir;
    (|| -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(dir, "test_split.csv", &test_csv)?;
        write_file(dir, "curves.csv", outcome.state.curves_csv().as_bytes())?;
        write_file(dir, "confusion.csv", outcome.report.confusion.to_csv().as_bytes())?;
        write_file(dir, "metrics.csv", metrics_csv(&outcome.report).as_bytes())?;
        write_file(dir, "report.txt", train_report(&outcome).as_bytes())?;
        write_file(dir, "config.txt", cfg.to_text().as_bytes())?;
        outcome.artifact.save(dir.join(MODEL_FILE))
    })()
    .at("write")?;
    outcome.stages.push("write");
    Ok(outcome)
}

/// Score a labelled CSV with a saved model. With `out`, also writes
/// `report.txt`, `confusion.csv` and `metrics.csv` there.
pub fn cmd_evaluate(model: &Path, data: &Path, out: Option<&Path>) -> CmdResult<EvalReport> {
    let artifact = ModelArtifact::load(model).at("load model")?;
    let d = load_csv(data).at("load")?;
    let x = artifact.preprocess(&d.features).at("preprocess")?;
    let probs = predict_proba(&artifact.config, &artifact.params, &x, EVAL_CHUNK).at("evaluate")?;
    let report = confusion(&probs, &d.labels, DECISION_THRESHOLD)
        .and_then(|cm| compute_metrics(&cm))
        .at("evaluate")?;
    if let Some(dir) = out {
        (|| -> Result<()> {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let text = format!("{}\n{}\n", report.to_key_value(), report.confusion);
            write_file(dir, "report.txt", text.as_bytes())?;
            write_file(dir, "confusion.csv", report.confusion.to_csv().as_bytes())?;
            write_file(dir, "metrics.csv", metrics_csv(&report).as_bytes())
        })()
        .at("write")?;
    }
    Ok(report)
}

/// Outcome of [`predict_rows`]: how many rows were scored and which were
/// rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictSummary {
    pub scored: usize,
    /// (1-based row number, reason)
    pub rejected: Vec<(usize, String)>,
}

fn parse_row(fields: &[&str], width: usize) -> std::result::Result<Vec<f64>, String> {
    let numeric = |s: &str| s.parse::<f64>().is_ok();
    let samples = match fields.len() {
        n if n == width => fields,
        n if n == width + 1 && numeric(fields[0]) => &fields[..width],
        n if n == width + 1 => &fields[1..],
        n if n == width + 2 => &fields[1..=width],
        n => return Err(format!("expected {width} samples, found {n} fields")),
    };
    samples
        .iter()
        .enumerate()
        .map(|(j, s)| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("column {}: `{s}` is not a finite number", j + 1)),
        })
        .collect()
}

/// One `prob,label` line per scored row. Rows may carry an id column
/// and/or a trailing class label, which are ignored. Malformed rows are
/// reported and skipped.
pub fn predict_rows<R: std::io::Read, W: Write>(
    artifact: &ModelArtifact,
    input: R,
    mut out: W,
) -> CmdResult<PredictSummary> {
    let width = artifact.config.input_len;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = Vec::new();
    let mut summary = PredictSummary::default();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                summary.rejected.push((row, e.to_string()));
                continue;
            }
        };
        let fields: Vec<&str> = rec.iter().map(str::trim).collect();
        if row == 1 && fields.last().is_some_and(|s| s.parse::<f64>().is_err()) {
            continue;
        }
        match parse_row(&fields, width) {
            Ok(v) => rows.push(v),
            Err(msg) => summary.rejected.push((row, msg)),
        }
    }
    let probs = if rows.is_empty() {
        Vec::new()
    } else {
        let x = artifact.preprocess(&rows).at("preprocess")?;
        predict_proba(&artifact.config, &artifact.params, &x, EVAL_CHUNK).at("predict")?
    };
    let mut text = String::new();
    for p in &probs {
        text.push_str(&format!("{p:.6},{}\n", u8::from(*p > DECISION_THRESHOLD)));
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<output>", e))
        .at("write")?;
    summary.scored = probs.len();
    Ok(summary)
}

pub fn cmd_predict<W: Write>(model: &Path, data: &Path, out: W) -> CmdResult<PredictSummary> {
    let artifact = ModelArtifact::load(model).at("load model")?;
    let f = std::fs::File::open(data).map_err(|e| Error::io(data, e)).at("load")?;
    predict_rows(&artifact, std::io::BufReader::new(f), out)
}

pub fn cmd_gradcheck(seed: u64) -> GradcheckReport {
    run_checks(&default_checks(), seed)
}

pub fn cmd_synth(out: &Path, n_per_class: usize, seed: u64) -> CmdResult<Dataset> {
    let d = synthesize(n_per_class, seed).at("synthesize")?;
    let mut buf = Vec::new();
    d.write_csv(&mut buf)
        .map_err(|e| Error::io(out, e))
        .at("write")?;
    std::fs::write(out, buf).map_err(|e| Error::io(out, e)).at("write")?;
    Ok(d)
}
