//! Run configuration: a flat `key = value` file with `#` comments.
//!
//! ```text
//! # data
//! data = data/epileptic_seizure.csv
//! synthetic = true
//! train_fraction = 0.8
//! wavelet = universal
//! max_epochs = 60
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::optim::TrainHyper;
use crate::preprocess::ThresholdPolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Fall back to the synthetic surrogate when `data` is unset or missing.
    pub synthetic: bool,
    pub synthetic_per_class: usize,
    pub split: SplitSpec,
    /// Share of the training split held out for the early-stopping and
    /// learning-rate callbacks.
    pub val_fraction: f64,
    pub wavelet: ThresholdPolicy,
    pub hyper: TrainHyper,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: false,
            synthetic_per_class: 250,
            split: SplitSpec::default(),
            val_fraction: 0.1,
            wavelet: ThresholdPolicy::Universal,
            hyper: TrainHyper::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        text.parse()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "synthetic" => self.synthetic = parse_bool(key, value)?,
            "synthetic_per_class" => self.synthetic_per_class = parse(key, value)?,
            "train_fraction" => self.split.train_fraction = parse(key, value)?,
            "split_seed" => self.split.seed = parse(key, value)?,
            "stratified" => self.split.stratified = parse_bool(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "wavelet" => self.wavelet = value.parse()?,
            "lr" => self.hyper.lr = parse(key, value)?,
            "batch_size" => self.hyper.batch_size = parse(key, value)?,
            "max_epochs" => self.hyper.max_epochs = parse(key, value)?,
            "patience_es" => self.hyper.patience_es = parse(key, value)?,
            "patience_lr" => self.hyper.patience_lr = parse(key, value)?,
            "lr_factor" => self.hyper.lr_factor = parse(key, value)?,
            "min_lr" => self.hyper.min_lr = parse(key, value)?,
            "min_delta" => self.hyper.min_delta = parse(key, value)?,
            "seed" => self.hyper.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config(
                "train_fraction",
                format!("must lie strictly between 0 and 1, got {f}"),
            ));
        }
        let v = self.val_fraction;
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::config(
                "val_fraction",
                format!("must lie strictly between 0 and 1, got {v}"),
            ));
        }
        if self.synthetic_per_class == 0 {
            return Err(Error::config("synthetic_per_class", "must be at least 1"));
        }
        self.hyper.validate()
    }

    /// Render back to the key-value form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.data {
            s.push_str(&format!("data = {}\n", d.display()));
        }
        let h = &self.hyper;
        for (k, v) in [
            ("synthetic", self.synthetic.to_string()),
            ("synthetic_per_class", self.synthetic_per_class.to_string()),
            ("train_fraction", self.split.train_fraction.to_string()),
            ("split_seed", self.split.seed.to_string()),
            ("stratified", self.split.stratified.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("wavelet", self.wavelet.to_string()),
            ("lr", h.lr.to_string()),
            ("batch_size", h.batch_size.to_string()),
            ("max_epochs", h.max_epochs.to_string()),
            ("patience_es", h.patience_es.to_string()),
            ("patience_lr", h.patience_lr.to_string()),
            ("lr_factor", h.lr_factor.to_string()),
            ("min_lr", h.min_lr.to_string()),
            ("min_delta", h.min_delta.to_string()),
            ("seed", h.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", i + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}
