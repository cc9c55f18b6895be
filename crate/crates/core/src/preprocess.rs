//! Per-feature standardization and single-level Haar wavelet denoising.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerParams {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::shape(format!(
                "row has {} features, scaler expects {}",
                row.len(),
                self.mean.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect())
    }
}

/// Fit mean and population std (divide by N) for every column.
pub fn fit_scaler(rows: &[Vec<f64>]) -> Result<ScalerParams> {
    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "scaler needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let cols = rows[0].len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::shape(format!(
            "row {i} has {} columns, expected {cols}",
            r.len()
        )));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; cols];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut var = vec![0.0; cols];
    for r in rows {
        for ((v, &x), &m) in var.iter_mut().zip(r).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let mut std = Vec::with_capacity(cols);
    for (column, v) in var.into_iter().enumerate() {
        let s = (v / n).sqrt();
        if s.is_nan() || s <= 0.0 {
            return Err(Error::ZeroVariance { column });
        }
        std.push(s);
    }
    Ok(ScalerParams { mean, std })
}

pub fn apply_scaler(rows: &[Vec<f64>], params: &ScalerParams) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| params.transform_row(r)).collect()
}

/// Single-level Haar decomposition: half-length approximation and detail bands.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub approx: Vec<f64>,
    pub detail: Vec<f64>,
}

/// Orthonormal single-level Haar (db1) transform.
pub fn dwt_haar(signal: &[f64]) -> Result<WaveletCoeffs> {
    if signal.len() < 2 || !signal.len().is_multiple_of(2) {
        return Err(Error::shape(format!(
            "Haar transform needs an even length >= 2, got {}",
            signal.len()
        )));
    }
    let (approx, detail) = signal
        .chunks_exact(2)
        .map(|p| ((p[0] + p[1]) / SQRT_2, (p[0] - p[1]) / SQRT_2))
        .unzip();
    Ok(WaveletCoeffs { approx, detail })
}

pub fn idwt_haar(c: &WaveletCoeffs) -> Result<Vec<f64>> {
    if c.approx.len() != c.detail.len() {
        return Err(Error::shape(format!(
            "approx has {} coefficients, detail has {}",
            c.approx.len(),
            c.detail.len()
        )));
    }
    let mut out = Vec::with_capacity(2 * c.approx.len());
    for (&a, &d) in c.approx.iter().zip(&c.detail) {
        out.push((a + d) / SQRT_2);
        out.push((a - d) / SQRT_2);
    }
    Ok(out)
}

/// How the detail band is thresholded before reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdPolicy {
    /// Decompose and reconstruct only; the output equals the input.
    Off,
    /// Soft threshold with a fixed `t`.
    Fixed(f64),
    /// `t = median(|d|) / 0.6745 * sqrt(2 ln n)`.
    #[default]
    Universal,
}

impl ThresholdPolicy {
    /// Threshold to apply to `detail` for a signal of length `n`.
    pub fn threshold(&self, detail: &[f64], n: usize) -> f64 {
        match *self {
            ThresholdPolicy::Off => 0.0,
            ThresholdPolicy::Fixed(t) => t,
            ThresholdPolicy::Universal => {
                let sigma = median_abs(detail) / 0.6745;
                sigma * (2.0 * (n as f64).ln()).sqrt()
            }
        }
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::Off => write!(f, "off"),
            ThresholdPolicy::Universal => write!(f, "universal"),
            ThresholdPolicy::Fixed(t) => write!(f, "fixed:{t}"),
        }
    }
}

impl FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "off" => Ok(ThresholdPolicy::Off),
            "universal" => Ok(ThresholdPolicy::Universal),
            _ => {
                let t = s
                    .strip_prefix("fixed:")
                    .and_then(|t| t.trim().parse::<f64>().ok())
                    .filter(|t| t.is_finite() && *t >= 0.0)
                    .ok_or_else(|| {
                        Error::config(
                            "wavelet",
                            format!("expected off, universal or fixed:<t >= 0>, got `{s}`"),
                        )
                    })?;
                Ok(ThresholdPolicy::Fixed(t))
            }
        }
    }
}

fn median_abs(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
    a.sort_by(f64::total_cmp);
    let m = a.len() / 2;
    if a.len().is_multiple_of(2) {
        0.5 * (a[m - 1] + a[m])
    } else {
        a[m]
    }
}

pub fn soft_threshold(d: f64, t: f64) -> f64 {
    d.signum() * (d.abs() - t).max(0.0)
}

/// Haar-decompose, soft-threshold the detail band, reconstruct.
pub fn wavelet_denoise(signal: &[f64], policy: ThresholdPolicy) -> Result<Vec<f64>> {
    let mut c = dwt_haar(signal)?;
    if policy == ThresholdPolicy::Off {
        return idwt_haar(&c);
    }
    let t = policy.threshold(&c.detail, signal.len());
    for d in &mut c.detail {
        *d = soft_threshold(*d, t);
    }
    idwt_haar(&c)
}

pub fn denoise_rows(rows: &[Vec<f64>], policy: ThresholdPolicy) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| wavelet_denoise(r, policy)).collect()
}
