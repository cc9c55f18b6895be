//! Batch normalization (statistics over every axis but the last) and layer
//! normalization (statistics over the last axis).

use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Fold batch statistics from a train-mode pass into the running estimates.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

/// Batch statistics and normalized activations from a train-mode pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

fn bn_dims(x: &Tensor, p: &BatchNormParams) -> Result<(usize, usize)> {
    let c = p.channels();
    if x.rank() < 2 || x.shape()[x.rank() - 1] != c {
        return Err(Error::shape(format!(
            "batch norm over {c} channels got input {:?}",
            x.shape()
        )));
    }
    Ok((x.len() / c, c))
}

/// Train mode normalizes each channel with batch statistics; infer mode uses
/// the running estimates and returns no cache.
pub fn batchnorm_forward(
    x: &Tensor,
    p: &BatchNormParams,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let (rows, c) = bn_dims(x, p)?;
    let (g, b) = (p.gamma.data(), p.beta.data());
    let xd = x.data();
    match mode {
        Mode::Infer => {
            let scale: Vec<f64> = p
                .running_var
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gm)| gm / (v + BN_EPS).sqrt())
                .collect();
            let rm = p.running_mean.data();
            let mut out = Vec::with_capacity(xd.len());
            for row in xd.chunks_exact(c) {
                for j in 0..c {
                    out.push((row[j] - rm[j]) * scale[j] + b[j]);
                }
            }
            Ok((Tensor::new(x.shape().to_vec(), out)?, None))
        }
        Mode::Train => {
            if x.shape()[0] < 2 {
                return Err(Error::shape(
                    "train-mode batch norm needs a batch of at least 2".to_string(),
                ));
            }
            let nr = rows as f64;
            let mut mean = vec![0.0; c];
            for row in xd.chunks_exact(c) {
                for j in 0..c {
                    mean[j] += row[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= nr);
            let mut var = vec![0.0; c];
            for row in xd.chunks_exact(c) {
                for j in 0..c {
                    let d = row[j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= nr);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

            let mut xhat = Vec::with_capacity(xd.len());
            let mut out = Vec::with_capacity(xd.len());
            for row in xd.chunks_exact(c) {
                for j in 0..c {
                    let h = (row[j] - mean[j]) * inv_std[j];
                    xhat.push(h);
                    out.push(g[j] * h + b[j]);
                }
            }
            let cache = BatchNormCache {
                mean,
                var,
                xhat,
                inv_std,
                shape: x.shape().to_vec(),
            };
            Ok((Tensor::new(x.shape().to_vec(), out)?, Some(cache)))
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Gradient of the train-mode transform, including the dependence of the
/// batch statistics on `x`.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<NormGrads> {
    grad_out.expect_shape(&cache.shape, "batch norm grad_out")?;
    let c = gamma.len();
    if cache.mean.len() != c {
        return Err(Error::shape("batch norm cache/gamma channel mismatch"));
    }
    let gd = grad_out.data();
    let rows = gd.len() / c;
    let nr = rows as f64;
    let mut gbeta = vec![0.0; c];
    let mut ggamma = vec![0.0; c];
    for (grow, hrow) in gd.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for j in 0..c {
            gbeta[j] += grow[j];
            ggamma[j] += grow[j] * hrow[j];
        }
    }
    let g = gamma.data();
    let mut gx = Vec::with_capacity(gd.len());
    for (grow, hrow) in gd.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for j in 0..c {
            let v = g[j] * cache.inv_std[j] * (grow[j] - gbeta[j] / nr - hrow[j] * ggamma[j] / nr);
            gx.push(v);
        }
    }
    Ok(NormGrads {
        x: Tensor::new(cache.shape.clone(), gx)?,
        gamma: Tensor::new(vec![c], ggamma)?,
        beta: Tensor::new(vec![c], gbeta)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

/// Normalize every position's channel vector, then scale and shift.
pub fn layernorm_forward(x: &Tensor, p: &LayerNormParams) -> Result<(Tensor, LayerNormCache)> {
    let c = p.gamma.len();
    if c == 0 || x.rank() == 0 || *x.shape().last().unwrap() != c {
        return Err(Error::shape(format!(
            "layer norm over {c} channels got input {:?}",
            x.shape()
        )));
    }
    let (g, b) = (p.gamma.data(), p.beta.data());
    let mut out = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.len() / c);
    for row in x.data().chunks_exact(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..c {
            let h = (row[j] - mean) * is;
            xhat.push(h);
            out.push(g[j] * h + b[j]);
        }
    }
    let cache = LayerNormCache {
        xhat,
        inv_std,
        shape: x.shape().to_vec(),
    };
    Ok((Tensor::new(x.shape().to_vec(), out)?, cache))
}

pub fn layernorm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<NormGrads> {
    grad_out.expect_shape(&cache.shape, "layer norm grad_out")?;
    let c = gamma.len();
    let g = gamma.data();
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    let mut gx = Vec::with_capacity(grad_out.len());
    let mut gh = vec![0.0; c];
    for ((grow, hrow), &is) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.xhat.chunks_exact(c))
        .zip(&cache.inv_std)
    {
        let mut mean_gh = 0.0;
        let mut mean_ghh = 0.0;
        for j in 0..c {
            ggamma[j] += grow[j] * hrow[j];
            gbeta[j] += grow[j];
            gh[j] = grow[j] * g[j];
            mean_gh += gh[j];
            mean_ghh += gh[j] * hrow[j];
        }
        mean_gh /= c as f64;
        mean_ghh /= c as f64;
        for j in 0..c {
            gx.push(is * (gh[j] - mean_gh - hrow[j] * mean_ghh));
        }
    }
    Ok(NormGrads {
        x: Tensor::new(cache.shape.clone(), gx)?,
        gamma: Tensor::new(vec![c], ggamma)?,
        beta: Tensor::new(vec![c], gbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_stats(t: &Tensor, c: usize) -> Vec<(f64, f64)> {
        let rows = t.len() / c;
        (0..c)
            .map(|j| {
                let col: Vec<f64> = t.data().chunks(c).map(|r| r[j]).collect();
                let m = col.iter().sum::<f64>() / rows as f64;
                let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / rows as f64;
                (m, v)
            })
            .collect()
    }

    fn sample() -> Tensor {
        let data: Vec<f64> = (0..3 * 4 * 2).map(|i| ((i * 7919) % 23) as f64 * 0.3 - 2.0).collect();
        Tensor::new(vec![3, 4, 2], data).unwrap()
    }

    #[test]
    fn train_mode_standardizes() {
        let x = sample();
        let p = BatchNormParams::new(2);
        let (y, cache) = batchnorm_forward(&x, &p, Mode::Train).unwrap();
        assert!(cache.is_some());
        for (m, v) in channel_stats(&y, 2) {
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
        let mut p = BatchNormParams::new(2);
        p.gamma = Tensor::full(&[2], 2.0);
        p.beta = Tensor::full(&[2], 3.0);
        let (y, _) = batchnorm_forward(&x, &p, Mode::Train).unwrap();
        for (m, v) in channel_stats(&y, 2) {
            assert!((m - 3.0).abs() < 1e-12);
            assert!((v.sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn infer_identity_statistics() {
        let x = sample();
        let (y, cache) = batchnorm_forward(&x, &BatchNormParams::new(2), Mode::Infer).unwrap();
        assert!(cache.is_none());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batch_of_one_rejected_in_train_mode() {
        let x = Tensor::zeros(&[1, 4, 2]);
        assert!(batchnorm_forward(&x, &BatchNormParams::new(2), Mode::Train).is_err());
        assert!(batchnorm_forward(&x, &BatchNormParams::new(2), Mode::Infer).is_ok());
        assert!(batchnorm_forward(&x, &BatchNormParams::new(3), Mode::Infer).is_err());
    }

    #[test]
    fn backward_constant_upstream_and_beta() {
        let x = sample();
        let mut p = BatchNormParams::new(2);
        p.gamma = Tensor::new(vec![2], vec![1.5, -0.5]).unwrap();
        let (_, cache) = batchnorm_forward(&x, &p, Mode::Train).unwrap();
        let g = Tensor::full(&[3, 4, 2], 0.7);
        let grads = batchnorm_backward(cache.as_ref().unwrap(), &p.gamma, &g).unwrap();
        assert!(grads.x.data().iter().all(|v| v.abs() < 1e-8));
        for b in grads.beta.data() {
            assert!((b - 0.7 * 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_update() {
        let x = sample();
        let mut p = BatchNormParams::new(2);
        let (_, cache) = batchnorm_forward(&x, &p, Mode::Train).unwrap();
        let cache = cache.unwrap();
        p.update_running(&cache);
        for j in 0..2 {
            assert!((p.running_mean.data()[j] - 0.1 * cache.mean[j]).abs() < 1e-15);
            assert!((p.running_var.data()[j] - (0.9 + 0.1 * cache.var[j])).abs() < 1e-15);
            assert!(p.running_var.data()[j] >= 0.0);
        }
    }

    #[test]
    fn layernorm_rows() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 4.0, 4.0]).unwrap();
        let mut p = LayerNormParams::new(3);
        p.beta = Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let (y, _) = layernorm_forward(&x, &p).unwrap();
        let expect = [-1.22474, 0.0, 1.22474];
        for (a, e) in y.data()[..3].iter().zip(expect) {
            assert!((a - e).abs() < 1e-4);
        }
        p.beta = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let (y, _) = layernorm_forward(&x, &p).unwrap();
        assert_eq!(&y.data()[3..], &[0.5, -1.0, 2.0]);
        assert!(layernorm_forward(&x, &LayerNormParams::new(2)).is_err());
    }
}
