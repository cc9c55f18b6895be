//! Central-difference verification of every analytic backward pass.
//!
//! Each check builds a random instance, contracts the layer output with a
//! fixed random tensor `r` to get a scalar `f(θ) = Σ r ⊙ layer(θ)`, and
//! compares `∂f/∂θ` from the backward pass (fed `grad_out = r`) with
//! `(f(θ + h) − f(θ − h)) / 2h`, `h = 1e-4 · max(1, |θ|)`, for every scalar of
//! every input and parameter.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{mha_backward, mha_forward, AttentionParams};
use super::conv::{conv1d_backward, conv1d_forward, ConvGrads};
use super::layers::{
    dense_backward, dense_forward, dropout, dropout_backward, global_average_pool,
    global_average_pool_backward, skip_add, skip_add_backward,
};
use super::model::{model_backward, model_forward, ModelConfig, ModelParams};
use super::norm::{
    batchnorm_backward, batchnorm_forward, layernorm_backward, layernorm_forward,
    BatchNormParams, LayerNormParams,
};
use super::pool::{maxpool_backward, maxpool_forward};
use super::tensor::Tensor;
use super::Mode;
use crate::error::Result;
use crate::optim::loss::bce_data;

pub const LAYER_BOUND: f64 = 1e-4;
pub const MODEL_BOUND: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences of `f` at `theta`.
pub fn numeric_gradient(f: &mut dyn FnMut(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = 1e-4 * theta[i].abs().max(1.0);
            probe[i] = theta[i] + h;
            let up = f(&probe);
            probe[i] = theta[i] - h;
            let down = f(&probe);
            probe[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between `analytic` and the central differences of
/// `f` at `theta`.
pub fn grad_check(f: &mut dyn FnMut(&[f64]) -> f64, theta: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(theta.len(), analytic.len(), "one analytic entry per scalar");
    numeric_gradient(f, theta)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape and data agree")
}

fn contract(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Concatenate tensors into one parameter vector.
fn pack(ts: &[&Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Split `theta` back into tensors shaped like `like`.
fn unpack(theta: &[f64], like: &[&Tensor]) -> Vec<Tensor> {
    let mut off = 0;
    like.iter()
        .map(|t| {
            let part = theta[off..off + t.len()].to_vec();
            off += t.len();
            Tensor::new(t.shape().to_vec(), part).expect("shape and data agree")
        })
        .collect()
}

pub type ConvBackwardFn = fn(&Tensor, &Tensor, &Tensor) -> Result<ConvGrads>;

/// Conv check on a random `12×2 → 3` instance using `backward` for the
/// analytic side, so a faulty implementation can be plugged in.
pub fn check_conv1d_with(seed: u64, backward: ConvBackwardFn) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[2, 12, 2], &mut rng);
    let w = random(&[3, 2, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let r = random(&[2, 12, 3], &mut rng);
    let g = backward(&x, &w, &r)?;
    let like = [&x, &w, &b];
    let mut f = |th: &[f64]| {
        let t = unpack(th, &like);
        contract(&conv1d_forward(&t[0], &t[1], &t[2]).unwrap(), &r)
    };
    Ok(grad_check(&mut f, &pack(&like), &pack(&[&g.x, &g.w, &g.b])))
}

pub fn check_conv1d(seed: u64) -> Result<f64> {
    check_conv1d_with(seed, conv1d_backward)
}

pub fn check_batchnorm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[4, 6, 2], &mut rng);
    let mut p = BatchNormParams::new(2);
    p.gamma = random(&[2], &mut rng);
    p.beta = random(&[2], &mut rng);
    let r = random(&[4, 6, 2], &mut rng);
    let (_, cache) = batchnorm_forward(&x, &p, Mode::Train)?;
    let g = batchnorm_backward(cache.as_ref().expect("train mode"), &p.gamma, &r)?;
    let like = [&x, &p.gamma, &p.beta];
    let mut f = |th: &[f64]| {
        let t = unpack(th, &like);
        let mut q = BatchNormParams::new(2);
        q.gamma = t[1].clone();
        q.beta = t[2].clone();
        contract(&batchnorm_forward(&t[0], &q, Mode::Train).unwrap().0, &r)
    };
    Ok(grad_check(&mut f, &pack(&like), &pack(&[&g.x, &g.gamma, &g.beta])))
}

pub fn check_maxpool(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // distinct values spaced far wider than the probe step: no ties
    let mut vals: Vec<f64> = (0..2 * 9 * 3).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = Tensor::new(vec![2, 9, 3], vals)?;
    let r = random(&[2, 4, 3], &mut rng);
    let (_, cache) = maxpool_forward(&x, 2)?;
    let g = maxpool_backward(&cache, &r)?;
    let shape = x.shape().to_vec();
    let mut f = |th: &[f64]| {
        let t = Tensor::new(shape.clone(), th.to_vec()).unwrap();
        contract(&maxpool_forward(&t, 2).unwrap().0, &r)
    };
    Ok(grad_check(&mut f, x.data(), g.data()))
}

/// Attention check at reduced size: L=5, width 8, 2 heads of d_k=4.
pub fn check_mha(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (heads, d, dk, l) = (2, 8, 4, 5);
    let x = random(&[2, l, d], &mut rng);
    let p = AttentionParams {
        wq: random(&[heads, d, dk], &mut rng),
        wk: random(&[heads, d, dk], &mut rng),
        wv: random(&[heads, d, dk], &mut rng),
        wo: random(&[heads * dk, d], &mut rng),
    };
    let r = random(&[2, l, d], &mut rng);
    let (_, cache) = mha_forward(&x, &p)?;
    let g = mha_backward(&cache, &p, &r)?;
    let like = [&x, &p.wq, &p.wk, &p.wv, &p.wo];
    let mut f = |th: &[f64]| {
        let t = unpack(th, &like);
        let q = AttentionParams {
            wq: t[1].clone(),
            wk: t[2].clone(),
            wv: t[3].clone(),
            wo: t[4].clone(),
        };
        contract(&mha_forward(&t[0], &q).unwrap().0, &r)
    };
    Ok(grad_check(&mut f, &pack(&like), &pack(&[&g.x, &g.wq, &g.wk, &g.wv, &g.wo])))
}

pub fn check_layernorm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[2, 5, 6], &mut rng);
    let p = LayerNormParams {
        gamma: random(&[6], &mut rng),
        beta: random(&[6], &mut rng),
    };
    let r = random(&[2, 5, 6], &mut rng);
    let (_, cache) = layernorm_forward(&x, &p)?;
    let g = layernorm_backward(&cache, &p.gamma, &r)?;
    let like = [&x, &p.gamma, &p.beta];
    let mut f = |th: &[f64]| {
        let t = unpack(th, &like);
        let q = LayerNormParams {
            gamma: t[1].clone(),
            beta: t[2].clone(),
        };
        contract(&layernorm_forward(&t[0], &q).unwrap().0, &r)
    };
    Ok(grad_check(&mut f, &pack(&like), &pack(&[&g.x, &g.gamma, &g.beta])))
}

pub fn check_gap(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[3, 7, 4], &mut rng);
    let r = random(&[3, 4], &mut rng);
    let g = global_average_pool_backward(x.shape(), &r)?;
    let shape = x.shape().to_vec();
    let mut f = |th: &[f64]| {
        let t = Tensor::new(shape.clone(), th.to_vec()).unwrap();
        contract(&global_average_pool(&t).unwrap(), &r)
    };
    Ok(grad_check(&mut f, x.data(), g.data()))
}

pub fn check_dense(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[3, 5], &mut rng);
    let w = random(&[5, 4], &mut rng);
    let b = random(&[4], &mut rng);
    let r = random(&[3, 4], &mut rng);
    let g = dense_backward(&x, &w, &r)?;
    let like = [&x, &w, &b];
    let mut f = |th: &[f64]| {
        let t = unpack(th, &like);
        contract(&dense_forward(&t[0], &t[1], &t[2]).unwrap(), &r)
    };
    Ok(grad_check(&mut f, &pack(&like), &pack(&[&g.x, &g.w, &g.b])))
}

pub fn check_skip_add(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(&[4, 3], &mut rng);
    let b = random(&[4, 3], &mut rng);
    let r = random(&[4, 3], &mut rng);
    let (ga, gb) = skip_add_backward(&r);
    let like = [&a, &b];
    let mut f = |th: &[f64]| {
        let t = unpack(th, &like);
        contract(&skip_add(&t[0], &t[1]).unwrap(), &r)
    };
    Ok(grad_check(&mut f, &pack(&like), &pack(&[&ga, &gb])))
}

/// Dropout at a fixed mask: the mask is drawn from the same seed on every
/// evaluation.
pub fn check_dropout(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[6, 5], &mut rng);
    let r = random(&[6, 5], &mut rng);
    let mask_seed = rng.gen::<u64>();
    let (_, mask) = dropout(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
    let g = dropout_backward(mask.as_deref(), &r)?;
    let shape = x.shape().to_vec();
    let mut f = |th: &[f64]| {
        let t = Tensor::new(shape.clone(), th.to_vec()).unwrap();
        let mut m = ChaCha8Rng::seed_from_u64(mask_seed);
        contract(&dropout(&t, 0.5, Mode::Train, &mut m).unwrap().0, &r)
    };
    Ok(grad_check(&mut f, x.data(), g.data()))
}

/// End-to-end check of the train-mode loss on `cfg` over every trainable
/// parameter, at fixed dropout masks.
pub fn check_model(cfg: &ModelConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(cfg, rng.gen())?;
    let n = 4;
    let batch = random(&[n, cfg.input_len, 1], &mut rng).map(|v| 2.0 * v);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let mask_seed = rng.gen::<u64>();

    let loss_at = |p: &ModelParams| -> f64 {
        let mut m = ChaCha8Rng::seed_from_u64(mask_seed);
        let (probs, _) = model_forward(cfg, p, &batch, Mode::Train, &mut m).unwrap();
        bce_data(&probs, &labels).unwrap().0
    };

    let mut m = ChaCha8Rng::seed_from_u64(mask_seed);
    let (probs, trace) = model_forward(cfg, &params, &batch, Mode::Train, &mut m)?;
    let (_, grad_probs) = bce_data(&probs, &labels)?;
    let grads = model_backward(cfg, &params, &trace.expect("train mode"), &grad_probs)?;

    let theta: Vec<f64> = params
        .trainable()
        .iter()
        .flat_map(|s| s.tensor.data().iter().copied())
        .collect();
    let analytic: Vec<f64> = grads
        .trainable()
        .iter()
        .flat_map(|s| s.tensor.data().iter().copied())
        .collect();
    let mut probe = params.clone();
    let mut f = |th: &[f64]| {
        let mut off = 0;
        for (_, t) in probe.trainable_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&th[off..off + len]);
            off += len;
        }
        loss_at(&probe)
    };
    Ok(grad_check(&mut f, &theta, &analytic))
}

pub type CheckFn = Box<dyn Fn(u64) -> Result<f64>>;

/// One named gradient check with its acceptance bound.
pub struct LayerCheck {
    pub name: &'static str,
    pub bound: f64,
    pub run: CheckFn,
}

impl LayerCheck {
    pub fn new(name: &'static str, bound: f64, run: impl Fn(u64) -> Result<f64> + 'static) -> Self {
        Self {
            name,
            bound,
            run: Box::new(run),
        }
    }
}

/// Conv, BN, pool, attention, layer norm, GAP, dense, skip, dropout and the
/// toy end-to-end model.
pub fn default_checks() -> Vec<LayerCheck> {
    vec![
        LayerCheck::new("conv1d", LAYER_BOUND, check_conv1d),
        LayerCheck::new("batchnorm", LAYER_BOUND, check_batchnorm),
        LayerCheck::new("maxpool", LAYER_BOUND, check_maxpool),
        LayerCheck::new("mha", LAYER_BOUND, check_mha),
        LayerCheck::new("layernorm", LAYER_BOUND, check_layernorm),
        LayerCheck::new("global_avg_pool", LAYER_BOUND, check_gap),
        LayerCheck::new("dense", LAYER_BOUND, check_dense),
        LayerCheck::new("skip_add", LAYER_BOUND, check_skip_add),
        LayerCheck::new("dropout", LAYER_BOUND, check_dropout),
        LayerCheck::new("end_to_end", MODEL_BOUND, |s| check_model(&ModelConfig::toy(), s)),
    ]
}

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    /// `None` when the check itself errored.
    pub max_rel_error: Option<f64>,
    pub bound: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_some_and(|e| e < self.bound)
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub rows: Vec<CheckRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.rows.iter().filter(|r| !r.passed()).map(|r| r.name).collect()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>14} {:>10}  status", "layer", "max rel err", "bound")?;
        for r in &self.rows {
            let err = r
                .max_rel_error
                .map_or_else(|| "error".to_string(), |e| format!("{e:.3e}"));
            let status = if r.passed() { "ok" } else { "FAIL" };
            writeln!(f, "{:<16} {:>14} {:>10.0e}  {status}", r.name, err, r.bound)?;
        }
        Ok(())
    }
}

pub fn run_checks(checks: &[LayerCheck], seed: u64) -> GradcheckReport {
    let rows = checks
        .iter()
        .map(|c| CheckRow {
            name: c.name,
            max_rel_error: (c.run)(seed).ok().filter(|e| e.is_finite()),
            bound: c.bound,
        })
        .collect();
    GradcheckReport { rows }
}
