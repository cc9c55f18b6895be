//! The assembled detector:
//!
//! ```text
//! [Conv → BN → ReLU → MaxPool] × 3 → MHA ⊕ skip → LayerNorm → GAP
//!   → [Dense → BN → ReLU → Dropout] × 2 → Dense(1) → sigmoid
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{mha_backward, mha_forward, AttentionCache, AttentionParams};
use super::conv::{conv1d_backward, conv1d_forward};
use super::layers::{
    dense_backward, dense_forward, dropout, dropout_backward, global_average_pool,
    global_average_pool_backward, relu, relu_backward, sigmoid, skip_add, skip_add_backward,
};
use super::norm::{
    batchnorm_backward, batchnorm_forward, layernorm_backward, layernorm_forward, BatchNormCache,
    BatchNormParams, LayerNormCache, LayerNormParams,
};
use super::pool::{maxpool_backward, maxpool_forward, PoolCache};
use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_len: usize,
    pub conv_filters: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub pool_size: usize,
    pub attn_heads: usize,
    pub attn_key_dim: usize,
    pub dense_units: Vec<usize>,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: crate::SEGMENT_LEN,
            conv_filters: vec![32, 64, 128],
            conv_kernels: vec![7, 5, 3],
            pool_size: 2,
            attn_heads: 4,
            attn_key_dim: 32,
            dense_units: vec![128, 64],
            dropout_rate: 0.5,
            l2_lambda: 0.001,
        }
    }
}

impl ModelConfig {
    /// Scaled-down model used for end-to-end gradient checks.
    pub fn toy() -> Self {
        Self {
            input_len: 16,
            conv_filters: vec![2, 2, 2],
            conv_kernels: vec![7, 5, 3],
            pool_size: 2,
            attn_heads: 1,
            attn_key_dim: 2,
            dense_units: vec![4, 2],
            dropout_rate: 0.5,
            l2_lambda: 0.001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.conv_filters.is_empty() || self.conv_filters.len() != self.conv_kernels.len() {
            return bad(
                "conv_filters",
                format!(
                    "{} filter counts vs {} kernel sizes",
                    self.conv_filters.len(),
                    self.conv_kernels.len()
                ),
            );
        }
        if let Some(k) = self.conv_kernels.iter().find(|&&k| k % 2 == 0) {
            return bad("conv_kernels", format!("kernel sizes must be odd, got {k}"));
        }
        if self.conv_filters.contains(&0) || self.dense_units.contains(&0) {
            return bad("conv_filters", "layer widths must be positive".into());
        }
        if self.pool_size == 0 {
            return bad("pool_size", "must be positive".into());
        }
        let last = *self.conv_filters.last().unwrap();
        if self.attn_heads * self.attn_key_dim != last || self.attn_heads == 0 {
            return bad(
                "attn_heads",
                format!(
                    "{} heads x key dim {} must equal the final conv width {last}",
                    self.attn_heads, self.attn_key_dim
                ),
            );
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", format!("must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda", format!("must be non-negative, got {}", self.l2_lambda));
        }
        if self.attention_len() == 0 {
            return bad(
                "input_len",
                format!("{} is too short for {} pooling stages", self.input_len, self.conv_filters.len()),
            );
        }
        Ok(())
    }

    /// Sequence length after each conv/pool stage.
    pub fn stage_lengths(&self) -> Vec<usize> {
        let mut l = self.input_len;
        self.conv_filters
            .iter()
            .map(|_| {
                l /= self.pool_size.max(1);
                l
            })
            .collect()
    }

    /// Length of the sequence entering attention.
    pub fn attention_len(&self) -> usize {
        self.stage_lengths().last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub w: Tensor,
    pub b: Tensor,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenDense {
    pub linear: Linear,
    pub bn: BatchNormParams,
}

/// Role of a parameter tensor; decides L2 decay and trainability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Conv and dense kernels; the only tensors under L2 decay.
    Kernel,
    Bias,
    Norm,
    Attention,
    /// BN running mean/variance; not trained.
    RunningStat,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::RunningStat
    }
}

#[derive(Debug, Clone)]
pub struct ParamSlot<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: &'a Tensor,
}

/// Every learnable tensor of the model plus BN running statistics.
///
/// Gradients use the same type: [`model_backward`] returns a `ModelParams`
/// whose tensors hold dL/dθ (running-stat slots are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: Vec<ConvBlock>,
    pub attn: AttentionParams,
    pub ln: LayerNormParams,
    pub hidden: Vec<HiddenDense>,
    pub output: Linear,
}

fn uniform(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut c_in = 1;
        let conv = cfg
            .conv_filters
            .iter()
            .zip(&cfg.conv_kernels)
            .map(|(&f, &k)| {
                let block = ConvBlock {
                    w: Tensor::zeros(&[k, c_in, f]),
                    b: Tensor::zeros(&[f]),
                    bn: BatchNormParams::new(f),
                };
                c_in = f;
                block
            })
            .collect();
        let width = c_in;
        let mut d_in = width;
        let hidden = cfg
            .dense_units
            .iter()
            .map(|&u| {
                let h = HiddenDense {
                    linear: Linear {
                        w: Tensor::zeros(&[d_in, u]),
                        b: Tensor::zeros(&[u]),
                    },
                    bn: BatchNormParams::new(u),
                };
                d_in = u;
                h
            })
            .collect();
        Ok(Self {
            conv,
            attn: AttentionParams::zeros(cfg.attn_heads, width, cfg.attn_key_dim),
            ln: LayerNormParams::new(width),
            hidden,
            output: Linear {
                w: Tensor::zeros(&[d_in, 1]),
                b: Tensor::zeros(&[1]),
            },
        })
    }

    /// Fan-in scaled uniform initialization: `±√(6/fan_in)` ahead of ReLU,
    /// `±√(3/fan_in)` for the attention projections and the sigmoid output.
    /// Biases start at 0, BN/LN at γ = 1, β = 0.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in &mut p.conv {
            let s = block.w.shape().to_vec();
            block.w = uniform(&s, (6.0 / (s[0] * s[1]) as f64).sqrt(), &mut rng);
        }
        let width = p.ln.gamma.len();
        let lim = (3.0 / width as f64).sqrt();
        for t in [&mut p.attn.wq, &mut p.attn.wk, &mut p.attn.wv] {
            let s = t.shape().to_vec();
            *t = uniform(&s, lim, &mut rng);
        }
        let s = p.attn.wo.shape().to_vec();
        p.attn.wo = uniform(&s, (3.0 / s[0] as f64).sqrt(), &mut rng);
        for h in &mut p.hidden {
            let s = h.linear.w.shape().to_vec();
            h.linear.w = uniform(&s, (6.0 / s[0] as f64).sqrt(), &mut rng);
        }
        let s = p.output.w.shape().to_vec();
        p.output.w = uniform(&s, (3.0 / s[0] as f64).sqrt(), &mut rng);
        Ok(p)
    }

    /// Every tensor in a fixed order (the serialization order).
    pub fn slots(&self) -> Vec<ParamSlot<'_>> {
        use ParamKind::*;
        let mut v = Vec::new();
        let mut push = |name: String, kind, tensor| v.push(ParamSlot { name, kind, tensor });
        for (i, c) in self.conv.iter().enumerate() {
            push(format!("conv{i}.kernel"), Kernel, &c.w);
            push(format!("conv{i}.bias"), Bias, &c.b);
            push(format!("conv{i}.bn.gamma"), Norm, &c.bn.gamma);
            push(format!("conv{i}.bn.beta"), Norm, &c.bn.beta);
            push(format!("conv{i}.bn.running_mean"), RunningStat, &c.bn.running_mean);
            push(format!("conv{i}.bn.running_var"), RunningStat, &c.bn.running_var);
        }
        push("attn.wq".into(), Attention, &self.attn.wq);
        push("attn.wk".into(), Attention, &self.attn.wk);
        push("attn.wv".into(), Attention, &self.attn.wv);
        push("attn.wo".into(), Attention, &self.attn.wo);
        push("ln.gamma".into(), Norm, &self.ln.gamma);
        push("ln.beta".into(), Norm, &self.ln.beta);
        for (i, h) in self.hidden.iter().enumerate() {
            push(format!("dense{i}.kernel"), Kernel, &h.linear.w);
            push(format!("dense{i}.bias"), Bias, &h.linear.b);
            push(format!("dense{i}.bn.gamma"), Norm, &h.bn.gamma);
            push(format!("dense{i}.bn.beta"), Norm, &h.bn.beta);
            push(format!("dense{i}.bn.running_mean"), RunningStat, &h.bn.running_mean);
            push(format!("dense{i}.bn.running_var"), RunningStat, &h.bn.running_var);
        }
        push("output.kernel".into(), Kernel, &self.output.w);
        push("output.bias".into(), Bias, &self.output.b);
        v
    }

    /// Same order as [`ModelParams::slots`].
    pub fn slots_mut(&mut self) -> Vec<(ParamKind, &mut Tensor)> {
        use ParamKind::*;
        let mut v: Vec<(ParamKind, &mut Tensor)> = Vec::new();
        for c in &mut self.conv {
            v.push((Kernel, &mut c.w));
            v.push((Bias, &mut c.b));
            v.push((Norm, &mut c.bn.gamma));
            v.push((Norm, &mut c.bn.beta));
            v.push((RunningStat, &mut c.bn.running_mean));
            v.push((RunningStat, &mut c.bn.running_var));
        }
        v.push((Attention, &mut self.attn.wq));
        v.push((Attention, &mut self.attn.wk));
        v.push((Attention, &mut self.attn.wv));
        v.push((Attention, &mut self.attn.wo));
        v.push((Norm, &mut self.ln.gamma));
        v.push((Norm, &mut self.ln.beta));
        for h in &mut self.hidden {
            v.push((Kernel, &mut h.linear.w));
            v.push((Bias, &mut h.linear.b));
            v.push((Norm, &mut h.bn.gamma));
            v.push((Norm, &mut h.bn.beta));
            v.push((RunningStat, &mut h.bn.running_mean));
            v.push((RunningStat, &mut h.bn.running_var));
        }
        v.push((Kernel, &mut self.output.w));
        v.push((Bias, &mut self.output.b));
        v
    }

    pub fn trainable(&self) -> Vec<ParamSlot<'_>> {
        self.slots().into_iter().filter(|s| s.kind.trainable()).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<(ParamKind, &mut Tensor)> {
        self.slots_mut().into_iter().filter(|(k, _)| k.trainable()).collect()
    }

    /// `Σ‖W‖²` over conv and dense kernels.
    pub fn l2_sum(&self) -> f64 {
        self.slots()
            .iter()
            .filter(|s| s.kind == ParamKind::Kernel)
            .map(|s| s.tensor.sum_squares())
            .sum()
    }

    pub fn n_trainable(&self) -> usize {
        self.trainable().iter().map(|s| s.tensor.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slots().iter().all(|s| s.tensor.is_finite())
    }

    /// Fold the batch statistics of a train-mode pass into the BN running
    /// estimates.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        for (block, t) in self.conv.iter_mut().zip(&trace.conv) {
            block.bn.update_running(&t.bn);
        }
        for (h, t) in self.hidden.iter_mut().zip(&trace.hidden) {
            h.bn.update_running(&t.bn);
        }
    }
}

#[derive(Debug, Clone)]
struct ConvTrace {
    input: Tensor,
    bn: BatchNormCache,
    act: Tensor,
    pool: PoolCache,
}

#[derive(Debug, Clone)]
struct DenseTrace {
    input: Tensor,
    bn: BatchNormCache,
    act: Tensor,
    mask: Option<Vec<f64>>,
}

/// Activations and masks from a train-mode pass, consumed by
/// [`model_backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    conv: Vec<ConvTrace>,
    attn: AttentionCache,
    ln: LayerNormCache,
    gap_in_shape: Vec<usize>,
    hidden: Vec<DenseTrace>,
    head_input: Tensor,
    probs: Vec<f64>,
    shapes: Vec<(String, Vec<usize>)>,
}

impl ForwardTrace {
    pub fn attention(&self) -> &AttentionCache {
        &self.attn
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `(stage, shape)` for every stage in execution order.
    pub fn shapes(&self) -> &[(String, Vec<usize>)] {
        &self.shapes
    }

    pub fn dropout_masks(&self) -> Vec<Option<&[f64]>> {
        self.hidden.iter().map(|h| h.mask.as_deref()).collect()
    }
}

/// Stack feature rows into a `[N, L, 1]` batch.
pub fn batch_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Tensor> {
    let l = rows.first().map_or(0, |r| r.as_ref().len());
    let mut data = Vec::with_capacity(rows.len() * l);
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != l {
            return Err(Error::shape(format!("row {i} has {} values, expected {l}", r.len())));
        }
        data.extend_from_slice(r);
    }
    Tensor::new(vec![rows.len(), l, 1], data)
}

/// Run the model on a `[N, input_len, 1]` batch. Train mode uses batch
/// statistics and dropout and returns the trace for [`model_backward`];
/// infer mode is a pure function of `(params, batch)`.
pub fn model_forward<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, Option<ForwardTrace>)> {
    let n = match *batch.shape() {
        [n, l, 1] if l == cfg.input_len => n,
        ref s => {
            return Err(Error::shape(format!(
                "model input must be [N, {}, 1], got {s:?}",
                cfg.input_len
            )))
        }
    };
    if params.conv.len() != cfg.conv_filters.len() || params.hidden.len() != cfg.dense_units.len() {
        return Err(Error::shape("parameters do not match the model config"));
    }
    let train = mode == Mode::Train;
    let mut shapes = vec![("input".to_string(), batch.shape().to_vec())];

    let mut x = batch.clone();
    let mut conv_traces = Vec::new();
    for (i, block) in params.conv.iter().enumerate() {
        let z = conv1d_forward(&x, &block.w, &block.b)?;
        shapes.push((format!("conv{i}"), z.shape().to_vec()));
        let (zn, bn) = batchnorm_forward(&z, &block.bn, mode)?;
        let act = relu(&zn);
        let (pooled, pool) = maxpool_forward(&act, cfg.pool_size)?;
        shapes.push((format!("pool{i}"), pooled.shape().to_vec()));
        if let Some(bn) = bn {
            conv_traces.push(ConvTrace {
                input: std::mem::replace(&mut x, pooled),
                bn,
                act,
                pool,
            });
        } else {
            x = pooled;
        }
    }

    let (attn_out, attn) = mha_forward(&x, &params.attn)?;
    shapes.push(("attention".into(), attn_out.shape().to_vec()));
    let summed = skip_add(&x, &attn_out)?;
    shapes.push(("skip_add".into(), summed.shape().to_vec()));
    let (normed, ln) = layernorm_forward(&summed, &params.ln)?;
    let gap_in_shape = normed.shape().to_vec();
    let mut h = global_average_pool(&normed)?;
    shapes.push(("global_average_pool".into(), h.shape().to_vec()));

    let mut dense_traces = Vec::new();
    for (i, layer) in params.hidden.iter().enumerate() {
        let z = dense_forward(&h, &layer.linear.w, &layer.linear.b)?;
        let (zn, bn) = batchnorm_forward(&z, &layer.bn, mode)?;
        let act = relu(&zn);
        let (dropped, mask) = dropout(&act, cfg.dropout_rate, mode, rng)?;
        shapes.push((format!("dense{i}"), dropped.shape().to_vec()));
        if let Some(bn) = bn {
            dense_traces.push(DenseTrace {
                input: std::mem::replace(&mut h, dropped),
                bn,
                act,
                mask,
            });
        } else {
            h = dropped;
        }
    }
    let logits = dense_forward(&h, &params.output.w, &params.output.b)?;
    shapes.push(("output".into(), logits.shape().to_vec()));
    let probs: Vec<f64> = logits.data().iter().map(|&z| sigmoid(z)).collect();
    debug_assert_eq!(probs.len(), n);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("model output".into()));
    }

    let trace = train.then(|| ForwardTrace {
        conv: conv_traces,
        attn,
        ln,
        gap_in_shape,
        hidden: dense_traces,
        head_input: h,
        probs: probs.clone(),
        shapes,
    });
    Ok((probs, trace))
}

/// Inference-mode probabilities for many rows, evaluated in chunks.
pub fn predict_proba<R: AsRef<[f64]>>(
    cfg: &ModelConfig,
    params: &ModelParams,
    rows: &[R],
    chunk: usize,
) -> Result<Vec<f64>> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut out = Vec::with_capacity(rows.len());
    for part in rows.chunks(chunk.max(1)) {
        let batch = batch_from_rows(part)?;
        let (p, _) = model_forward(cfg, params, &batch, Mode::Infer, &mut rng)?;
        out.extend(p);
    }
    Ok(out)
}

/// Gradients of the loss for every parameter, given dL/dp for each sample's
/// probability.
pub fn model_backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_probs: &[f64],
) -> Result<ModelParams> {
    if grad_probs.len() != trace.probs.len() {
        return Err(Error::shape(format!(
            "{} upstream gradients for a batch of {}",
            grad_probs.len(),
            trace.probs.len()
        )));
    }
    if trace.conv.len() != params.conv.len() || trace.hidden.len() != params.hidden.len() {
        return Err(Error::shape("trace does not match the parameters"));
    }
    let mut grads = ModelParams::zeros(cfg)?;
    for (kind, t) in grads.slots_mut() {
        if kind == ParamKind::RunningStat {
            t.data_mut().fill(0.0);
        }
    }
    let n = grad_probs.len();

    let g_logit: Vec<f64> = grad_probs
        .iter()
        .zip(&trace.probs)
        .map(|(g, p)| g * p * (1.0 - p))
        .collect();
    let g_logit = Tensor::new(vec![n, 1], g_logit)?;
    let dg = dense_backward(&trace.head_input, &params.output.w, &g_logit)?;
    grads.output = Linear { w: dg.w, b: dg.b };
    let mut g = dg.x;

    for (i, (layer, t)) in params.hidden.iter().zip(&trace.hidden).enumerate().rev() {
        let g_act = dropout_backward(t.mask.as_deref(), &g)?;
        let g_bn = relu_backward(&t.act, &g_act)?;
        let bg = batchnorm_backward(&t.bn, &layer.bn.gamma, &g_bn)?;
        let dg = dense_backward(&t.input, &layer.linear.w, &bg.x)?;
        let slot = &mut grads.hidden[i];
        slot.bn.gamma = bg.gamma;
        slot.bn.beta = bg.beta;
        slot.linear = Linear { w: dg.w, b: dg.b };
        g = dg.x;
    }

    let g_norm = global_average_pool_backward(&trace.gap_in_shape, &g)?;
    let lg = layernorm_backward(&trace.ln, &params.ln.gamma, &g_norm)?;
    grads.ln.gamma = lg.gamma;
    grads.ln.beta = lg.beta;
    let (mut g_seq, g_attn) = skip_add_backward(&lg.x);
    let ag = mha_backward(&trace.attn, &params.attn, &g_attn)?;
    for (a, b) in g_seq.data_mut().iter_mut().zip(ag.x.data()) {
        *a += b;
    }
    grads.attn = AttentionParams {
        wq: ag.wq,
        wk: ag.wk,
        wv: ag.wv,
        wo: ag.wo,
    };

    for (i, (block, t)) in params.conv.iter().zip(&trace.conv).enumerate().rev() {
        let g_act = maxpool_backward(&t.pool, &g_seq)?;
        let g_bn = relu_backward(&t.act, &g_act)?;
        let bg = batchnorm_backward(&t.bn, &block.bn.gamma, &g_bn)?;
        let cg = conv1d_backward(&t.input, &block.w, &bg.x)?;
        let slot = &mut grads.conv[i];
        slot.w = cg.w;
        slot.b = cg.b;
        slot.bn.gamma = bg.gamma;
        slot.bn.beta = bg.beta;
        g_seq = cg.x;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    Ok(grads)
}
