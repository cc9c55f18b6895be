//! Multi-head scaled dot-product self-attention.
//!
//! Each head `h` projects the input with its own `W_q[h]`, `W_k[h]` and
//! `W_v[h]` (each `[D, d_k]`), attends with `softmax(Q Kᵀ / √d_k) V`, and the
//! concatenated head outputs pass through the shared projection
//! `W_o: [heads·d_k, D_out]`. No biases.

use super::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::tensor::{seq_dims, seq_shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    heads: usize,
    width: usize,
    key_dim: usize,
    out_width: usize,
}

impl AttentionParams {
    pub fn zeros(heads: usize, width: usize, key_dim: usize) -> Self {
        Self {
            wq: Tensor::zeros(&[heads, width, key_dim]),
            wk: Tensor::zeros(&[heads, width, key_dim]),
            wv: Tensor::zeros(&[heads, width, key_dim]),
            wo: Tensor::zeros(&[heads * key_dim, width]),
        }
    }

    pub fn heads(&self) -> usize {
        self.wq.shape().first().copied().unwrap_or(0)
    }

    fn dims(&self) -> Result<Dims> {
        let (heads, width, key_dim) = match *self.wq.shape() {
            [h, d, k] => (h, d, k),
            ref s => return Err(Error::shape(format!("W_q must be [heads, D, d_k], got {s:?}"))),
        };
        self.wk.expect_shape(&[heads, width, key_dim], "W_k")?;
        self.wv.expect_shape(&[heads, width, key_dim], "W_v")?;
        let out_width = match *self.wo.shape() {
            [r, o] if r == heads * key_dim => o,
            ref s => {
                return Err(Error::shape(format!(
                    "W_o must be [{}, D_out], got {s:?}",
                    heads * key_dim
                )))
            }
        };
        Ok(Dims {
            heads,
            width,
            key_dim,
            out_width,
        })
    }
}

/// Per-sample projections and attention weights kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    dims: Dims,
    len: usize,
    /// `[N, heads, L, d_k]` each.
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[N, heads, L, L]`
    weights: Vec<f64>,
    /// `[N, L, heads·d_k]`
    concat: Vec<f64>,
}

impl AttentionCache {
    /// Row-stochastic `[L, L]` attention matrix of `head` for sample `n`.
    pub fn weights(&self, n: usize, head: usize) -> &[f64] {
        let l = self.len;
        let off = (n * self.dims.heads + head) * l * l;
        &self.weights[off..off + l * l]
    }
}

fn softmax_rows(s: &mut [f64], l: usize) {
    for row in s.chunks_exact_mut(l) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
}

/// Self-attention over `[L, D]` or `[N, L, D]`.
pub fn mha_forward(x: &Tensor, p: &AttentionParams) -> Result<(Tensor, AttentionCache)> {
    let dims = p.dims()?;
    let (n, l, d) = seq_dims(x, "attention input")?;
    if d != dims.width {
        return Err(Error::shape(format!(
            "attention expects width {}, input has {d}",
            dims.width
        )));
    }
    let Dims {
        heads,
        key_dim: dk,
        out_width: d_out,
        ..
    } = dims;
    let hk = heads * dk;
    let scale = 1.0 / (dk as f64).sqrt();

    let mut q = vec![0.0; n * heads * l * dk];
    let mut k = vec![0.0; n * heads * l * dk];
    let mut v = vec![0.0; n * heads * l * dk];
    let mut weights = vec![0.0; n * heads * l * l];
    let mut concat = vec![0.0; n * l * hk];
    let mut out = vec![0.0; n * l * d_out];
    let mut head_out = vec![0.0; l * dk];

    for s in 0..n {
        let xs = &x.data()[s * l * d..(s + 1) * l * d];
        for h in 0..heads {
            let pw = h * d * dk..(h + 1) * d * dk;
            let hs = (s * heads + h) * l * dk..(s * heads + h + 1) * l * dk;
            matmul_acc(xs, &p.wq.data()[pw.clone()], &mut q[hs.clone()], l, d, dk);
            matmul_acc(xs, &p.wk.data()[pw.clone()], &mut k[hs.clone()], l, d, dk);
            matmul_acc(xs, &p.wv.data()[pw], &mut v[hs.clone()], l, d, dk);

            let a = &mut weights[(s * heads + h) * l * l..(s * heads + h + 1) * l * l];
            matmul_nt_acc(&q[hs.clone()], &k[hs.clone()], a, l, dk, l);
            a.iter_mut().for_each(|e| *e *= scale);
            softmax_rows(a, l);

            head_out.iter_mut().for_each(|e| *e = 0.0);
            matmul_acc(a, &v[hs], &mut head_out, l, l, dk);
            for i in 0..l {
                let dst = (s * l + i) * hk + h * dk;
                concat[dst..dst + dk].copy_from_slice(&head_out[i * dk..(i + 1) * dk]);
            }
        }
        matmul_acc(
            &concat[s * l * hk..(s + 1) * l * hk],
            p.wo.data(),
            &mut out[s * l * d_out..(s + 1) * l * d_out],
            l,
            hk,
            d_out,
        );
    }
    let cache = AttentionCache {
        x: x.clone(),
        dims,
        len: l,
        q,
        k,
        v,
        weights,
        concat,
    };
    Ok((Tensor::new(seq_shape(x, n, l, d_out), out)?, cache))
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub x: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

pub fn mha_backward(
    cache: &AttentionCache,
    p: &AttentionParams,
    grad_out: &Tensor,
) -> Result<AttentionGrads> {
    if p.dims()? != cache.dims {
        return Err(Error::shape("attention params do not match the cache"));
    }
    let Dims {
        heads,
        width: d,
        key_dim: dk,
        out_width: d_out,
    } = cache.dims;
    let x = &cache.x;
    let (n, l, _) = seq_dims(x, "attention input")?;
    grad_out.expect_shape(&seq_shape(x, n, l, d_out), "attention grad_out")?;
    let hk = heads * dk;
    let scale = 1.0 / (dk as f64).sqrt();

    let mut gx = vec![0.0; x.len()];
    let mut gwq = vec![0.0; p.wq.len()];
    let mut gwk = vec![0.0; p.wk.len()];
    let mut gwv = vec![0.0; p.wv.len()];
    let mut gwo = vec![0.0; p.wo.len()];

    let mut gcat = vec![0.0; l * hk];
    let mut go = vec![0.0; l * dk];
    let mut ga = vec![0.0; l * l];
    let mut gq = vec![0.0; l * dk];
    let mut gk = vec![0.0; l * dk];
    let mut gv = vec![0.0; l * dk];

    for s in 0..n {
        let xs = &x.data()[s * l * d..(s + 1) * l * d];
        let gos = &grad_out.data()[s * l * d_out..(s + 1) * l * d_out];
        let cat = &cache.concat[s * l * hk..(s + 1) * l * hk];
        matmul_tn_acc(cat, gos, &mut gwo, l, hk, d_out);
        gcat.iter_mut().for_each(|e| *e = 0.0);
        matmul_nt_acc(gos, p.wo.data(), &mut gcat, l, d_out, hk);

        let gxs = &mut gx[s * l * d..(s + 1) * l * d];
        for h in 0..heads {
            let hs = (s * heads + h) * l * dk..(s * heads + h + 1) * l * dk;
            let (qh, kh, vh) = (&cache.q[hs.clone()], &cache.k[hs.clone()], &cache.v[hs]);
            let a = cache.weights(s, h);
            for i in 0..l {
                let src = i * hk + h * dk;
                go[i * dk..(i + 1) * dk].copy_from_slice(&gcat[src..src + dk]);
            }

            ga.iter_mut().for_each(|e| *e = 0.0);
            matmul_nt_acc(&go, vh, &mut ga, l, dk, l);
            gv.iter_mut().for_each(|e| *e = 0.0);
            matmul_tn_acc(a, &go, &mut gv, l, l, dk);

            // softmax Jacobian, then the 1/√d_k scaling; ga becomes gS
            for (arow, grow) in a.chunks_exact(l).zip(ga.chunks_exact_mut(l)) {
                let inner: f64 = arow.iter().zip(grow.iter()).map(|(a, g)| a * g).sum();
                for (g, &av) in grow.iter_mut().zip(arow) {
                    *g = av * (*g - inner) * scale;
                }
            }
            gq.iter_mut().for_each(|e| *e = 0.0);
            matmul_acc(&ga, kh, &mut gq, l, l, dk);
            gk.iter_mut().for_each(|e| *e = 0.0);
            matmul_tn_acc(&ga, qh, &mut gk, l, l, dk);

            let pw = h * d * dk..(h + 1) * d * dk;
            for (gproj, w, gw) in [
                (&gq, &p.wq, &mut gwq),
                (&gk, &p.wk, &mut gwk),
                (&gv, &p.wv, &mut gwv),
            ] {
                matmul_tn_acc(xs, gproj, &mut gw[pw.clone()], l, d, dk);
                matmul_nt_acc(gproj, &w.data()[pw.clone()], gxs, l, dk, d);
            }
        }
    }
    Ok(AttentionGrads {
        x: Tensor::new(x.shape().to_vec(), gx)?,
        wq: Tensor::new(p.wq.shape().to_vec(), gwq)?,
        wk: Tensor::new(p.wk.shape().to_vec(), gwk)?,
        wv: Tensor::new(p.wv.shape().to_vec(), gwv)?,
        wo: Tensor::new(p.wo.shape().to_vec(), gwo)?,
    })
}
