//! Dense projection, pointwise activations, global average pooling, the
//! residual sum and inverted dropout.

use rand::Rng;

use super::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::tensor::{seq_dims, Tensor};
use super::Mode;
use crate::error::{Error, Result};

fn dense_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (d_in, d_out) = match *w.shape() {
        [i, o] => (i, o),
        ref s => return Err(Error::shape(format!("dense kernel must be [D_in, D_out], got {s:?}"))),
    };
    b.expect_shape(&[d_out], "dense bias")?;
    let rows = match *x.shape() {
        [d] if d == d_in => 1,
        [n, d] if d == d_in => n,
        ref s => {
            return Err(Error::shape(format!(
                "dense layer expects [{d_in}] or [N, {d_in}] input, got {s:?}"
            )))
        }
    };
    Ok((rows, d_in, d_out))
}

fn out_shape(x: &Tensor, rows: usize, d: usize) -> Vec<usize> {
    if x.rank() == 1 {
        vec![d]
    } else {
        vec![rows, d]
    }
}

/// `x·w + b` for a vector `[D_in]` or a batch `[N, D_in]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, d_in, d_out) = dense_dims(x, w, b)?;
    let mut out: Vec<f64> = b.data().iter().copied().cycle().take(rows * d_out).collect();
    matmul_acc(x.data(), w.data(), &mut out, rows, d_in, d_out);
    Tensor::new(out_shape(x, rows, d_out), out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

pub fn dense_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let d_out = w.shape().get(1).copied().unwrap_or(0);
    let (rows, d_in, d_out) = dense_dims(x, w, &Tensor::zeros(&[d_out]))?;
    grad_out.expect_shape(&out_shape(x, rows, d_out), "dense grad_out")?;
    let g = grad_out.data();
    let mut gx = vec![0.0; rows * d_in];
    matmul_nt_acc(g, w.data(), &mut gx, rows, d_out, d_in);
    let mut gw = vec![0.0; d_in * d_out];
    matmul_tn_acc(x.data(), g, &mut gw, rows, d_in, d_out);
    let mut gb = vec![0.0; d_out];
    for row in g.chunks_exact(d_out) {
        for (a, &v) in gb.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok(DenseGrads {
        x: Tensor::new(x.shape().to_vec(), gx)?,
        w: Tensor::new(w.shape().to_vec(), gw)?,
        b: Tensor::new(vec![d_out], gb)?,
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given the forward output.
pub fn relu_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(out.shape(), "relu grad_out")?;
    let data = out
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(out.shape().to_vec(), data)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean over the sequence axis: `[L, C] -> [C]`, `[N, L, C] -> [N, C]`.
pub fn global_average_pool(x: &Tensor) -> Result<Tensor> {
    let (n, l, c) = seq_dims(x, "global average pool input")?;
    if l == 0 {
        return Err(Error::shape("global average pool over an empty sequence"));
    }
    let mut out = vec![0.0; n * c];
    for s in 0..n {
        let orow = &mut out[s * c..(s + 1) * c];
        for row in x.data()[s * l * c..(s + 1) * l * c].chunks_exact(c) {
            for (o, &v) in orow.iter_mut().zip(row) {
                *o += v;
            }
        }
        orow.iter_mut().for_each(|o| *o /= l as f64);
    }
    let shape = if x.rank() == 2 { vec![c] } else { vec![n, c] };
    Tensor::new(shape, out)
}

/// Every position receives `grad / L`.
pub fn global_average_pool_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, l, c) = match *in_shape {
        [l, c] => (1, l, c),
        [n, l, c] => (n, l, c),
        ref s => return Err(Error::shape(format!("bad pooling input shape {s:?}"))),
    };
    if grad_out.len() != n * c {
        return Err(Error::shape(format!(
            "global average pool grad_out has {} values, expected {}",
            grad_out.len(),
            n * c
        )));
    }
    let mut gx = Vec::with_capacity(n * l * c);
    for s in 0..n {
        let g = &grad_out.data()[s * c..(s + 1) * c];
        for _ in 0..l {
            gx.extend(g.iter().map(|v| v / l as f64));
        }
    }
    Tensor::new(in_shape.to_vec(), gx)
}

/// Residual sum of two equally shaped tensors. Its backward pass hands the
/// same gradient to both branches.
pub fn skip_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "skip connection shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn skip_add_backward(grad_out: &Tensor) -> (Tensor, Tensor) {
    (grad_out.clone(), grad_out.clone())
}

/// Inverted dropout. In train mode each unit is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; the returned mask
/// holds those per-unit factors. Infer mode is the identity.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config("dropout_rate", format!("must lie in [0, 1), got {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, grad_out: &Tensor) -> Result<Tensor> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) if m.len() == grad_out.len() => {
            let data = grad_out.data().iter().zip(m).map(|(g, k)| g * k).collect();
            Tensor::new(grad_out.shape().to_vec(), data)
        }
        Some(m) => Err(Error::shape(format!(
            "dropout mask has {} entries, grad_out has {}",
            m.len(),
            grad_out.len()
        ))),
    }
}
