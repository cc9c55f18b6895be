//! Same-padded 1D cross-correlation over `[L, C]` sequences.

use super::linalg::{axpy, dot};
use super::tensor::{seq_dims, seq_shape, Tensor};
use crate::error::{Error, Result};

fn kernel_dims(w: &Tensor, b: &Tensor, c_in: usize) -> Result<(usize, usize)> {
    let (k, wc, c_out) = match *w.shape() {
        [k, c, o] => (k, c, o),
        ref s => return Err(Error::shape(format!("conv kernel must be [K, C_in, C_out], got {s:?}"))),
    };
    if k % 2 == 0 {
        return Err(Error::shape(format!("conv kernel size must be odd, got {k}")));
    }
    if wc != c_in {
        return Err(Error::shape(format!(
            "conv kernel expects {wc} input channels, input has {c_in}"
        )));
    }
    b.expect_shape(&[c_out], "conv bias")?;
    Ok((k, c_out))
}

/// `out[i][o] = b[o] + Σ_{k,c} x[i + k − (K−1)/2][c] · w[k][c][o]`, with
/// out-of-range positions reading as zero.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, l, c_in) = seq_dims(x, "conv input")?;
    let (k, c_out) = kernel_dims(w, b, c_in)?;
    let pad = (k - 1) / 2;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; n * l * c_out];
    for s in 0..n {
        let xs = &xd[s * l * c_in..(s + 1) * l * c_in];
        for i in 0..l {
            let orow = &mut out[(s * l + i) * c_out..(s * l + i + 1) * c_out];
            orow.copy_from_slice(b.data());
            for kk in 0..k {
                let Some(src) = (i + kk).checked_sub(pad).filter(|&p| p < l) else {
                    continue;
                };
                for c in 0..c_in {
                    let xv = xs[src * c_in + c];
                    if xv != 0.0 {
                        axpy(xv, &wd[(kk * c_in + c) * c_out..(kk * c_in + c + 1) * c_out], orow);
                    }
                }
            }
        }
    }
    Tensor::new(seq_shape(x, n, l, c_out), out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

/// Gradients of [`conv1d_forward`] given its input `x`.
pub fn conv1d_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let (n, l, c_in) = seq_dims(x, "conv input")?;
    let c_out = *w.shape().last().unwrap_or(&0);
    let (k, _) = kernel_dims(w, &Tensor::zeros(&[c_out]), c_in)?;
    grad_out.expect_shape(&seq_shape(x, n, l, c_out), "conv grad_out")?;
    let pad = (k - 1) / 2;
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());

    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; c_out];
    for s in 0..n {
        for i in 0..l {
            let grow = &gd[(s * l + i) * c_out..(s * l + i + 1) * c_out];
            axpy(1.0, grow, &mut gb);
            for kk in 0..k {
                let Some(src) = (i + kk).checked_sub(pad).filter(|&p| p < l) else {
                    continue;
                };
                let base = (s * l + src) * c_in;
                for c in 0..c_in {
                    let widx = (kk * c_in + c) * c_out;
                    let xv = xd[base + c];
                    if xv != 0.0 {
                        axpy(xv, grow, &mut gw[widx..widx + c_out]);
                    }
                    gx[base + c] += dot(&wd[widx..widx + c_out], grow);
                }
            }
        }
    }
    Ok(ConvGrads {
        x: Tensor::new(x.shape().to_vec(), gx)?,
        w: Tensor::new(w.shape().to_vec(), gw)?,
        b: Tensor::new(vec![c_out], gb)?,
    })
}
