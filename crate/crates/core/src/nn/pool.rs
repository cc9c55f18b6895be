//! Non-overlapping max pooling along the sequence axis.

use super::tensor::{seq_dims, seq_shape, Tensor};
use crate::error::{Error, Result};

/// Argmax positions (flat input indices) recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct PoolCache {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

/// `out[i][c] = max(x[size·i .. size·i + size][c])`; a trailing partial
/// window is dropped and ties resolve to the lower index.
pub fn maxpool_forward(x: &Tensor, size: usize) -> Result<(Tensor, PoolCache)> {
    let (n, l, c) = seq_dims(x, "max pool input")?;
    if size == 0 || l < size {
        return Err(Error::shape(format!(
            "max pool of size {size} needs length >= {size}, got {l}"
        )));
    }
    let lo = l / size;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * lo * c);
    let mut argmax = Vec::with_capacity(n * lo * c);
    for s in 0..n {
        for i in 0..lo {
            for ch in 0..c {
                let mut best = (s * l + i * size) * c + ch;
                for w in 1..size {
                    let idx = (s * l + i * size + w) * c + ch;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let cache = PoolCache {
        argmax,
        in_shape: x.shape().to_vec(),
    };
    Ok((Tensor::new(seq_shape(x, n, lo, c), out)?, cache))
}

/// Route each upstream gradient to the position that won the max.
pub fn maxpool_backward(cache: &PoolCache, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(format!(
            "max pool grad_out has {} values, forward produced {}",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(&cache.in_shape);
    let gxd = gx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}
