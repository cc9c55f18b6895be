use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to each
/// probability.
pub fn bce_data(probs: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::shape(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let grad = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let y = f64::from(y);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            (-y / p + (1.0 - y) / (1.0 - p)) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// `λ·Σ‖W‖²` over conv and dense kernels.
pub fn l2_penalty(params: &ModelParams, lambda: f64) -> f64 {
    lambda * params.l2_sum()
}

/// Data loss plus the L2 penalty. The returned gradient covers the data term
/// only; the penalty's `2λW` is added to the kernel gradients by the trainer.
pub fn bce_loss(
    probs: &[f64],
    labels: &[u8],
    params: &ModelParams,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let (data, grad) = bce_data(probs, labels)?;
    Ok((data + l2_penalty(params, lambda), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    #[test]
    #[allow(clippy::approx_constant)]
    fn coin_flip_loss() {
        let (l, g) = bce_data(&[0.5], &[1]).unwrap();
        assert!((l - 0.69315).abs() < 1e-5);
        assert!((g[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let (l, _) = bce_data(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(l <= 1e-6);
        assert!(l.is_finite());
    }

    #[test]
    fn penalty_arithmetic() {
        let cfg = ModelConfig::toy();
        let mut p = ModelParams::zeros(&cfg).unwrap();
        p.output.w.data_mut()[0] = 2.0;
        let (l, _) = bce_loss(&[1.0], &[1], &p, 0.001).unwrap();
        assert!((l - 0.004).abs() < 1e-6, "{l}");
        // biases, norms and attention are not decayed
        p.output.b.data_mut()[0] = 5.0;
        p.attn.wq.data_mut()[0] = 5.0;
        p.ln.gamma.data_mut()[0] = 5.0;
        assert!((l2_penalty(&p, 0.001) - 0.004).abs() < 1e-15);
        assert!((l2_penalty(&p, 0.002) - 2.0 * l2_penalty(&p, 0.001)).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(bce_data(&[0.5, 0.5], &[1]).is_err());
    }
}
