use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean-over-batch softmax cross-entropy against soft targets.
///
/// Per row, `loss = logsumexp(z) * sum(t) - <t, z>`, which is the usual
/// `-sum t_j log softmax(z)_j` and reduces to hard-label cross-entropy for a
/// one-hot `t`. Targets may have negative entries. Returns the loss and its
/// gradient w.r.t. the logits, `(softmax(z) * sum(t) - t) / batch`.
///
/// When `clip` is set, each row's logit gradient is rescaled to at most that
/// L2 norm before averaging; this bounds the influence of a single noisy
/// target on the update.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    targets: &Tensor,
    clip: Option<f64>,
) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 || logits.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let (batch, k) = (logits.shape()[0], logits.shape()[1]);
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut grad = Tensor::zeros(&[batch, k]);
    let mut total = 0.0;
    for i in 0..batch {
        let z = logits.row(i);
        let t = targets.row(i);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|&v| (v - zmax).exp()).sum();
        let lse = zmax + sum_exp.ln();
        let t_sum: f64 = t.iter().sum();
        let dot: f64 = t.iter().zip(z).map(|(a, b)| a * b).sum();
        total += lse * t_sum - dot;
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for j in 0..k {
            g[j] = (z[j] - lse).exp() * t_sum - t[j];
        }
        if let Some(c) = clip {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > c {
                let s = c / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    let loss = total / batch as f64;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let inv = 1.0 / batch as f64;
    grad.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok((loss, grad))
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
