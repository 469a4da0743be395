//! Label differential privacy: Laplace noise on one-hot labels.
//!
//! A client replaces its label `y` by `(L(y) + n) / sum(L(y) + n)` where `n`
//! has i.i.d. `Laplace(0, b)` entries and `b = sensitivity / epsilon`. Noisy
//! entries may be negative; they are not clipped. Normalization is
//! post-processing and does not weaken the guarantee.

mod audit;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{StreamRng, Substreams};
use crate::tensor::Tensor;

pub use audit::{dp_audit, dp_audit_pair, dp_audit_with_scale, AuditReport, Verdict, AUDIT_EDGES};

/// Resampling attempts when the noisy label sums to (almost) zero.
pub const MAX_RETRIES: usize = 100;
const MIN_SUM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Privacy budget. `f64::INFINITY` disables the noise.
    pub epsilon: f64,
    /// L1 sensitivity of the one-hot encoding.
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
    pub dims: usize,
    /// Laplace noise is pure epsilon-DP; reported for completeness.
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sensitivity() -> f64 {
    2.0
}

impl NoiseConfig {
    pub fn new(epsilon: f64, dims: usize, seed: u64) -> NoiseConfig {
        NoiseConfig {
            epsilon,
            sensitivity: 2.0,
            dims,
            delta: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sensitivity must be > 0, got {}",
                self.sensitivity
            )));
        }
        if self.dims < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.dims
            )));
        }
        if self.delta != 0.0 {
            return Err(Error::Unsupported(
                "the Laplace mechanism has delta = 0".into(),
            ));
        }
        Ok(())
    }

    /// Laplace scale `b = sensitivity / epsilon`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl SoftLabel {
    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn argmax(&self) -> usize {
        crate::tensor::argmax(&self.values)
    }
}

pub fn one_hot(y: usize, k: usize) -> Result<SoftLabel> {
    if y >= k {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {k} classes"
        )));
    }
    let mut values = vec![0.0; k];
    values[y] = 1.0;
    Ok(SoftLabel {
        values,
        normalized: true,
    })
}

/// Largest L1 distance between two one-hot vectors of length `k`.
pub fn label_sensitivity(k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    Ok(2.0)
}

/// Draws `Laplace(0, b)` by inverting the CDF of a uniform draw.
#[derive(Debug, Clone)]
pub struct LaplaceSampler {
    scale: f64,
    rng: StreamRng,
}

impl LaplaceSampler {
    pub fn new(scale: f64, rng: StreamRng) -> Result<LaplaceSampler> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Laplace scale must be finite and >= 0, got {scale}"
            )));
        }
        Ok(LaplaceSampler { scale, rng })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random::<f64>() - 0.5;
            // u = -0.5 maps to ln(0).
            if u > -0.5 {
                return -self.scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
            }
        }
    }

    /// `L(y) + n` before normalization.
    pub fn perturb(&mut self, label: &SoftLabel) -> Vec<f64> {
        label.values.iter().map(|v| v + self.sample()).collect()
    }

    /// The full mechanism: perturb, then normalize by the sum.
    pub fn privatize(&mut self, label: &SoftLabel) -> Result<SoftLabel> {
        if self.scale == 0.0 {
            return Ok(label.clone());
        }
        for _ in 0..MAX_RETRIES {
            let noisy = self.perturb(label);
            let sum: f64 = noisy.iter().sum();
            if !sum.is_finite() || noisy.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite noisy label".into()));
            }
            if sum.abs() >= MIN_SUM {
                return Ok(SoftLabel {
                    values: noisy.into_iter().map(|v| v / sum).collect(),
                    normalized: true,
                });
            }
        }
        Err(Error::Numeric(format!(
            "noisy label summed to ~0 in {MAX_RETRIES} consecutive draws"
        )))
    }
}

/// Applies the mechanism with noise drawn from the stream seeded by `cfg.seed`.
pub fn apply_labeldp(label: &SoftLabel, cfg: &NoiseConfig) -> Result<SoftLabel> {
    cfg.validate()?;
    check_dims(label, cfg)?;
    let rng = Substreams::new(cfg.seed).stream("labeldp", &[]);
    LaplaceSampler::new(cfg.scale(), rng)?.privatize(label)
}

fn check_dims(label: &SoftLabel, cfg: &NoiseConfig) -> Result<()> {
    if label.dims() != cfg.dims {
        return Err(Error::Shape(format!(
            "label has {} entries, config says {}",
            label.dims(),
            cfg.dims
        )));
    }
    Ok(())
}

/// Noisy soft targets for a sequence of labels, drawn in order from `rng`.
/// `cfg = None` gives plain one-hot targets.
pub fn noisy_targets(
    labels: &[usize],
    k: usize,
    cfg: Option<&NoiseConfig>,
    rng: StreamRng,
) -> Result<Tensor> {
    let scale = match cfg {
        Some(c) => {
            c.validate()?;
            if c.dims != k {
                return Err(Error::Shape(format!(
                    "noise config has {} classes, data has {k}",
                    c.dims
                )));
            }
            c.scale()
        }
        None => 0.0,
    };
    noisy_targets_with_scale(labels, k, scale, rng)
}

/// [`noisy_targets`] with the Laplace scale `b` given directly.
pub fn noisy_targets_with_scale(
    labels: &[usize],
    k: usize,
    scale: f64,
    rng: StreamRng,
) -> Result<Tensor> {
    let mut sampler = LaplaceSampler::new(scale, rng)?;
    let mut out = Tensor::zeros(&[labels.len(), k]);
    for (i, &y) in labels.iter().enumerate() {
        let row = sampler.privatize(&one_hot(y, k)?)?.values;
        out.data_mut()[i * k..(i + 1) * k].copy_from_slice(&row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(2, 4).unwrap().values, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 2).unwrap().values, vec![1.0, 0.0]);
        assert!(one_hot(4, 4).is_err());
    }

    #[test]
    fn infinite_epsilon_is_identity() {
        let cfg = NoiseConfig::new(f64::INFINITY, 3, 9);
        let y = one_hot(1, 3).unwrap();
        assert_eq!(apply_labeldp(&y, &cfg).unwrap(), y);
    }

    #[test]
    fn config_validation() {
        assert!(NoiseConfig::new(0.0, 3, 0).validate().is_err());
        assert!(NoiseConfig::new(1.0, 1, 0).validate().is_err());
        let mut c = NoiseConfig::new(1.0, 3, 0);
        c.delta = 1e-5;
        assert!(c.validate().is_err());
        assert!(apply_labeldp(&one_hot(0, 4).unwrap(), &NoiseConfig::new(1.0, 3, 0)).is_err());
    }

    #[test]
    fn sampler_moments() {
        let mut s = LaplaceSampler::new(2.0, Substreams::new(5).stream("m", &[])).unwrap();
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.sample()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let mean_abs = xs.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        // E|X| = b, Var = 2 b^2.
        assert!(mean.abs() < 0.03);
        assert!((mean_abs - 2.0).abs() < 0.03);
    }
}
