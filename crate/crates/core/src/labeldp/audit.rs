//! Empirical check of the epsilon-DP ratio bound.
//!
//! The audit draws pre-normalization outputs for two adjacent labels `y` and
//! `y'` and bins the pair of coordinates `(o_y, o_y')` jointly. Only those two
//! coordinates differ in distribution; the others cancel in every ratio.
//!
//! Binning jointly matters. Each coordinate on its own shifts by 1, so its
//! worst-case ratio is only `exp(epsilon / 2)`; the full `exp(epsilon)` is
//! reached only where both shifts point the same way, e.g. `o_y >= 1` and
//! `o_y' <= 0`. A per-coordinate audit could not tell a correct mechanism
//! from one with half the noise.

use std::fmt;

use serde::Serialize;

use super::{one_hot, LaplaceSampler, NoiseConfig};
use crate::error::{Error, Result};
use crate::rng::Substreams;

/// Bin edges applied to each of the two audited coordinates. They include 0
/// and 1 so that the extreme-ratio quadrant is a union of bins.
pub const AUDIT_EDGES: [f64; 5] = [-1.0, 0.0, 0.5, 1.0, 2.0];

const MIN_USABLE_BINS: usize = 10;
const CONFIDENCE_FAILURE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub epsilon: f64,
    /// The Laplace scale actually used.
    pub scale: f64,
    pub samples: usize,
    /// Bins with enough mass under both labels.
    pub bins: usize,
    pub min_bin_count: usize,
    pub max_ratio: f64,
    /// `exp(epsilon) * (1 + slack)`.
    pub bound: f64,
    pub slack: f64,
    pub verdict: Verdict,
}

impl AuditReport {
    pub const CSV_HEADER: &'static str = "epsilon,bins,max_ratio,bound,verdict";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{}",
            self.epsilon, self.bins, self.max_ratio, self.bound, self.verdict
        )
    }
}

/// Audits the mechanism configured by `cfg` with `samples` draws per label.
pub fn dp_audit(cfg: &NoiseConfig, samples: usize) -> Result<AuditReport> {
    cfg.validate()?;
    dp_audit_with_scale(cfg, samples, cfg.scale())
}

/// Audits a mechanism that uses Laplace scale `scale` while claiming
/// `cfg.epsilon`. Passing `cfg.scale() / 2` plants the weak-noise bug.
pub fn dp_audit_with_scale(cfg: &NoiseConfig, samples: usize, scale: f64) -> Result<AuditReport> {
    dp_audit_pair(cfg, samples, scale, (0, 1))
}

/// Audits the labels `pair.0` and `pair.1`. Identical labels are allowed and
/// should give a ratio near 1.
pub fn dp_audit_pair(
    cfg: &NoiseConfig,
    samples: usize,
    scale: f64,
    pair: (usize, usize),
) -> Result<AuditReport> {
    cfg.validate()?;
    if samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "audit needs >= 10000 samples, got {samples}"
        )));
    }
    if !cfg.epsilon.is_finite() {
        return Err(Error::InvalidArgument(
            "cannot audit an infinite budget".into(),
        ));
    }
    let (y, y2) = if pair.0 == pair.1 {
        (pair.0, (pair.0 + 1) % cfg.dims)
    } else {
        pair
    };
    let streams = Substreams::new(cfg.seed);
    let hist = |label: usize, which: u64| -> Result<Vec<usize>> {
        let hot = one_hot(label, cfg.dims)?;
        let mut sampler = LaplaceSampler::new(scale, streams.stream("audit", &[which]))?;
        let nb = AUDIT_EDGES.len() + 1;
        let mut counts = vec![0usize; nb * nb];
        for _ in 0..samples {
            let out = sampler.perturb(&hot);
            counts[bin(out[y]) * nb + bin(out[y2])] += 1;
        }
        Ok(counts)
    };
    let a = hist(pair.0, 0)?;
    let b = hist(pair.1, 1)?;

    let threshold = (samples / 200).max(1);
    let usable: Vec<(usize, usize)> = a
        .iter()
        .zip(&b)
        .filter(|(p, q)| **p >= threshold && **q >= threshold)
        .map(|(p, q)| (*p, *q))
        .collect();
    let min_bin_count = usable.iter().map(|(p, q)| (*p).min(*q)).min().unwrap_or(0);
    let max_ratio = usable
        .iter()
        .map(|&(p, q)| (p as f64 / q as f64).max(q as f64 / p as f64))
        .fold(1.0, f64::max);
    let slack = if min_bin_count > 0 {
        4.0 * ((2.0 / CONFIDENCE_FAILURE).ln() / (2.0 * min_bin_count as f64)).sqrt()
    } else {
        f64::INFINITY
    };
    let bound = cfg.epsilon.exp() * (1.0 + slack);
    let verdict = if usable.len() < MIN_USABLE_BINS {
        Verdict::Inconclusive
    } else if max_ratio <= bound {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(AuditReport {
        epsilon: cfg.epsilon,
        scale,
        samples,
        bins: usable.len(),
        min_bin_count,
        max_ratio,
        bound,
        slack,
        verdict,
    })
}

fn bin(v: f64) -> usize {
    AUDIT_EDGES.iter().take_while(|&&e| v >= e).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_are_half_open() {
        assert_eq!(bin(-5.0), 0);
        assert_eq!(bin(-1.0), 1);
        assert_eq!(bin(0.0), 2);
        assert_eq!(bin(0.99), 3);
        assert_eq!(bin(1.0), 4);
        assert_eq!(bin(7.0), 5);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(dp_audit(&NoiseConfig::new(1.0, 4, 0), 500).is_err());
    }
}
