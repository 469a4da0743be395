//! Label inference from captured logit gradients.
//!
//! For one sample the loss gradient w.r.t. the logits is `softmax(z) - y`.
//! With a hard one-hot `y` the true class is its only negative entry, so an
//! honest-but-curious server that sees this gradient (the loss-computing
//! server of a vertical split) reads the label off as the argmin. LabelDP
//! replaces `y` by a noisy soft label and the sweep measures how quickly the
//! rule degrades to chance as the Laplace scale grows.
//!
//! Under a U-shaped split this gradient never leaves the client; the sweep
//! models a leak of it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{synth_train_test, Dataset};
use crate::error::{Error, Result};
use crate::labeldp::{noisy_targets_with_scale, one_hot, LaplaceSampler};
use crate::nn::{mlp_kinds, softmax_cross_entropy, NetworkSpec};
use crate::rng::Substreams;
use crate::tensor::Tensor;

/// What the adversary observed for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCapture {
    pub logit_gradient: Vec<f64>,
    /// Ground truth, used only to score the attack.
    pub true_label: usize,
    pub batch_size: usize,
}

impl GradientCapture {
    /// Runs `net` on the single sample `x` and keeps the logit gradient of
    /// the loss against `target`.
    pub fn observe(
        net: &NetworkSpec,
        x: &Tensor,
        target: &[f64],
        true_label: usize,
        clip: Option<f64>,
    ) -> Result<GradientCapture> {
        let batch_size = x.batch();
        let logits = net.forward(x)?;
        let targets = Tensor::new(vec![batch_size, target.len()], target.repeat(batch_size))?;
        let (_, grad) = softmax_cross_entropy(&logits, &targets, clip)?;
        Ok(GradientCapture {
            logit_gradient: grad.data().to_vec(),
            true_label,
            batch_size,
        })
    }
}

/// The argmin rule. Exact for one sample with a one-hot target.
pub fn infer_label(cap: &GradientCapture) -> Result<usize> {
    if cap.batch_size != 1 {
        return Err(Error::Unsupported(format!(
            "label inference needs a single-sample gradient, got batch {}",
            cap.batch_size
        )));
    }
    if cap.logit_gradient.is_empty() {
        return Err(Error::Shape("empty gradient".into()));
    }
    Ok(cap
        .logit_gradient
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (i, &g)| if g < best.1 { (i, g) } else { best },
        )
        .0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub predicted_label: usize,
    pub success: bool,
    pub noise_scale: f64,
    pub trial_id: usize,
}

fn default_grid() -> Vec<f64> {
    vec![0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0]
}

fn default_clip() -> Option<f64> {
    Some(1.0)
}

/// Settings for [`asr_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Laplace scales `b` to test.
    pub noise_grid: Vec<f64>,
    /// Attack trials per grid point.
    pub trials: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub hidden: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_clip")]
    pub clip: Option<f64>,
    /// Independent training runs averaged per grid point.
    pub accuracy_runs: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            noise_grid: default_grid(),
            trials: 500,
            num_classes: 3,
            dim: 4,
            hidden: 8,
            train_size: 300,
            test_size: 300,
            epochs: 10,
            batch_size: 10,
            lr: 0.1,
            clip: default_clip(),
            accuracy_runs: 4,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return Err(Error::InvalidArgument(format!(
                "need at least 100 trials per point, got {}",
                self.trials
            )));
        }
        if self.noise_grid.is_empty()
            || self
                .noise_grid
                .iter()
                .any(|b| !(*b >= 0.0 && b.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "noise grid must be non-empty, finite and >= 0".into(),
            ));
        }
        if self.num_classes < 2 || self.dim == 0 || self.hidden == 0 || self.accuracy_runs == 0 {
            return Err(Error::InvalidArgument(
                "classes >= 2, dim, hidden and accuracy_runs >= 1".into(),
            ));
        }
        if self.batch_size == 0 || self.train_size < self.batch_size || self.test_size == 0 {
            return Err(Error::InvalidArgument(
                "train set must hold a batch and test set must be non-empty".into(),
            ));
        }
        Ok(())
    }

    fn model(&self, init: &mut impl Rng) -> Result<NetworkSpec> {
        let kinds = mlp_kinds(&[self.dim, self.hidden, self.num_classes])?;
        NetworkSpec::init(&kinds, vec![self.dim], self.num_classes, init)
    }
}

/// One point of the curve; the CSV columns in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub noise_scale: f64,
    pub asr_pct: f64,
    pub accuracy_pct: f64,
    pub trials: usize,
}

/// Attack trials at one noise scale. Each trial draws a fresh model, a test
/// sample and a noisy label.
pub fn attack_trials(
    cfg: &SweepConfig,
    test: &Dataset,
    scale: f64,
    point: usize,
) -> Result<Vec<AttackResult>> {
    let root = Substreams::new(cfg.seed).child("attack", &[point as u64]);
    (0..cfg.trials)
        .map(|t| {
            let ids = [t as u64];
            let net = cfg.model(&mut root.stream("init", &ids))?;
            let i = root.stream("sample", &ids).random_range(0..test.len());
            let y = test.labels[i];
            let target = LaplaceSampler::new(scale, root.stream("noise", &ids))?
                .privatize(&one_hot(y, cfg.num_classes)?)?;
            let cap = GradientCapture::observe(
                &net,
                &test.features.gather_rows(&[i]),
                &target.values,
                y,
                cfg.clip,
            )?;
            let predicted_label = infer_label(&cap)?;
            Ok(AttackResult {
                predicted_label,
                success: predicted_label == y,
                noise_scale: scale,
                trial_id: t,
            })
        })
        .collect()
}

/// Held-out accuracy (percent) after training on labels noised at `scale`,
/// averaged over `cfg.accuracy_runs` runs.
pub fn noisy_label_accuracy(cfg: &SweepConfig, scale: f64, point: usize) -> Result<f64> {
    let root = Substreams::new(cfg.seed).child("accuracy", &[point as u64]);
    let mut total = 0.0;
    for run in 0..cfg.accuracy_runs {
        let r = run as u64;
        let data_seed = Substreams::new(cfg.seed).child("data", &[r]).seed();
        let (train, test) = synth_train_test(
            cfg.train_size,
            cfg.test_size,
            cfg.num_classes,
            cfg.dim,
            data_seed,
        )?;
        let mut net = cfg.model(&mut Substreams::new(cfg.seed).stream("init", &[r]))?;
        for epoch in 0..cfg.epochs {
            let targets = noisy_targets_with_scale(
                &train.labels,
                cfg.num_classes,
                scale,
                root.stream("noise", &[r, epoch as u64]),
            )?;
            for start in (0..train.len() - cfg.batch_size + 1).step_by(cfg.batch_size) {
                let idx: Vec<usize> = (start..start + cfg.batch_size).collect();
                let g = net.backward_clipped(
                    &train.features.gather_rows(&idx),
                    &targets.gather_rows(&idx),
                    cfg.clip,
                )?;
                net = net.sgd_step(&g, cfg.lr)?;
            }
        }
        total += net.accuracy(&test.features, &test.labels)?;
    }
    Ok(total / cfg.accuracy_runs as f64)
}

/// ASR and accuracy at every scale of the grid.
pub fn asr_sweep(cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    let data_seed = Substreams::new(cfg.seed).child("data", &[u64::MAX]).seed();
    let (_, test) = synth_train_test(
        cfg.num_classes,
        cfg.test_size,
        cfg.num_classes,
        cfg.dim,
        data_seed,
    )?;
    cfg.noise_grid
        .iter()
        .enumerate()
        .map(|(point, &b)| {
            let results = attack_trials(cfg, &test, b, point)?;
            let hits = results.iter().filter(|r| r.success).count();
            Ok(SweepPoint {
                noise_scale: b,
                asr_pct: 100.0 * hits as f64 / results.len() as f64,
                accuracy_pct: noisy_label_accuracy(cfg, b, point)?,
                trials: results.len(),
            })
        })
        .collect()
}

/// Smallest scale whose ASR is at most `2/k` while accuracy stays within
/// `max_drop` points of the first (noise-free) point.
pub fn noise_threshold(points: &[SweepPoint], num_classes: usize, max_drop: f64) -> Option<f64> {
    let base = points.first()?.accuracy_pct;
    points
        .iter()
        .find(|p| p.asr_pct <= 200.0 / num_classes as f64 && base - p.accuracy_pct <= max_drop)
        .map(|p| p.noise_scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_negative_entry_wins() {
        let cap = GradientCapture {
            logit_gradient: vec![0.2, -0.8, 0.6],
            true_label: 1,
            batch_size: 1,
        };
        assert_eq!(infer_label(&cap).unwrap(), 1);
    }

    #[test]
    fn batches_are_unsupported() {
        let cap = GradientCapture {
            logit_gradient: vec![0.1; 6],
            true_label: 0,
            batch_size: 2,
        };
        assert!(matches!(infer_label(&cap), Err(Error::Unsupported(_))));
    }

    #[test]
    fn few_trials_are_rejected() {
        let cfg = SweepConfig {
            trials: 99,
            ..SweepConfig::default()
        };
        assert!(asr_sweep(&cfg).is_err());
    }
}
