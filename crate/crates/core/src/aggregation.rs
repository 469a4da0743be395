//! Weight-space aggregation.
//!
//! Every variant reduces client vectors with the same [`Combine`] rule, so a
//! variant only decides *what* each client contributes and how the result
//! turns into the next global model. Variants with auxiliary state (control
//! variates, drift) keep it in [`AggregatorState`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub weights: Vec<f64>,
    pub sample_count: usize,
    pub client_id: usize,
    pub round: usize,
    /// Local SGD steps taken to produce `weights`.
    #[serde(default)]
    pub local_steps: usize,
}

impl ModelUpdate {
    pub fn new(client_id: usize, weights: Vec<f64>, sample_count: usize) -> ModelUpdate {
        ModelUpdate {
            weights,
            sample_count,
            client_id,
            round: 0,
            local_steps: 0,
        }
    }
}

/// How client vectors are reduced to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Sample-weighted mean over all clients.
    #[default]
    Weighted,
    /// Plain mean within each edge, then plain mean over edges.
    Hierarchical,
    /// Sample-weighted at both tiers; equals [`Combine::Weighted`].
    HierarchicalWeighted,
}

fn check_lengths<'a>(vectors: impl Iterator<Item = &'a [f64]>) -> Result<usize> {
    let mut len = None;
    let mut any = false;
    for v in vectors {
        any = true;
        match len {
            None => len = Some(v.len()),
            Some(n) if n != v.len() => {
                return Err(Error::Aggregation(format!(
                    "update of length {} among length {n}",
                    v.len()
                )));
            }
            _ => {}
        }
    }
    if !any {
        return Err(Error::Aggregation("no updates to aggregate".into()));
    }
    Ok(len.unwrap_or(0))
}

fn weighted_mean(vectors: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let n = check_lengths(vectors.iter().copied())?;
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Aggregation("total weight must be positive".into()));
    }
    let mut out = vec![0.0; n];
    for (v, w) in vectors.iter().zip(weights) {
        let c = w / total;
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += c * x);
    }
    Ok(out)
}

fn plain_mean(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let n = check_lengths(vectors.iter().copied())?;
    let mut out = vec![0.0; n];
    for v in vectors {
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += x);
    }
    let inv = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= inv);
    Ok(out)
}

/// `sum_k (d_k / d) W_k`.
pub fn fedavg(updates: &[ModelUpdate]) -> Result<Vec<f64>> {
    if updates.iter().any(|u| u.sample_count == 0) {
        return Err(Error::Aggregation("update with zero samples".into()));
    }
    let vectors: Vec<&[f64]> = updates.iter().map(|u| u.weights.as_slice()).collect();
    let weights: Vec<f64> = updates.iter().map(|u| u.sample_count as f64).collect();
    weighted_mean(&vectors, &weights)
}

/// Edge-level plain mean followed by a central plain mean over edges.
pub fn hierarchical_aggregate(groups: &[Vec<ModelUpdate>]) -> Result<Vec<f64>> {
    let edge_means = groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                return Err(Error::Aggregation("edge group without clients".into()));
            }
            plain_mean(&g.iter().map(|u| u.weights.as_slice()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    plain_mean(&edge_means.iter().map(Vec::as_slice).collect::<Vec<_>>())
}

/// Sample-weighted at both tiers; each edge carries its clients' total count.
pub fn hierarchical_aggregate_weighted(groups: &[Vec<ModelUpdate>]) -> Result<Vec<f64>> {
    let mut means = Vec::with_capacity(groups.len());
    let mut counts = Vec::with_capacity(groups.len());
    for g in groups {
        if g.is_empty() {
            return Err(Error::Aggregation("edge group without clients".into()));
        }
        means.push(fedavg(g)?);
        counts.push(g.iter().map(|u| u.sample_count as f64).sum::<f64>());
    }
    weighted_mean(
        &means.iter().map(Vec::as_slice).collect::<Vec<_>>(),
        &counts,
    )
}

impl Combine {
    /// Reduces one vector per client, grouped by edge.
    pub fn apply(self, groups: &[Vec<ModelUpdate>]) -> Result<Vec<f64>> {
        if groups.is_empty() {
            return Err(Error::Aggregation("no updates to aggregate".into()));
        }
        match self {
            Combine::Weighted => fedavg(&groups.concat()),
            Combine::Hierarchical => hierarchical_aggregate(groups),
            Combine::HierarchicalWeighted => hierarchical_aggregate_weighted(groups),
        }
    }

    fn apply_scalar(
        self,
        groups: &[Vec<ModelUpdate>],
        value: impl Fn(&ModelUpdate) -> f64,
    ) -> Result<f64> {
        let lifted: Vec<Vec<ModelUpdate>> = groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|u| ModelUpdate {
                        weights: vec![value(u)],
                        ..u.clone()
                    })
                    .collect()
            })
            .collect();
        Ok(self.apply(&lifted)?[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AggregatorKind {
    #[default]
    FedAvg,
    /// Proximal term `mu/2 |w - w_g|^2`.
    FedProx {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// Control variates `c`, `c_i`. With `update_variates = false` they stay
    /// at zero.
    Scaffold {
        #[serde(default = "yes")]
        update_variates: bool,
    },
    /// Updates normalized by each client's local step count.
    FedNova,
    /// Local drift `h_i` with penalty `alpha/2 |theta + h_i - w|^2` and the
    /// gradient-gap term. `frozen` keeps the drift and gap at zero.
    FedDc {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        frozen: bool,
    },
}

fn default_mu() -> f64 {
    0.01
}

fn default_alpha() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

impl AggregatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::FedAvg => "fedavg",
            AggregatorKind::FedProx { .. } => "fedprox",
            AggregatorKind::Scaffold { .. } => "scaffold",
            AggregatorKind::FedNova => "fednova",
            AggregatorKind::FedDc { .. } => "feddc",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AggregatorKind::FedProx { mu } if !(mu >= 0.0 && mu.is_finite()) => Err(
                Error::InvalidArgument(format!("FedProx mu must be >= 0, got {mu}")),
            ),
            AggregatorKind::FedDc { alpha, .. } if !(alpha >= 0.0 && alpha.is_finite()) => Err(
                Error::InvalidArgument(format!("FedDC alpha must be >= 0, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    /// Default-parameter variant by name.
    fn from_str(s: &str) -> Result<AggregatorKind> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(AggregatorKind::FedAvg),
            "fedprox" => Ok(AggregatorKind::FedProx { mu: default_mu() }),
            "scaffold" => Ok(AggregatorKind::Scaffold {
                update_variates: true,
            }),
            "fednova" => Ok(AggregatorKind::FedNova),
            "feddc" => Ok(AggregatorKind::FedDc {
                alpha: default_alpha(),
                frozen: false,
            }),
            _ => Err(Error::InvalidArgument(format!("unknown aggregator {s:?}"))),
        }
    }
}

/// Global model plus per-client auxiliary vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorState {
    pub kind: AggregatorKind,
    pub global: Vec<f64>,
    /// Client learning rate, needed by Scaffold and FedDC.
    pub lr: f64,
    pub round: usize,
    /// Scaffold server variate `c`.
    pub control: Vec<f64>,
    /// Scaffold client variates `c_i`.
    pub client_control: Vec<Vec<f64>>,
    /// FedDC drift `h_i`.
    pub drift: Vec<Vec<f64>>,
    /// FedDC last local update `g_i` and its mean `g`.
    pub last_update: Vec<Vec<f64>>,
    pub mean_update: Vec<f64>,
}

impl AggregatorState {
    pub fn new(
        kind: AggregatorKind,
        global: Vec<f64>,
        num_clients: usize,
        lr: f64,
    ) -> Result<AggregatorState> {
        kind.validate()?;
        if num_clients == 0 {
            return Err(Error::InvalidArgument("need at least one client".into()));
        }
        let n = global.len();
        let per_client = |on: bool| {
            if on {
                vec![vec![0.0; n]; num_clients]
            } else {
                Vec::new()
            }
        };
        let scaffold = matches!(kind, AggregatorKind::Scaffold { .. });
        let feddc = matches!(kind, AggregatorKind::FedDc { .. });
        Ok(AggregatorState {
            kind,
            lr,
            round: 0,
            control: if scaffold { vec![0.0; n] } else { Vec::new() },
            client_control: per_client(scaffold),
            drift: per_client(feddc),
            last_update: per_client(feddc),
            mean_update: if feddc { vec![0.0; n] } else { Vec::new() },
            global,
        })
    }

    /// The additive gradient term a variant injects into every local step of
    /// client `client`, given its current local weights and its number of
    /// local steps per round. `None` when the term is identically zero for
    /// this configuration.
    pub fn local_objective_hook(
        &self,
        client: usize,
        local: &[f64],
        local_steps: usize,
    ) -> Result<Option<Vec<f64>>> {
        if local.len() != self.global.len() {
            return Err(Error::Aggregation(format!(
                "local weights of length {} vs global {}",
                local.len(),
                self.global.len()
            )));
        }
        match self.kind {
            AggregatorKind::FedAvg | AggregatorKind::FedNova => Ok(None),
            AggregatorKind::FedProx { mu } => {
                if mu == 0.0 {
                    return Ok(None);
                }
                Ok(Some(
                    local
                        .iter()
                        .zip(&self.global)
                        .map(|(w, g)| mu * (w - g))
                        .collect(),
                ))
            }
            AggregatorKind::Scaffold { update_variates } => {
                if !update_variates {
                    return Ok(None);
                }
                let ci = self.client_vec(&self.client_control, client)?;
                Ok(Some(
                    self.control.iter().zip(ci).map(|(c, ci)| c - ci).collect(),
                ))
            }
            AggregatorKind::FedDc { alpha, frozen } => {
                if frozen {
                    if alpha == 0.0 {
                        return Ok(None);
                    }
                    return Ok(Some(
                        local
                            .iter()
                            .zip(&self.global)
                            .map(|(w, g)| alpha * (w - g))
                            .collect(),
                    ));
                }
                let h = self.client_vec(&self.drift, client)?;
                let gi = self.client_vec(&self.last_update, client)?;
                let scale = 1.0 / (self.lr * local_steps.max(1) as f64);
                Ok(Some(
                    (0..local.len())
                        .map(|j| {
                            alpha * (local[j] + h[j] - self.global[j])
                                + (self.mean_update[j] - gi[j]) * scale
                        })
                        .collect(),
                ))
            }
        }
    }

    fn client_vec<'a>(&self, table: &'a [Vec<f64>], client: usize) -> Result<&'a [f64]> {
        table
            .get(client)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Aggregation(format!("unknown client {client}")))
    }

    /// Folds one round of client updates, grouped by edge, into the global
    /// model and returns it.
    pub fn aggregate(&mut self, groups: &[Vec<ModelUpdate>], combine: Combine) -> Result<&[f64]> {
        let n = self.global.len();
        check_lengths(groups.iter().flatten().map(|u| u.weights.as_slice()))?;
        if groups.iter().flatten().any(|u| u.weights.len() != n) {
            return Err(Error::Aggregation(
                "update length differs from the global model".into(),
            ));
        }
        let next = match self.kind {
            AggregatorKind::FedAvg | AggregatorKind::FedProx { .. } => combine.apply(groups)?,
            AggregatorKind::Scaffold { update_variates } => {
                let next = combine.apply(groups)?;
                if update_variates {
                    self.update_control(groups)?;
                }
                next
            }
            AggregatorKind::FedNova => {
                let normalized: Vec<Vec<ModelUpdate>> = groups
                    .iter()
                    .map(|g| {
                        g.iter()
                            .map(|u| {
                                let tau = u.local_steps.max(1) as f64;
                                ModelUpdate {
                                    weights: self
                                        .global
                                        .iter()
                                        .zip(&u.weights)
                                        .map(|(g, w)| (g - w) / tau)
                                        .collect(),
                                    ..u.clone()
                                }
                            })
                            .collect()
                    })
                    .collect();
                let direction = combine.apply(&normalized)?;
                let tau_eff = combine.apply_scalar(groups, |u| u.local_steps.max(1) as f64)?;
                self.global
                    .iter()
                    .zip(&direction)
                    .map(|(g, d)| g - tau_eff * d)
                    .collect()
            }
            AggregatorKind::FedDc { frozen, .. } => {
                if frozen {
                    combine.apply(groups)?
                } else {
                    let mut contributions = Vec::with_capacity(groups.len());
                    for g in groups {
                        let mut row = Vec::with_capacity(g.len());
                        for u in g {
                            let delta: Vec<f64> = u
                                .weights
                                .iter()
                                .zip(&self.global)
                                .map(|(w, g)| w - g)
                                .collect();
                            let h = self.drift.get_mut(u.client_id).ok_or_else(|| {
                                Error::Aggregation(format!("unknown client {}", u.client_id))
                            })?;
                            h.iter_mut().zip(&delta).for_each(|(h, d)| *h += d);
                            row.push(ModelUpdate {
                                weights: u
                                    .weights
                                    .iter()
                                    .zip(h.iter())
                                    .map(|(w, h)| w + h)
                                    .collect(),
                                ..u.clone()
                            });
                            self.last_update[u.client_id] = delta;
                        }
                        contributions.push(row);
                    }
                    let refs: Vec<&[f64]> = self.last_update.iter().map(Vec::as_slice).collect();
                    self.mean_update = plain_mean(&refs)?;
                    combine.apply(&contributions)?
                }
            }
        };
        self.global = next;
        self.round += 1;
        Ok(&self.global)
    }

    /// Option-II variate update: `c_i+ = c_i - c + (w_g - w_i) / (K lr)`,
    /// then `c += sum(c_i+ - c_i) / N` over all `N` known clients.
    fn update_control(&mut self, groups: &[Vec<ModelUpdate>]) -> Result<()> {
        let n = self.global.len();
        let mut delta_sum = vec![0.0; n];
        for u in groups.iter().flatten() {
            let steps = u.local_steps.max(1) as f64;
            let denom = steps * self.lr;
            if denom.is_nan() || denom <= 0.0 {
                return Err(Error::Aggregation(
                    "Scaffold needs a positive learning rate".into(),
                ));
            }
            let ci = self
                .client_control
                .get_mut(u.client_id)
                .ok_or_else(|| Error::Aggregation(format!("unknown client {}", u.client_id)))?;
            for j in 0..n {
                let next = ci[j] - self.control[j] + (self.global[j] - u.weights[j]) / denom;
                delta_sum[j] += next - ci[j];
                ci[j] = next;
            }
        }
        let total = self.client_control.len() as f64;
        self.control
            .iter_mut()
            .zip(&delta_sum)
            .for_each(|(c, d)| *c += d / total);
        Ok(())
    }
}
