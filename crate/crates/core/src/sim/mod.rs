//! Discrete-event protocol simulator.
//!
//! One epoch is a task graph: weight distribution, per-batch compute and
//! smashed-data relays, weight collection and (for edge methods) the
//! edge/central exchange. Tasks run as soon as their inputs are in and their
//! link is free; the epoch time is the finish time of the last task and its
//! breakdown is the per-component time along the critical path.
//!
//! Training runs the real networks alongside: each client trains its split of
//! the global model on its shard, the upper entity merges the parts, and the
//! aggregator folds the merged models into the next global model.

mod engine;
mod protocol;
mod schedule;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregatorKind, AggregatorState, Combine, ModelUpdate};
use crate::cost::{CostBreakdown, EpochLoad, Method, ModelProfile};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::labeldp::{noisy_targets, NoiseConfig};
use crate::nn::NetworkSpec;
use crate::rng::Substreams;
use crate::scenario::Scenario;
use crate::split::{profile, profile_intact, split, SplitMode, SplitPlan, StepOptions};

pub use protocol::{check_message, Endpoint, MessageKind, PrivacyEvent, ProtocolMessage, Topology};

/// Simulated timing of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTiming {
    pub cost: CostBreakdown,
    /// Work along the critical path.
    pub load: EpochLoad,
    /// Every message sent, in send order, with its enqueue time.
    pub messages: Vec<ProtocolMessage>,
}

impl EpochTiming {
    pub fn tally(&self) -> BTreeMap<MessageKind, MessageTally> {
        let mut out: BTreeMap<MessageKind, MessageTally> = BTreeMap::new();
        for m in &self.messages {
            let t = out.entry(m.kind).or_default();
            t.count += 1;
            t.bytes += m.bytes;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MessageTally {
    pub count: u64,
    pub bytes: u64,
}

/// Times one epoch of `method` with every client running `profile.batches`
/// batches, without training anything.
pub fn simulate_epoch_time(
    method: Method,
    profile: &ModelProfile,
    scenario: &Scenario,
) -> Result<EpochTiming> {
    let topology = Topology::from_scenario(scenario)?;
    simulate_epoch_with(
        method,
        profile,
        scenario,
        &topology,
        &vec![profile.batches; topology.num_clients()],
    )
}

/// [`simulate_epoch_time`] for an explicit topology and per-client batch counts.
pub fn simulate_epoch_with(
    method: Method,
    profile: &ModelProfile,
    scenario: &Scenario,
    topology: &Topology,
    batches: &[usize],
) -> Result<EpochTiming> {
    let tasks = schedule::build(method, profile, scenario, topology, batches)?;
    let out = engine::execute(&tasks);
    let [client, edge, central, ce, es, cs] = out.path_time;
    let w = out.path_work;
    Ok(EpochTiming {
        cost: CostBreakdown {
            client_compute_s: client,
            edge_compute_s: edge,
            central_compute_s: central,
            ce_transfer_s: ce,
            es_transfer_s: es,
            cs_transfer_s: cs,
            total_s: out.finish,
            one_time_s: 0.0,
        },
        load: EpochLoad {
            client_flops: w[0],
            edge_flops: w[1],
            central_flops: w[2],
            ce_bytes: w[3],
            es_bytes: w[4],
            cs_bytes: w[5],
            one_time_cs_bytes: 0.0,
        },
        messages: out.messages,
    })
}

/// Whether noisy targets are redrawn every epoch or drawn once per client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    #[default]
    PerEpoch,
    Fixed,
}

fn default_lr() -> f64 {
    0.05
}

fn default_batch() -> usize {
    16
}

fn default_epochs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    #[serde(default)]
    pub aggregator: AggregatorKind,
    /// Defaults to [`Combine::Hierarchical`] for edge methods and
    /// [`Combine::Weighted`] otherwise.
    #[serde(default)]
    pub combine: Option<Combine>,
    /// Layer cuts `(c1, c2)`; vertical methods use `c1` only. Defaults to
    /// `(1, layers - 1)`.
    #[serde(default)]
    pub cuts: Option<(usize, usize)>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Per-row bound on the logit gradient. Set it when `epsilon` is finite:
    /// a noisy label whose sum lands near zero has huge entries.
    #[serde(default)]
    pub clip: Option<f64>,
    /// LabelDP budget; `None` or infinity trains on clean one-hot labels.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub noise_schedule: NoiseSchedule,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            aggregator: AggregatorKind::FedAvg,
            combine: None,
            cuts: None,
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            clip: None,
            epsilon: None,
            noise_schedule: NoiseSchedule::PerEpoch,
            seed: 0,
        }
    }

    pub fn combine(&self) -> Combine {
        self.combine.unwrap_or(if self.method.uses_edge() {
            Combine::Hierarchical
        } else {
            Combine::Weighted
        })
    }

    /// The split plan for `net`, or `None` for non-split methods.
    pub fn plan(&self, net: &NetworkSpec) -> Result<Option<SplitPlan>> {
        let (c1, c2) = self
            .cuts
            .unwrap_or((1, net.layer_count().saturating_sub(1)));
        let plan = match self.method.split_mode() {
            None => return Ok(None),
            Some(SplitMode::UShaped) => SplitPlan::u_shaped(c1, c2),
            Some(SplitMode::Vertical) => SplitPlan::vertical(c1),
        };
        plan.validate(net.layer_count())?;
        Ok(Some(plan))
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Dl {
            return Err(Error::Unsupported(
                "the simulator runs the federated methods only".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if let Some(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "clip must be positive, got {c}"
                )));
            }
        }
        if let Some(e) = self.epsilon {
            if e.is_nan() || e <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "epsilon must be > 0, got {e}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Held-out accuracy of the aggregated model, in percent.
    pub accuracy: f64,
    pub cost: CostBreakdown,
    pub load: EpochLoad,
    pub messages: BTreeMap<MessageKind, MessageTally>,
    pub privacy_events: Vec<PrivacyEvent>,
}

/// One CSV row per epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub method: Method,
    pub accuracy: f64,
    pub client_s: f64,
    pub edge_s: f64,
    pub central_s: f64,
    pub transfer_s: f64,
    pub total_s: f64,
}

/// Run totals in the layout of the reference cost tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub epochs: usize,
    pub client_compute_s: f64,
    pub edge_compute_s: f64,
    pub central_compute_s: f64,
    pub ce_transfer_s: f64,
    pub es_transfer_s: f64,
    pub cs_transfer_s: f64,
    pub total_s: f64,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochReport>,
    pub final_weights: Vec<f64>,
}

impl RunReport {
    pub fn rows(&self) -> Vec<EpochRow> {
        self.epochs
            .iter()
            .map(|e| EpochRow {
                epoch: e.epoch,
                method: self.config.method,
                accuracy: e.accuracy,
                client_s: e.cost.client_compute_s,
                edge_s: e.cost.edge_compute_s,
                central_s: e.cost.central_compute_s,
                transfer_s: e.cost.transfer_s(),
                total_s: e.cost.total_s,
            })
            .collect()
    }

    pub fn summary(&self) -> SummaryRow {
        let sum =
            |f: fn(&CostBreakdown) -> f64| self.epochs.iter().map(|e| f(&e.cost)).sum::<f64>();
        SummaryRow {
            method: self.config.method,
            epochs: self.epochs.len(),
            client_compute_s: sum(|c| c.client_compute_s),
            edge_compute_s: sum(|c| c.edge_compute_s),
            central_compute_s: sum(|c| c.central_compute_s),
            ce_transfer_s: sum(|c| c.ce_transfer_s),
            es_transfer_s: sum(|c| c.es_transfer_s),
            cs_transfer_s: sum(|c| c.cs_transfer_s),
            total_s: sum(|c| c.total_s),
            final_accuracy: self.epochs.last().map_or(0.0, |e| e.accuracy),
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.accuracy).collect()
    }

    pub fn privacy_events(&self) -> impl Iterator<Item = &PrivacyEvent> {
        self.epochs.iter().flat_map(|e| &e.privacy_events)
    }
}

/// A training run in progress.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: TrainConfig,
    scenario: Scenario,
    topology: Topology,
    shards: Vec<Dataset>,
    test: Dataset,
    global: NetworkSpec,
    plan: Option<SplitPlan>,
    state: AggregatorState,
    streams: Substreams,
    epoch: usize,
}

impl Simulation {
    /// `shards[c]` is client `c`'s training data; clients are assigned to
    /// edges per `topology`.
    pub fn new(
        cfg: TrainConfig,
        scenario: Scenario,
        topology: Topology,
        initial: NetworkSpec,
        shards: Vec<Dataset>,
        test: Dataset,
    ) -> Result<Simulation> {
        cfg.validate()?;
        scenario.validate()?;
        if shards.len() != topology.num_clients() {
            return Err(Error::Scenario(format!(
                "{} shards for {} clients",
                shards.len(),
                topology.num_clients()
            )));
        }
        for (c, s) in shards.iter().enumerate() {
            if s.len() < cfg.batch_size {
                return Err(Error::Scenario(format!(
                    "client {c} has {} examples, fewer than one batch of {}",
                    s.len(),
                    cfg.batch_size
                )));
            }
            if s.num_classes != initial.num_classes() {
                return Err(Error::Shape(format!(
                    "client {c} data has {} classes, model {}",
                    s.num_classes,
                    initial.num_classes()
                )));
            }
        }
        let plan = cfg.plan(&initial)?;
        let state = AggregatorState::new(
            cfg.aggregator,
            initial.flatten_params(),
            shards.len(),
            cfg.lr,
        )?;
        Ok(Simulation {
            streams: Substreams::new(cfg.seed),
            cfg,
            scenario,
            topology,
            shards,
            test,
            global: initial,
            plan,
            state,
            epoch: 0,
        })
    }

    pub fn global(&self) -> &NetworkSpec {
        &self.global
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn batches(&self, c: usize) -> usize {
        self.shards[c].len() / self.cfg.batch_size
    }

    fn profile(&self) -> Result<ModelProfile> {
        match self.plan {
            Some(plan) => profile(&self.global, plan, self.cfg.batch_size),
            None => profile_intact(&self.global, self.cfg.batch_size),
        }
    }

    fn targets(&self, c: usize) -> Result<crate::Tensor> {
        let shard = &self.shards[c];
        let k = shard.num_classes;
        let epoch = match self.cfg.noise_schedule {
            NoiseSchedule::PerEpoch => self.epoch,
            NoiseSchedule::Fixed => 0,
        };
        let rng = self.streams.stream("noise", &[c as u64, epoch as u64]);
        match self.cfg.epsilon.filter(|e| e.is_finite()) {
            Some(eps) => noisy_targets(
                &shard.labels,
                k,
                Some(&NoiseConfig::new(eps, k, self.cfg.seed)),
                rng,
            ),
            None => noisy_targets(&shard.labels, k, None, rng),
        }
    }

    /// One client's local round; returns its trained intact weights.
    fn train_client(&self, c: usize) -> Result<Vec<f64>> {
        let shard = &self.shards[c];
        let targets = self.targets(c)?;
        let bs = self.cfg.batch_size;
        let steps = self.batches(c);
        let mut order: Vec<usize> = (0..shard.len()).collect();
        order.shuffle(
            &mut self
                .streams
                .stream("shuffle", &[c as u64, self.epoch as u64]),
        );
        let batch = |i: usize| {
            let idx = &order[i * bs..(i + 1) * bs];
            (shard.features.gather_rows(idx), targets.gather_rows(idx))
        };
        match self.plan {
            None => {
                let mut net = self.global.clone();
                for i in 0..steps {
                    let (x, t) = batch(i);
                    let mut g = net.backward_clipped(&x, &t, self.cfg.clip)?;
                    if let Some(corr) =
                        self.state
                            .local_objective_hook(c, &net.flatten_params(), steps)?
                    {
                        g.add_flat(&corr)?;
                    }
                    net = net.sgd_step(&g, self.cfg.lr)?;
                }
                Ok(net.flatten_params())
            }
            Some(plan) => {
                let mut parts = split(&self.global, plan)?;
                for i in 0..steps {
                    let (x, t) = batch(i);
                    let local: Vec<f64> = parts
                        .iter()
                        .flat_map(|p| p.stack.flatten_params())
                        .collect();
                    let corr = self.state.local_objective_hook(c, &local, steps)?;
                    parts.train_step_with(
                        &x,
                        &t,
                        &StepOptions {
                            lr: self.cfg.lr,
                            batch_id: i as u64,
                            clip: self.cfg.clip,
                            correction: corr.as_deref(),
                        },
                    )?;
                }
                // The upper entity slots the returned parts into its merge
                // layer; the result must be a valid intact model.
                Ok(parts.merge()?.flatten_params())
            }
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        let p = self.profile()?;
        let batches: Vec<usize> = (0..self.shards.len()).map(|c| self.batches(c)).collect();
        let timing = simulate_epoch_with(
            self.cfg.method,
            &p,
            &self.scenario,
            &self.topology,
            &batches,
        )?;

        let mut groups = Vec::with_capacity(self.topology.num_edges());
        for clients in self.topology.groups() {
            let mut row = Vec::with_capacity(clients.len());
            for c in clients {
                let mut u =
                    ModelUpdate::new(c, self.train_client(c)?, batches[c] * self.cfg.batch_size);
                u.round = self.epoch;
                u.local_steps = batches[c];
                row.push(u);
            }
            groups.push(row);
        }
        let next = self.state.aggregate(&groups, self.cfg.combine())?.to_vec();
        self.global.load_params(&next)?;
        let accuracy = self
            .global
            .accuracy(&self.test.features, &self.test.labels)?;

        let privacy_events = timing
            .messages
            .iter()
            .filter(|m| m.kind == MessageKind::Labels)
            .map(|m| PrivacyEvent {
                epoch: self.epoch,
                client: match m.src {
                    Endpoint::Client(c) => c,
                    _ => unreachable!("labels only leave clients"),
                },
                bytes: m.bytes,
                receiver: m.dst,
            })
            .collect();
        let report = EpochReport {
            epoch: self.epoch,
            accuracy,
            cost: timing.cost,
            load: timing.load,
            messages: timing.tally(),
            privacy_events,
        };
        self.epoch += 1;
        Ok(report)
    }
}

/// Trains for `cfg.epochs` epochs.
pub fn run_training(
    cfg: TrainConfig,
    scenario: Scenario,
    topology: Topology,
    initial: NetworkSpec,
    shards: Vec<Dataset>,
    test: Dataset,
) -> Result<RunReport> {
    let mut sim = Simulation::new(cfg.clone(), scenario, topology, initial, shards, test)?;
    let epochs = (0..cfg.epochs)
        .map(|_| sim.run_epoch())
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        final_weights: sim.global.flatten_params(),
        config: cfg,
        epochs,
    })
}
