//! Per-method task graphs for one epoch.

use crate::cost::{Method, ModelProfile};
use crate::error::{Error, Result};
use crate::scenario::{ClientSchedule, Scenario};
use crate::split::SplitMode;

use super::engine::{Leg, Task};
use super::protocol::{check_message, Endpoint, MessageKind, ProtocolMessage, Topology};

struct Builder {
    method: Method,
    ce_rate: f64,
    es_rate: f64,
    cs_rate: f64,
    tasks: Vec<Task>,
}

impl Builder {
    fn compute(&mut self, leg: Leg, flops: f64, rate: f64, after: usize) -> usize {
        self.tasks.push(Task {
            leg: Some(leg),
            duration: flops / rate,
            work: flops,
            deps: vec![after],
            link: None,
            message: None,
        });
        self.tasks.len() - 1
    }

    /// Queues a message after `deps`. Empty payloads are not sent.
    fn send(
        &mut self,
        kind: MessageKind,
        bytes: u64,
        src: Endpoint,
        dst: Endpoint,
        deps: Vec<usize>,
    ) -> Result<usize> {
        if bytes == 0 {
            return Ok(match deps.as_slice() {
                [one] => *one,
                _ => self.barrier(deps),
            });
        }
        let msg = ProtocolMessage {
            kind,
            bytes,
            src,
            dst,
            enqueue_time: 0.0,
        };
        check_message(self.method, &msg)?;
        let (leg, rate) = match (src, dst) {
            (Endpoint::Client(_), Endpoint::Edge(_)) | (Endpoint::Edge(_), Endpoint::Client(_)) => {
                (Leg::CeTransfer, self.ce_rate)
            }
            (Endpoint::Edge(_), Endpoint::Central) | (Endpoint::Central, Endpoint::Edge(_)) => {
                (Leg::EsTransfer, self.es_rate)
            }
            _ => (Leg::CsTransfer, self.cs_rate),
        };
        self.tasks.push(Task {
            leg: Some(leg),
            duration: bytes as f64 / rate,
            work: bytes as f64,
            deps,
            link: Some(if src < dst { (src, dst) } else { (dst, src) }),
            message: Some(msg),
        });
        Ok(self.tasks.len() - 1)
    }

    fn barrier(&mut self, deps: Vec<usize>) -> usize {
        self.tasks.push(Task {
            leg: None,
            duration: 0.0,
            work: 0.0,
            deps,
            link: None,
            message: None,
        });
        self.tasks.len() - 1
    }
}

/// Builds the epoch's task graph. `profile` is per batch; `batches[c]` is
/// client `c`'s batch count. The last task is the end-of-epoch barrier.
pub(crate) fn build(
    method: Method,
    p: &ModelProfile,
    scenario: &Scenario,
    topology: &Topology,
    batches: &[usize],
) -> Result<Vec<Task>> {
    scenario.validate()?;
    if method == Method::Dl {
        return Err(Error::Unsupported(
            "centralized training has no protocol to simulate".into(),
        ));
    }
    if let Some(mode) = method.split_mode() {
        if mode != p.mode {
            return Err(Error::InvalidArgument(format!(
                "{method} needs a {mode:?} profile, got {:?}",
                p.mode
            )));
        }
    }
    let n = topology.num_clients();
    if batches.len() != n {
        return Err(Error::Scenario(format!(
            "{} batch counts for {n} clients",
            batches.len()
        )));
    }
    let assignment = topology.assignment();
    let edge_method = method.uses_edge();
    let split = method.split_mode();
    let fb = scenario.backward_flops_factor;
    let sequential = scenario.schedule == ClientSchedule::Sequential && split.is_some();

    // Static share of the upper entity's FLOPS per client.
    let upper_rate = |c: usize| -> f64 {
        let share = if sequential {
            1.0
        } else if edge_method {
            topology.clients_per_edge[assignment[c]] as f64
        } else {
            n as f64
        };
        if edge_method {
            scenario.edge.flops / share
        } else {
            scenario.central.flops / share
        }
    };
    let upper_of = |c: usize| {
        if edge_method {
            Endpoint::Edge(assignment[c])
        } else {
            Endpoint::Central
        }
    };
    let upper_leg = if edge_method {
        Leg::EdgeCompute
    } else {
        Leg::CentralCompute
    };
    let (down_bytes, up_bytes) = match split {
        None => (p.m(), p.m()),
        Some(SplitMode::Vertical) => (p.m1, p.m1),
        Some(SplitMode::UShaped) => (p.m1 + p.m3, p.m1 + p.m3),
    };

    let mut b = Builder {
        method,
        ce_rate: scenario.client_to_edge(),
        es_rate: scenario.edge_to_central(),
        cs_rate: scenario.client_to_central(),
        tasks: Vec::new(),
    };
    let edge_start: Vec<Option<usize>> = if edge_method {
        (0..topology.num_edges())
            .map(|e| {
                b.send(
                    MessageKind::GlobalWeights,
                    p.m(),
                    Endpoint::Central,
                    Endpoint::Edge(e),
                    vec![],
                )
                .map(Some)
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; topology.num_edges()]
    };

    let serial: Vec<Vec<usize>> = if !sequential {
        (0..n).map(|c| vec![c]).collect()
    } else if edge_method {
        topology.groups()
    } else {
        vec![(0..n).collect()]
    };
    let mut client_end = vec![0; n];
    for group in serial {
        let mut prev: Option<usize> = None;
        for c in group {
            let me = Endpoint::Client(c);
            let up = upper_of(c);
            let deps: Vec<usize> = edge_start[assignment[c]].into_iter().chain(prev).collect();
            let mut last = b.send(MessageKind::GlobalWeights, down_bytes, up, me, deps)?;
            let urate = upper_rate(c);
            let pc = scenario.client.flops;
            for _ in 0..batches[c] {
                match split {
                    None => {
                        last = b.compute(Leg::ClientCompute, p.flops_total(), pc, last);
                        last = b.compute(Leg::ClientCompute, p.flops_total() * fb, pc, last);
                    }
                    Some(SplitMode::Vertical) => {
                        last = b.compute(Leg::ClientCompute, p.flops_front, pc, last);
                        let fwd = b.send(MessageKind::SmashedFwd, p.d1, me, up, vec![last])?;
                        let labels =
                            b.send(MessageKind::Labels, p.label_bytes, me, up, vec![fwd])?;
                        last = b.compute(upper_leg, p.flops_middle, urate, labels);
                        last = b.compute(upper_leg, p.flops_middle * fb, urate, last);
                        last = b.send(MessageKind::SmashedGrad, p.d1, up, me, vec![last])?;
                        last = b.compute(Leg::ClientCompute, p.flops_front * fb, pc, last);
                    }
                    Some(SplitMode::UShaped) => {
                        last = b.compute(Leg::ClientCompute, p.flops_front, pc, last);
                        last = b.send(MessageKind::SmashedFwd, p.d1, me, up, vec![last])?;
                        last = b.compute(upper_leg, p.flops_middle, urate, last);
                        last = b.send(MessageKind::SmashedFwd, p.d2, up, me, vec![last])?;
                        last = b.compute(Leg::ClientCompute, p.flops_rear * (1.0 + fb), pc, last);
                        last = b.send(MessageKind::SmashedGrad, p.d2, me, up, vec![last])?;
                        last = b.compute(upper_leg, p.flops_middle * fb, urate, last);
                        last = b.send(MessageKind::SmashedGrad, p.d1, up, me, vec![last])?;
                        last = b.compute(Leg::ClientCompute, p.flops_front * fb, pc, last);
                    }
                }
            }
            last = b.send(MessageKind::PartWeights, up_bytes, me, up, vec![last])?;
            client_end[c] = last;
            prev = Some(last);
        }
    }

    let finals: Vec<usize> = if edge_method {
        topology
            .groups()
            .into_iter()
            .enumerate()
            .map(|(e, clients)| {
                let deps = clients.iter().map(|&c| client_end[c]).collect();
                b.send(
                    MessageKind::MergedWeights,
                    p.m(),
                    Endpoint::Edge(e),
                    Endpoint::Central,
                    deps,
                )
            })
            .collect::<Result<_>>()?
    } else {
        client_end
    };
    b.barrier(finals);
    Ok(b.tasks)
}
