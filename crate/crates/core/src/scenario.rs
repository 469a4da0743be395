//! Compute and link capabilities of the three entity tiers.
//!
//! Link rates are **bytes per second**. The reference setups quote rates as
//! "kb/s" and "MB/s"; reading both as 10^3 and 10^6 bytes per second is the
//! only interpretation under which the published transfer times divide out
//! exactly (54,880,000 B / 20,000 B/s = 2744.00 s).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Client,
    Edge,
    Central,
}

/// One entity tier: compute speed and symmetric link rates to its peers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub role: Role,
    /// FLOP/s.
    pub flops: f64,
    /// Bytes/s to an edge server (clients only).
    #[serde(default)]
    pub rate_to_edge: Option<f64>,
    /// Bytes/s to the central server (clients and edges).
    #[serde(default)]
    pub rate_to_central: Option<f64>,
}

/// How clients that share an upper entity are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientSchedule {
    /// Clients train concurrently; the shared upper entity's FLOPS are split
    /// evenly among them.
    #[default]
    Parallel,
    /// Clients are served one after another at full upper-entity FLOPS.
    Sequential,
}

/// A capability that sensitivity sweeps scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    ClientFlops,
    EdgeFlops,
    /// All three link rates together.
    Rate,
}

impl Knob {
    pub const ALL: [Knob; 3] = [Knob::ClientFlops, Knob::EdgeFlops, Knob::Rate];

    pub fn name(self) -> &'static str {
        match self {
            Knob::ClientFlops => "client_flops",
            Knob::EdgeFlops => "edge_flops",
            Knob::Rate => "rate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub client: EntitySpec,
    pub edge: EntitySpec,
    pub central: EntitySpec,
    pub num_edges: usize,
    pub clients_per_edge: usize,
    #[serde(default)]
    pub schedule: ClientSchedule,
    /// Extra FLOPs charged for the backward pass as a multiple of the forward
    /// FLOPs. 0 charges forward FLOPs only; 2 is the usual training estimate.
    #[serde(default)]
    pub backward_flops_factor: f64,
}

impl Scenario {
    pub fn new(
        client_flops: f64,
        client_to_edge: f64,
        client_to_central: f64,
        edge_flops: f64,
        edge_to_central: f64,
        central_flops: f64,
    ) -> Scenario {
        Scenario {
            client: EntitySpec {
                role: Role::Client,
                flops: client_flops,
                rate_to_edge: Some(client_to_edge),
                rate_to_central: Some(client_to_central),
            },
            edge: EntitySpec {
                role: Role::Edge,
                flops: edge_flops,
                rate_to_edge: None,
                rate_to_central: Some(edge_to_central),
            },
            central: EntitySpec {
                role: Role::Central,
                flops: central_flops,
                rate_to_edge: None,
                rate_to_central: None,
            },
            num_edges: 1,
            clients_per_edge: 1,
            schedule: ClientSchedule::Parallel,
            backward_flops_factor: 0.0,
        }
    }

    /// IoT setup: 400k/8M/12M FLOPS; 408 kB/s client-edge, 20 kB/s
    /// client-central, 12 MB/s edge-central.
    pub fn setup1() -> Scenario {
        Scenario::new(400e3, 408e3, 20e3, 8e6, 12e6, 12e6)
    }

    /// Camera setup: 1G/20G/30G FLOPS; 8 MB/s client-edge, 100 kB/s
    /// client-central, 12 MB/s edge-central.
    pub fn setup2() -> Scenario {
        Scenario::new(1e9, 8e6, 100e3, 20e9, 12e6, 30e9)
    }

    pub fn preset(name: &str) -> Option<Scenario> {
        match name {
            "setup1" => Some(Scenario::setup1()),
            "setup2" => Some(Scenario::setup2()),
            _ => None,
        }
    }

    pub fn with_topology(mut self, num_edges: usize, clients_per_edge: usize) -> Scenario {
        self.num_edges = num_edges;
        self.clients_per_edge = clients_per_edge;
        self
    }

    pub fn total_clients(&self) -> usize {
        self.num_edges * self.clients_per_edge
    }

    pub fn client_to_edge(&self) -> f64 {
        self.client.rate_to_edge.unwrap_or(0.0)
    }

    pub fn client_to_central(&self) -> f64 {
        self.client.rate_to_central.unwrap_or(0.0)
    }

    pub fn edge_to_central(&self) -> f64 {
        self.edge.rate_to_central.unwrap_or(0.0)
    }

    /// A copy with `knob` multiplied by `factor`.
    pub fn scaled(&self, knob: Knob, factor: f64) -> Scenario {
        let mut s = self.clone();
        let mul = |r: &mut Option<f64>| *r = r.map(|v| v * factor);
        match knob {
            Knob::ClientFlops => s.client.flops *= factor,
            Knob::EdgeFlops => s.edge.flops *= factor,
            Knob::Rate => {
                mul(&mut s.client.rate_to_edge);
                mul(&mut s.client.rate_to_central);
                mul(&mut s.edge.rate_to_central);
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("client.flops", self.client.flops),
            ("client.rate_to_edge", self.client_to_edge()),
            ("client.rate_to_central", self.client_to_central()),
            ("edge.flops", self.edge.flops),
            ("edge.rate_to_central", self.edge_to_central()),
            ("central.flops", self.central.flops),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Scenario(format!("{name} must be positive, got {v}")));
            }
        }
        if self.num_edges == 0 || self.clients_per_edge == 0 {
            return Err(Error::Scenario(
                "topology needs at least one edge and one client per edge".into(),
            ));
        }
        if !(self.backward_flops_factor >= 0.0 && self.backward_flops_factor.is_finite()) {
            return Err(Error::Scenario("backward_flops_factor must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Scenario::setup1().validate().unwrap();
        Scenario::setup2().validate().unwrap();
        assert!(Scenario::preset("setup3").is_none());
    }

    #[test]
    fn zero_rate_is_rejected() {
        let mut s = Scenario::setup1();
        s.client.rate_to_edge = Some(0.0);
        assert!(matches!(s.validate(), Err(Error::Scenario(_))));
    }
}
