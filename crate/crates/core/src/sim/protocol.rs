use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::Method;
use crate::error::{Error, Result};
use crate::scenario::{Role, Scenario};
use crate::split::SplitMode;

/// Which clients hang off which edge server. Client ids are assigned
/// contiguously: edge 0 owns clients `0..clients_per_edge[0]`, and so on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub clients_per_edge: Vec<usize>,
}

impl Topology {
    pub fn new(clients_per_edge: Vec<usize>) -> Result<Topology> {
        if clients_per_edge.is_empty() || clients_per_edge.contains(&0) {
            return Err(Error::Scenario(format!(
                "every edge needs at least one client, got {clients_per_edge:?}"
            )));
        }
        Ok(Topology { clients_per_edge })
    }

    pub fn uniform(num_edges: usize, clients_per_edge: usize) -> Result<Topology> {
        Topology::new(vec![clients_per_edge; num_edges])
    }

    pub fn from_scenario(s: &Scenario) -> Result<Topology> {
        Topology::uniform(s.num_edges, s.clients_per_edge)
    }

    pub fn num_edges(&self) -> usize {
        self.clients_per_edge.len()
    }

    pub fn num_clients(&self) -> usize {
        self.clients_per_edge.iter().sum()
    }

    /// `assignment()[client]` is the client's edge.
    pub fn assignment(&self) -> Vec<usize> {
        self.clients_per_edge
            .iter()
            .enumerate()
            .flat_map(|(e, &n)| std::iter::repeat_n(e, n))
            .collect()
    }

    /// Client ids grouped by edge.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut at = 0;
        self.clients_per_edge
            .iter()
            .map(|&n| {
                at += n;
                (at - n..at).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Client(usize),
    Edge(usize),
    Central,
}

impl Endpoint {
    pub fn role(self) -> Role {
        match self {
            Endpoint::Client(_) => Role::Client,
            Endpoint::Edge(_) => Role::Edge,
            Endpoint::Central => Role::Central,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Client(i) => write!(f, "client{i}"),
            Endpoint::Edge(i) => write!(f, "edge{i}"),
            Endpoint::Central => f.write_str("central"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    SmashedFwd,
    SmashedGrad,
    PartWeights,
    MergedWeights,
    GlobalWeights,
    /// Raw labels for the loss-computing server; only vertical splits send
    /// them, and each one is logged as a privacy event.
    Labels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub bytes: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub enqueue_time: f64,
}

/// A label transmission, recorded whenever a vertical split sends labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyEvent {
    pub epoch: usize,
    pub client: usize,
    pub bytes: u64,
    pub receiver: Endpoint,
}

/// Checks each message against the protocol before it is sent.
pub fn check_message(method: Method, msg: &ProtocolMessage) -> Result<()> {
    use MessageKind::*;
    use Role::*;
    if msg.bytes == 0 {
        return Err(Error::ProtocolViolation(format!(
            "{:?} message with empty payload",
            msg.kind
        )));
    }
    if msg.kind == Labels && method.split_mode() != Some(SplitMode::Vertical) {
        return Err(Error::ProtocolViolation(format!(
            "{method} must never transmit labels ({} -> {})",
            msg.src, msg.dst
        )));
    }
    let (s, d) = (msg.src.role(), msg.dst.role());
    let upper = if method.uses_edge() { Edge } else { Central };
    let split = method.split_mode().is_some();
    let legal = match msg.kind {
        SmashedFwd | SmashedGrad => {
            split && ((s, d) == (Client, upper) || (s, d) == (upper, Client))
        }
        Labels | PartWeights => (s, d) == (Client, upper),
        MergedWeights => method.uses_edge() && (s, d) == (Edge, Central),
        GlobalWeights => {
            (s, d) == (upper, Client) || (method.uses_edge() && (s, d) == (Central, Edge))
        }
    };
    if !legal {
        return Err(Error::ProtocolViolation(format!(
            "{method} cannot send {:?} from {} to {}",
            msg.kind, msg.src, msg.dst
        )));
    }
    Ok(())
}
