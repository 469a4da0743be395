//! Closed-form epoch times.
//!
//! Every method is an additive sum of compute legs (`FLOPs / FLOPS`) and
//! transfer legs (`bytes / rate`), with no overlap between phases. The
//! simulator charges exactly the same legs message by message, so both agree.

mod tables;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ClientSchedule, Scenario};
use crate::split::SplitMode;

pub use tables::{
    reproduce_table, thousands, ReferenceTable, Setup, Setup1Row, Setup2Row, TableCell,
    REFERENCE_EPOCHS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dl,
    Fl,
    Sfl,
    Usfl,
    Efl,
    Esfl,
    Eusfl,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Dl,
        Method::Fl,
        Method::Sfl,
        Method::Usfl,
        Method::Efl,
        Method::Esfl,
        Method::Eusfl,
    ];

    /// The six distributed methods the simulator runs.
    pub const FEDERATED: [Method; 6] = [
        Method::Fl,
        Method::Sfl,
        Method::Usfl,
        Method::Efl,
        Method::Esfl,
        Method::Eusfl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dl => "DL",
            Method::Fl => "FL",
            Method::Sfl => "SFL",
            Method::Usfl => "USFL",
            Method::Efl => "EFL",
            Method::Esfl => "ESFL",
            Method::Eusfl => "EUSFL",
        }
    }

    pub fn uses_edge(self) -> bool {
        matches!(self, Method::Efl | Method::Esfl | Method::Eusfl)
    }

    /// `None` for methods that train the intact model.
    pub fn split_mode(self) -> Option<SplitMode> {
        match self {
            Method::Sfl | Method::Esfl => Some(SplitMode::Vertical),
            Method::Usfl | Method::Eusfl => Some(SplitMode::UShaped),
            _ => None,
        }
    }

    /// Number of clients sharing the entity that runs the offloaded part.
    pub(crate) fn sharing_group(self, scenario: &Scenario) -> usize {
        match self {
            Method::Esfl | Method::Eusfl => scenario.clients_per_edge,
            Method::Sfl | Method::Usfl => scenario.total_clients(),
            _ => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Sizes and per-batch costs of one split of a network.
///
/// Parameter sizes are bytes. FLOPs and smashed-data volumes are per batch;
/// `batches` is the number of batches a client runs per epoch. For vertical
/// plans the server-side tail is reported as `m2`/`flops_middle` and the
/// rear fields are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub mode: SplitMode,
    pub m1: u64,
    pub m2: u64,
    pub m3: u64,
    pub flops_front: f64,
    pub flops_middle: f64,
    pub flops_rear: f64,
    pub d1: u64,
    pub d2: u64,
    /// Label bytes per batch (sent upward by vertical methods).
    pub label_bytes: u64,
    /// Raw feature bytes per batch (sent by centralized training).
    pub input_bytes: u64,
    pub batch_size: usize,
    pub batches: usize,
}

impl ModelProfile {
    pub fn with_batches(mut self, batches: usize) -> ModelProfile {
        self.batches = batches;
        self
    }

    pub fn m(&self) -> u64 {
        self.m1 + self.m2 + self.m3
    }

    /// Client-side FLOPs per batch.
    pub fn flops_c(&self) -> f64 {
        self.flops_front + self.flops_rear
    }

    /// Offloaded FLOPs per batch.
    pub fn flops_e(&self) -> f64 {
        self.flops_middle
    }

    pub fn flops_total(&self) -> f64 {
        self.flops_c() + self.flops_e()
    }

    fn check(&self, method: Method) -> Result<()> {
        if let Some(mode) = method.split_mode() {
            if mode != self.mode {
                return Err(Error::InvalidArgument(format!(
                    "{method} needs a {mode:?} profile, got {:?}",
                    self.mode
                )));
            }
        }
        let flops = [self.flops_front, self.flops_middle, self.flops_rear];
        if flops.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(Error::InvalidArgument(
                "profile FLOPs must be finite and >= 0".into(),
            ));
        }
        if self.batches == 0 {
            return Err(Error::InvalidArgument(
                "profile needs at least one batch per epoch".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch work charged to each entity and link, as seen by one client
/// path. Upper-entity FLOPs are the work done on behalf of that client;
/// `es_bytes` is per edge.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLoad {
    pub client_flops: f64,
    pub edge_flops: f64,
    pub central_flops: f64,
    pub ce_bytes: f64,
    pub es_bytes: f64,
    pub cs_bytes: f64,
    /// Bytes sent once before training starts (raw data for DL).
    pub one_time_cs_bytes: f64,
}

impl EpochLoad {
    pub fn from_profile(
        method: Method,
        p: &ModelProfile,
        scenario: &Scenario,
    ) -> Result<EpochLoad> {
        p.check(method)?;
        let f = 1.0 + scenario.backward_flops_factor;
        let b = p.batches as f64;
        let m = p.m() as f64;
        let vertical_link = (2 * p.m1) as f64 + b * (2 * p.d1 + p.label_bytes) as f64;
        let ushaped_link = (2 * (p.m1 + p.m3)) as f64 + b * (2 * (p.d1 + p.d2)) as f64;
        let mut load = EpochLoad::default();
        match method {
            Method::Dl => {
                load.central_flops = p.flops_total() * b * f * scenario.total_clients() as f64;
                load.one_time_cs_bytes = b * (p.input_bytes + p.label_bytes) as f64;
            }
            Method::Fl => {
                load.client_flops = p.flops_total() * b * f;
                load.cs_bytes = 2.0 * m;
            }
            Method::Efl => {
                load.client_flops = p.flops_total() * b * f;
                load.ce_bytes = 2.0 * m;
                load.es_bytes = 2.0 * m;
            }
            Method::Sfl | Method::Usfl | Method::Esfl | Method::Eusfl => {
                load.client_flops = p.flops_c() * b * f;
                let upper = p.flops_e() * b * f;
                let link = if method.split_mode() == Some(SplitMode::Vertical) {
                    vertical_link
                } else {
                    ushaped_link
                };
                if method.uses_edge() {
                    load.edge_flops = upper;
                    load.ce_bytes = link;
                    load.es_bytes = 2.0 * m;
                } else {
                    load.central_flops = upper;
                    load.cs_bytes = link;
                }
            }
        }
        Ok(load)
    }

    /// Converts work into time on `scenario`.
    pub fn times(&self, method: Method, scenario: &Scenario) -> Result<CostBreakdown> {
        scenario.validate()?;
        let g = method.sharing_group(scenario) as f64;
        let (share, repeat) = match scenario.schedule {
            ClientSchedule::Parallel => (g, 1.0),
            ClientSchedule::Sequential => (1.0, g),
        };
        let edge_flops = scenario.edge.flops / share;
        let central_flops = if method == Method::Dl {
            scenario.central.flops
        } else {
            scenario.central.flops / share
        };
        let client_compute_s = repeat * self.client_flops / scenario.client.flops;
        let edge_compute_s = repeat * self.edge_flops / edge_flops;
        let central_compute_s = repeat * self.central_flops / central_flops;
        let ce_transfer_s = repeat * self.ce_bytes / scenario.client_to_edge();
        let es_transfer_s = self.es_bytes / scenario.edge_to_central();
        let cs_transfer_s = repeat * self.cs_bytes / scenario.client_to_central();
        Ok(CostBreakdown {
            client_compute_s,
            edge_compute_s,
            central_compute_s,
            ce_transfer_s,
            es_transfer_s,
            cs_transfer_s,
            total_s: client_compute_s
                + edge_compute_s
                + central_compute_s
                + ce_transfer_s
                + es_transfer_s
                + cs_transfer_s,
            one_time_s: self.one_time_cs_bytes / scenario.client_to_central(),
        })
    }
}

/// Seconds spent per entity and per link in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub client_compute_s: f64,
    pub edge_compute_s: f64,
    pub central_compute_s: f64,
    pub ce_transfer_s: f64,
    pub es_transfer_s: f64,
    pub cs_transfer_s: f64,
    /// Sum of the six components above.
    pub total_s: f64,
    /// Charged once per run, outside `total_s`.
    pub one_time_s: f64,
}

impl CostBreakdown {
    pub fn components(&self) -> [f64; 6] {
        [
            self.client_compute_s,
            self.edge_compute_s,
            self.central_compute_s,
            self.ce_transfer_s,
            self.es_transfer_s,
            self.cs_transfer_s,
        ]
    }

    pub fn transfer_s(&self) -> f64 {
        self.ce_transfer_s + self.es_transfer_s + self.cs_transfer_s
    }

    /// Time for `epochs` epochs including one-time costs.
    pub fn run_total(&self, epochs: usize) -> f64 {
        self.one_time_s + epochs as f64 * self.total_s
    }
}

/// Closed-form time of one epoch of `method`.
pub fn epoch_time(
    method: Method,
    profile: &ModelProfile,
    scenario: &Scenario,
) -> Result<CostBreakdown> {
    scenario.validate()?;
    EpochLoad::from_profile(method, profile, scenario)?.times(method, scenario)
}

/// Per-epoch advantage of USFL over FL:
///
/// `FLOPs_e/P_c - FLOPs_e/P_e + (2 m2 - 2 (D1 + D2) |D_k|) / r`
///
/// with the client-central rate and central FLOPS. Positive means the
/// U-shaped split finishes the epoch first.
pub fn delta_t(profile: &ModelProfile, scenario: &Scenario) -> Result<f64> {
    delta_t_with(profile, scenario, false)
}

/// [`delta_t`] for EUSFL against EFL: client-edge rate and edge FLOPS.
pub fn delta_t_edge(profile: &ModelProfile, scenario: &Scenario) -> Result<f64> {
    delta_t_with(profile, scenario, true)
}

fn delta_t_with(p: &ModelProfile, scenario: &Scenario, edge: bool) -> Result<f64> {
    scenario.validate()?;
    p.check(Method::Usfl)?;
    if scenario.schedule != ClientSchedule::Parallel {
        return Err(Error::Unsupported(
            "delta_t assumes parallel clients".into(),
        ));
    }
    let (rate, upper) = if edge {
        let g = Method::Eusfl.sharing_group(scenario) as f64;
        (scenario.client_to_edge(), scenario.edge.flops / g)
    } else {
        let g = Method::Usfl.sharing_group(scenario) as f64;
        (scenario.client_to_central(), scenario.central.flops / g)
    };
    let b = p.batches as f64;
    let flops_e = p.flops_e() * b * (1.0 + scenario.backward_flops_factor);
    let bytes = 2.0 * p.m2 as f64 - b * (2 * (p.d1 + p.d2)) as f64;
    Ok(flops_e / scenario.client.flops - flops_e / upper + bytes / rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> ModelProfile {
        ModelProfile {
            mode: SplitMode::UShaped,
            m1: 400,
            m2: 80_000,
            m3: 7_792,
            flops_front: 1_000.0,
            flops_middle: 30_000.0,
            flops_rear: 500.0,
            d1: 1_000,
            d2: 200,
            label_bytes: 64,
            input_bytes: 3_136,
            batch_size: 16,
            batches: 5,
        }
    }

    #[test]
    fn totals_are_component_sums() {
        let s = Scenario::setup1().with_topology(2, 3);
        for m in Method::ALL {
            let mut p = profile();
            if m.split_mode() == Some(SplitMode::Vertical) {
                p.mode = SplitMode::Vertical;
            }
            let c = epoch_time(m, &p, &s).unwrap();
            assert!((c.components().iter().sum::<f64>() - c.total_s).abs() < 1e-9);
            assert!(c.components().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn fl_compute_leg() {
        let s = Scenario::setup1();
        let load = EpochLoad {
            client_flops: 35_540_000.0,
            ..Default::default()
        };
        let c = load.times(Method::Fl, &s).unwrap();
        assert!((c.client_compute_s - 88.85).abs() < 1e-12);
    }

    #[test]
    fn delta_t_is_fl_minus_usfl() {
        let p = profile();
        let s = Scenario::setup1().with_topology(1, 2);
        let fl = epoch_time(Method::Fl, &p, &s).unwrap().total_s;
        let usfl = epoch_time(Method::Usfl, &p, &s).unwrap().total_s;
        assert!((delta_t(&p, &s).unwrap() - (fl - usfl)).abs() < 1e-9);
        let efl = epoch_time(Method::Efl, &p, &s).unwrap().total_s;
        let eusfl = epoch_time(Method::Eusfl, &p, &s).unwrap().total_s;
        assert!((delta_t_edge(&p, &s).unwrap() - (efl - eusfl)).abs() < 1e-9);
    }

    #[test]
    fn delta_t_vanishes_when_symmetric() {
        let mut p = profile();
        p.m2 = p.batches as u64 * (p.d1 + p.d2);
        let mut s = Scenario::setup1();
        s.central.flops = s.client.flops;
        assert!(delta_t(&p, &s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mismatched_profile_is_rejected() {
        let s = Scenario::setup1();
        assert!(epoch_time(Method::Sfl, &profile(), &s).is_err());
        let mut bad = s.clone();
        bad.edge.flops = 0.0;
        assert!(epoch_time(Method::Eusfl, &profile(), &bad).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("XFL".parse::<Method>().is_err());
    }
}
