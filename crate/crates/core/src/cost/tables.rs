//! The two reference result tables, recomputed from their own FLOP and byte
//! columns on the built-in setups.
//!
//! The printed FLOP and byte columns are stored verbatim; every time cell is
//! recomputed from them and compared against the printed time. A cell whose
//! recomputed value does not round to the printed one is flagged.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EpochLoad, Method};
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Epochs behind the printed totals.
pub const REFERENCE_EPOCHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    Setup1,
    Setup2,
}

impl Setup {
    pub fn scenario(self) -> Scenario {
        match self {
            Setup::Setup1 => Scenario::setup1(),
            Setup::Setup2 => Scenario::setup2(),
        }
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Setup> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "setup1" => Ok(Setup::Setup1),
            "2" | "setup2" => Ok(Setup::Setup2),
            _ => Err(Error::InvalidArgument(format!("unknown setup {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableCell {
    pub column: &'static str,
    /// FLOPs or bytes as printed.
    pub quantity: f64,
    pub computed_s: f64,
    pub printed_s: f64,
    /// Charged once per run rather than per epoch.
    pub one_time: bool,
}

impl TableCell {
    /// The recomputed time does not round to the printed one.
    pub fn is_anomaly(&self) -> bool {
        (round2(self.computed_s) - self.printed_s).abs() > 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Setup1Row {
    pub method: Method,
    /// Client, edge, central, C-E, E-S, C-S.
    pub cells: [TableCell; 6],
    pub computed_total_s: f64,
    pub printed_total_s: f64,
}

impl Setup1Row {
    pub fn delta_pct(&self) -> f64 {
        pct(self.computed_total_s, self.printed_total_s)
    }

    pub fn anomalies(&self) -> Vec<String> {
        self.cells
            .iter()
            .filter(|c| c.is_anomaly())
            .map(|c| {
                format!(
                    "{} {}: computed {:.4} s vs printed {:.2} s (delta {:+.4} s)",
                    self.method,
                    c.column,
                    c.computed_s,
                    c.printed_s,
                    c.computed_s - c.printed_s
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Setup2Row {
    pub method: Method,
    pub client_flops: f64,
    pub upper_flops: f64,
    pub transfer_bytes: f64,
    /// `client/P_c + upper/P_upper + transfer/r`, with the edge and the
    /// client-edge link for edge-assisted methods and the central server and
    /// client-central link otherwise.
    pub computed_total_s: f64,
    pub printed_total_s: f64,
    pub printed_accuracy: f64,
}

impl Setup2Row {
    pub fn delta_pct(&self) -> f64 {
        pct(self.computed_total_s, self.printed_total_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ReferenceTable {
    Setup1(Vec<Setup1Row>),
    Setup2(Vec<Setup2Row>),
}

const COLUMNS: [&str; 6] = [
    "client",
    "edge server",
    "central server",
    "C-E transfer",
    "E-S transfer",
    "C-S transfer",
];

// Method, six (quantity, printed seconds) pairs, printed total.
type PrintedRow = (Method, [(f64, f64); 6], f64);

const SETUP1_PRINTED: [PrintedRow; 7] = [
    (
        Method::Dl,
        [
            (0.0, 0.0),
            (0.0, 0.0),
            (35_540_000.0, 2.96),
            (0.0, 0.0),
            (0.0, 0.0),
            (54_880_000.0, 2744.00),
        ],
        2746.96,
    ),
    (
        Method::Fl,
        [
            (35_540_000.0, 88.85),
            (0.0, 0.0),
            (0.0, 0.0),
            (0.0, 0.0),
            (0.0, 0.0),
            (88_192.0, 4.41),
        ],
        930.26,
    ),
    (
        Method::Sfl,
        [
            (1_440_000.0, 3.60),
            (0.0, 0.0),
            (34_100_000.0, 2.84),
            (0.0, 0.0),
            (0.0, 0.0),
            (14_016.0, 0.70),
        ],
        70.14,
    ),
    (
        Method::Usfl,
        [
            (1_940_000.0, 4.85),
            (0.0, 0.0),
            (33_600_000.0, 2.80),
            (0.0, 0.0),
            (0.0, 0.0),
            (1_437_392.0, 71.87),
        ],
        790.52,
    ),
    (
        Method::Efl,
        [
            (35_540_000.0, 88.85),
            (0.0, 0.0),
            (0.0, 0.0),
            (88_192.0, 0.22),
            (88_192.0, 0.07),
            (0.0, 0.0),
        ],
        890.14,
    ),
    (
        Method::Esfl,
        [
            (1_440_000.0, 3.60),
            (34_100_000.0, 4.26),
            (34_100_000.0, 2.80),
            (14_016.0, 0.03),
            (88_192.0, 0.07),
            (0.0, 0.0),
        ],
        100.81,
    ),
    (
        Method::Eusfl,
        [
            (1_940_000.0, 4.85),
            (33_600_000.0, 4.20),
            (33_600_000.0, 2.80),
            (1_437_392.0, 3.52),
            (88_192.0, 0.07),
            (0.0, 0.0),
        ],
        150.45,
    ),
];

// Method, client FLOPs, upper-entity FLOPs, transfer bytes, printed time,
// printed accuracy.
const SETUP2_PRINTED: [(Method, f64, f64, f64, f64, f64); 6] = [
    (
        Method::Fl,
        11_985_747_968.0,
        0.0,
        278_026_064.0,
        1402.116,
        64.80,
    ),
    (
        Method::Sfl,
        130_023_424.0,
        11_855_724_544.0,
        541_680.0,
        12.813,
        65.12,
    ),
    (
        Method::Usfl,
        132_644_864.0,
        11_853_103_104.0,
        18_177_408.0,
        151.873,
        64.92,
    ),
    (
        Method::Efl,
        11_985_747_968.0,
        0.0,
        278_026_064.0,
        409.468,
        65.03,
    ),
    (
        Method::Esfl,
        130_023_424.0,
        11_855_724_544.0,
        541_680.0,
        127.060,
        64.92,
    ),
    (
        Method::Eusfl,
        132_644_864.0,
        11_853_103_104.0,
        18_177_408.0,
        128.881,
        65.13,
    ),
];

/// Recomputes a reference table on its built-in setup.
pub fn reproduce_table(setup: Setup) -> ReferenceTable {
    let scenario = setup.scenario();
    match setup {
        Setup::Setup1 => ReferenceTable::Setup1(
            SETUP1_PRINTED
                .iter()
                .map(|row| setup1_row(row, &scenario))
                .collect(),
        ),
        Setup::Setup2 => ReferenceTable::Setup2(
            SETUP2_PRINTED
                .iter()
                .map(|&(method, client, upper, bytes, time, acc)| {
                    let (p_upper, rate) = if method.uses_edge() {
                        (scenario.edge.flops, scenario.client_to_edge())
                    } else {
                        (scenario.central.flops, scenario.client_to_central())
                    };
                    Setup2Row {
                        method,
                        client_flops: client,
                        upper_flops: upper,
                        transfer_bytes: bytes,
                        computed_total_s: client / scenario.client.flops
                            + upper / p_upper
                            + bytes / rate,
                        printed_total_s: time,
                        printed_accuracy: acc,
                    }
                })
                .collect(),
        ),
    }
}

fn setup1_row(&(method, printed, printed_total): &PrintedRow, scenario: &Scenario) -> Setup1Row {
    // Centralized training ships its raw data once; everything else recurs.
    let one_time = method == Method::Dl;
    let [c, e, s, ce, es, cs] = printed.map(|(q, _)| q);
    let load = EpochLoad {
        client_flops: c,
        edge_flops: e,
        central_flops: s,
        ce_bytes: ce,
        es_bytes: es,
        cs_bytes: if one_time { 0.0 } else { cs },
        one_time_cs_bytes: if one_time { cs } else { 0.0 },
    };
    let t = load
        .times(method, scenario)
        .expect("built-in setups are valid");
    let mut computed = t.components();
    computed[5] += t.one_time_s;
    let cells = std::array::from_fn(|i| TableCell {
        column: COLUMNS[i],
        quantity: printed[i].0,
        computed_s: computed[i],
        printed_s: printed[i].1,
        one_time: one_time && i == 5,
    });
    Setup1Row {
        method,
        cells,
        computed_total_s: t.run_total(REFERENCE_EPOCHS),
        printed_total_s: printed_total,
    }
}

impl ReferenceTable {
    pub fn anomalies(&self) -> Vec<String> {
        match self {
            ReferenceTable::Setup1(rows) => rows.iter().flat_map(Setup1Row::anomalies).collect(),
            ReferenceTable::Setup2(rows) => rows
                .iter()
                .map(|r| {
                    format!(
                        "{} total: derived {:.3} s vs printed {:.3} s ({:+.1}%)",
                        r.method,
                        r.computed_total_s,
                        r.printed_total_s,
                        r.delta_pct()
                    )
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            ReferenceTable::Setup1(rows) => {
                out.push_str(
                    "method,client_flops,client_s,edge_flops,edge_s,central_flops,central_s,",
                );
                out.push_str(
                    "ce_bytes,ce_s,es_bytes,es_s,cs_bytes,cs_s,total_s,printed_total_s,delta_pct\n",
                );
                for r in rows {
                    write!(out, "{}", r.method).unwrap();
                    for c in &r.cells {
                        write!(out, ",{},{:.4}", c.quantity, c.computed_s).unwrap();
                    }
                    writeln!(
                        out,
                        ",{:.2},{:.2},{:.2}",
                        r.computed_total_s,
                        r.printed_total_s,
                        r.delta_pct()
                    )
                    .unwrap();
                }
            }
            ReferenceTable::Setup2(rows) => {
                out.push_str("method,client_flops,upper_flops,transfer_bytes,total_s,printed_total_s,delta_pct,printed_accuracy\n");
                for r in rows {
                    writeln!(
                        out,
                        "{},{},{},{},{:.3},{:.3},{:.2},{:.2}",
                        r.method,
                        r.client_flops,
                        r.upper_flops,
                        r.transfer_bytes,
                        r.computed_total_s,
                        r.printed_total_s,
                        r.delta_pct(),
                        r.printed_accuracy
                    )
                    .unwrap();
                }
            }
        }
        for a in self.anomalies() {
            writeln!(out, "# anomaly: {a}").unwrap();
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        match self {
            ReferenceTable::Setup1(rows) => {
                out.push_str("| Method |");
                for c in COLUMNS {
                    write!(out, " {c} FLOPs/bytes | {c} s |").unwrap();
                }
                out.push_str(" Total s | Printed total s | Delta |\n|---|");
                out.push_str(&"---:|".repeat(15));
                out.push('\n');
                for r in rows {
                    write!(out, "| {} |", r.method).unwrap();
                    for c in &r.cells {
                        let mark = if c.is_anomaly() { " (!)" } else { "" };
                        let once = if c.one_time { " (once)" } else { "" };
                        write!(
                            out,
                            " {} | {:.2}{once}{mark} |",
                            thousands(c.quantity),
                            c.computed_s
                        )
                        .unwrap();
                    }
                    writeln!(
                        out,
                        " {:.2} | {:.2} | {:+.2}% |",
                        r.computed_total_s,
                        r.printed_total_s,
                        r.delta_pct()
                    )
                    .unwrap();
                }
            }
            ReferenceTable::Setup2(rows) => {
                out.push_str("| Method | Client FLOPs | Upper FLOPs | Transfer bytes | Derived time s | Printed time s | Delta | Printed accuracy |\n");
                out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|\n");
                for r in rows {
                    writeln!(
                        out,
                        "| {} | {} | {} | {} | {:.3} | {:.3} | {:+.1}% | {:.2} |",
                        r.method,
                        thousands(r.client_flops),
                        thousands(r.upper_flops),
                        thousands(r.transfer_bytes),
                        r.computed_total_s,
                        r.printed_total_s,
                        r.delta_pct(),
                        r.printed_accuracy
                    )
                    .unwrap();
                }
            }
        }
        let anomalies = self.anomalies();
        if !anomalies.is_empty() {
            out.push_str("\nAnomalies:\n\n");
            for a in anomalies {
                writeln!(out, "- {a}").unwrap();
            }
        }
        out
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn pct(computed: f64, printed: f64) -> f64 {
    (computed - printed) / printed * 100.0
}

/// `1437392.0` -> `1,437,392`.
pub fn thousands(v: f64) -> String {
    let digits = format!("{:.0}", v.abs());
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    if v < 0.0 {
        out.insert(0, '-');
    }
    out
}
