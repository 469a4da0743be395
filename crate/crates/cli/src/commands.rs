use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use eusfl::attack::{asr_sweep, noise_threshold, SweepPoint};
use eusfl::cost::{delta_t, epoch_time, reproduce_table, Method, Setup};
use eusfl::labeldp::{dp_audit, dp_audit_with_scale, AuditReport, NoiseConfig};
use eusfl::nn::{lenet_kinds, NetworkSpec};
use eusfl::rng::Substreams;
use eusfl::scenario::Knob;
use eusfl::sim::{run_training, RunReport, Topology};
use eusfl::split::{profile, profile_intact, SplitPlan};
use serde::Serialize;

use crate::config::{Config, UsageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Md,
}

/// CSV body (header row plus records) for `rows`.
fn csv_of<T: Serialize>(rows: &[T]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Markdown table from a CSV body.
fn md_of_csv(csv_body: &str) -> String {
    let mut out = String::new();
    for (i, line) in csv_body.lines().enumerate() {
        let cells: Vec<String> = line.split(',').map(md_cell).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let _ = writeln!(out, "|{}", "---|".repeat(cells.len()));
        }
    }
    out
}

fn md_cell(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if cell.contains('.') => format!("{v:.4}"),
        _ => cell.to_string(),
    }
}

fn render(csv_body: &str, format: Format) -> String {
    match format {
        Format::Csv => csv_body.to_string(),
        Format::Md => md_of_csv(csv_body),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn train(cfg: &Config) -> anyhow::Result<RunReport> {
    let train = cfg
        .train
        .clone()
        .ok_or_else(|| UsageError("train: missing section (set train.method)".into()))?;
    train
        .validate()
        .map_err(|e| UsageError(format!("train: {e}")))?;
    let scenario = cfg.scenario.build()?;
    let topology = Topology::from_scenario(&scenario)?;
    let (train_set, test_set) = cfg.data.load(cfg.seed)?;
    let (train_set, test_set) = (cfg.model.adapt(train_set)?, cfg.model.adapt(test_set)?);
    let net = cfg.model.init(&train_set, cfg.seed)?;
    train
        .plan(&net)
        .map_err(|e| UsageError(format!("train.cuts: {e}")))?;
    let shards = train_set.shards(topology.num_clients())?;
    Ok(run_training(
        train, scenario, topology, net, shards, test_set,
    )?)
}

pub fn simulate(cfg: &Config, out: &Path, format: Format) -> anyhow::Result<String> {
    let report = train(cfg)?;
    let header = cfg.header("simulate");
    let epochs = csv_of(&report.rows())?;
    let summary = csv_of(&[report.summary()])?;
    write(out, "epochs.csv", &format!("{header}{epochs}"))?;
    write(out, "summary.csv", &format!("{header}{summary}"))?;
    let events = report.privacy_events().count();
    Ok(format!(
        "{}\n{}\nlabel transmissions: {events}\nwrote {}\n",
        render(&epochs, format),
        render(&summary, format),
        out.display()
    ))
}

pub fn cost(setup: Setup, format: Format, out: Option<&Path>) -> anyhow::Result<String> {
    let table = reproduce_table(setup);
    let text = match format {
        Format::Csv => table.to_csv(),
        Format::Md => table.to_markdown(),
    };
    if let Some(dir) = out {
        let n = match setup {
            Setup::Setup1 => 1,
            Setup::Setup2 => 2,
        };
        write(dir, &format!("cost-setup{n}.{}", ext(format)), &text)?;
    }
    Ok(text)
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Md => "md",
    }
}

fn sweep_text(points: &[SweepPoint], k: usize, format: Format) -> anyhow::Result<String> {
    let mut text = render(&csv_of(points)?, format);
    let note = match noise_threshold(points, k, 5.0) {
        Some(b) => format!("noise threshold b* = {b}"),
        None => "no noise threshold in the grid".to_string(),
    };
    let _ = writeln!(
        text,
        "{}{note}",
        if format == Format::Csv { "# " } else { "\n" }
    );
    Ok(text)
}

pub fn attack(cfg: &Config, format: Format, out: Option<&Path>) -> anyhow::Result<String> {
    let sweep = &cfg.attack;
    sweep
        .validate()
        .map_err(|e| UsageError(format!("attack: {e}")))?;
    let points = asr_sweep(sweep)?;
    if let Some(dir) = out {
        let body = sweep_text(&points, sweep.num_classes, Format::Csv)?;
        write(
            dir,
            "attack.csv",
            &format!("{}{body}", cfg.header("attack")),
        )?;
    }
    sweep_text(&points, sweep.num_classes, format)
}

#[derive(Serialize)]
struct AuditRow<'a> {
    mechanism: &'a str,
    epsilon: f64,
    bins: usize,
    max_ratio: f64,
    bound: f64,
    verdict: String,
}

impl<'a> AuditRow<'a> {
    fn new(mechanism: &'a str, r: &AuditReport) -> Self {
        AuditRow {
            mechanism,
            epsilon: r.epsilon,
            bins: r.bins,
            max_ratio: r.max_ratio,
            bound: r.bound,
            verdict: r.verdict.to_string(),
        }
    }
}

pub fn dp_audit_cmd(cfg: &Config, format: Format, out: Option<&Path>) -> anyhow::Result<String> {
    let a = &cfg.dp_audit;
    if a.epsilons.is_empty() {
        return Err(UsageError("dp_audit.epsilons: empty list".into()).into());
    }
    let mut reports = Vec::new();
    for (i, &eps) in a.epsilons.iter().enumerate() {
        let seed = Substreams::new(cfg.seed).child("audit", &[i as u64]).seed();
        let noise = NoiseConfig::new(eps, a.num_classes, seed);
        noise
            .validate()
            .map_err(|e| UsageError(format!("dp_audit: {e}")))?;
        reports.push((
            "laplace",
            dp_audit(&noise, a.samples).map_err(|e| UsageError(format!("dp_audit: {e}")))?,
        ));
        if a.planted_bug {
            reports.push((
                "half_scale",
                dp_audit_with_scale(&noise, a.samples, noise.scale() / 2.0)?,
            ));
        }
    }
    let rows: Vec<AuditRow> = reports.iter().map(|(m, r)| AuditRow::new(m, r)).collect();
    let body = csv_of(&rows)?;
    if let Some(dir) = out {
        write(
            dir,
            "dp_audit.csv",
            &format!("{}{body}", cfg.header("dp-audit")),
        )?;
    }
    Ok(render(&body, format))
}

#[derive(Serialize)]
struct SensitivityRow {
    setup: &'static str,
    method: Method,
    knob: &'static str,
    factor: f64,
    epoch_s: f64,
}

#[derive(Serialize)]
struct DeltaRow {
    setup: &'static str,
    delta_t_s: f64,
    fl_s: f64,
    usfl_s: f64,
}

/// Epoch time of every method as each capability is scaled, on the LeNet
/// profile with 10 batches of 64.
fn sensitivity() -> anyhow::Result<(Vec<SensitivityRow>, Vec<DeltaRow>)> {
    let net = NetworkSpec::init(
        &lenet_kinds(),
        vec![1, 28, 28],
        10,
        &mut Substreams::new(0).stream("init", &[]),
    )?;
    let ushaped = profile(&net, SplitPlan::u_shaped(3, 9), 64)?.with_batches(10);
    let vertical = profile(&net, SplitPlan::vertical(3), 64)?.with_batches(10);
    let intact = profile_intact(&net, 64)?.with_batches(10);
    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    for (name, setup) in [("setup1", Setup::Setup1), ("setup2", Setup::Setup2)] {
        let base = setup.scenario();
        for method in Method::ALL {
            let p = match method.split_mode() {
                Some(eusfl::split::SplitMode::UShaped) => &ushaped,
                Some(eusfl::split::SplitMode::Vertical) => &vertical,
                None => &intact,
            };
            for knob in Knob::ALL {
                for factor in [0.25, 0.5, 1.0, 2.0, 4.0] {
                    let t = epoch_time(method, p, &base.scaled(knob, factor))?;
                    rows.push(SensitivityRow {
                        setup: name,
                        method,
                        knob: knob.name(),
                        factor,
                        epoch_s: t.run_total(1),
                    });
                }
            }
        }
        deltas.push(DeltaRow {
            setup: name,
            delta_t_s: delta_t(&ushaped, &base)?,
            fl_s: epoch_time(Method::Fl, &ushaped, &base)?.total_s,
            usfl_s: epoch_time(Method::Usfl, &ushaped, &base)?.total_s,
        });
    }
    Ok((rows, deltas))
}

/// Regenerates every table and curve into `out`.
pub fn report(cfg: &Config, out: &Path) -> anyhow::Result<String> {
    let mut written = Vec::new();
    for (n, setup) in [(1, Setup::Setup1), (2, Setup::Setup2)] {
        let t = reproduce_table(setup);
        write(out, &format!("table-setup{n}.csv"), &t.to_csv())?;
        write(out, &format!("table-setup{n}.md"), &t.to_markdown())?;
        written.push(format!("table-setup{n}.csv"));
        written.push(format!("table-setup{n}.md"));
    }
    let (rows, deltas) = sensitivity()?;
    write(out, "sensitivity.csv", &csv_of(&rows)?)?;
    write(out, "delta_t.csv", &csv_of(&deltas)?)?;
    written.push("sensitivity.csv".into());
    written.push("delta_t.csv".into());
    attack(cfg, Format::Csv, Some(out))?;
    written.push("attack.csv".into());
    dp_audit_cmd(cfg, Format::Csv, Some(out))?;
    written.push("dp_audit.csv".into());
    let mut text = String::new();
    for f in written {
        let _ = writeln!(text, "wrote {}", out.join(f).display());
    }
    Ok(text)
}
