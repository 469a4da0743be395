mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eusfl::cost::Setup;

use commands::Format;
use config::{Source, UsageError};

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Embedded config instead of a file: setup1, setup2, setup1-lenet-eusfl.
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "md")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the protocol simulator and write epochs.csv and summary.csv.
    Simulate,
    /// Recompute a reference cost table.
    Cost {
        /// 1 or 2.
        #[arg(long)]
        setup: Setup,
    },
    /// Label-inference success rate against LabelDP noise.
    Attack {
        /// Trials per noise scale.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Empirical epsilon-DP audit of the label mechanism.
    DpAudit {
        /// Overrides the config's list.
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
        #[arg(long)]
        samples: Option<usize>,
        /// Also audit a mechanism with half the required noise.
        #[arg(long)]
        planted_bug: bool,
    },
    /// Regenerate tables, sensitivity curves, the attack curve and the DP
    /// audit into --out.
    Report,
}

#[derive(Parser)]
#[command(
    name = "eusfl",
    version,
    about = "Edge-assisted U-shaped split federated learning experiments"
)]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn run(root: Root) -> anyhow::Result<String> {
    let c = &root.common;
    let source = match (&c.config, &c.preset) {
        (Some(path), _) => Source::File(path),
        (None, Some(name)) => Source::Preset(name),
        (None, None) => Source::Empty,
    };
    let needs_config = matches!(root.command, Command::Simulate);
    if needs_config && matches!(source, Source::Empty) {
        return Err(UsageError("simulate needs --config PATH or --preset NAME".into()).into());
    }
    let mut cfg = config::load(source, std::env::vars())?;
    let seed = c.seed.unwrap_or(cfg.seed);
    cfg.set_seed(seed);
    let out = c.out.as_deref();
    match root.command {
        Command::Simulate => commands::simulate(&cfg, out.unwrap_or("out".as_ref()), c.format),
        Command::Cost { setup } => commands::cost(setup, c.format, out),
        Command::Attack { trials } => {
            if let Some(t) = trials {
                cfg.attack.trials = t;
            }
            commands::attack(&cfg, c.format, out)
        }
        Command::DpAudit {
            epsilon,
            samples,
            planted_bug,
        } => {
            if !epsilon.is_empty() {
                cfg.dp_audit.epsilons = epsilon;
            }
            if let Some(s) = samples {
                cfg.dp_audit.samples = s;
            }
            cfg.dp_audit.planted_bug |= planted_bug;
            commands::dp_audit_cmd(&cfg, c.format, out)
        }
        Command::Report => {
            let dir = out.ok_or_else(|| UsageError("report needs --out DIR".into()))?;
            commands::report(&cfg, dir)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<eusfl::Error>() {
        Some(
            eusfl::Error::InvalidArgument(_)
            | eusfl::Error::Plan(_)
            | eusfl::Error::Scenario(_)
            | eusfl::Error::Unsupported(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let root = Root::parse();
    match run(root) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
