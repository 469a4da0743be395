//! Experiment configuration: TOML documents, embedded presets and
//! `EUSFL_`-prefixed environment overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use eusfl::attack::SweepConfig;
use eusfl::data::{read_idx, synth_train_test, Dataset};
use eusfl::nn::{lenet_kinds, mlp_kinds, NetworkSpec};
use eusfl::rng::Substreams;
use eusfl::scenario::{ClientSchedule, Scenario};
use eusfl::sim::TrainConfig;
use serde::{Deserialize, Serialize};

/// Prefix of configuration overrides; `__` separates nested keys, so
/// `EUSFL_TRAIN__EPOCHS=3` sets `train.epochs`.
pub const ENV_PREFIX: &str = "EUSFL_";

pub const PRESETS: [(&str, &str); 3] = [
    ("setup1", include_str!("../presets/setup1.toml")),
    ("setup2", include_str!("../presets/setup2.toml")),
    (
        "setup1-lenet-eusfl",
        include_str!("../presets/setup1-lenet-eusfl.toml"),
    ),
];

/// A bad flag, file or config value. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub attack: SweepConfig,
    #[serde(default)]
    pub dp_audit: AuditConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `setup1` or `setup2`; the fields below override it.
    pub preset: String,
    pub client_flops: Option<f64>,
    pub edge_flops: Option<f64>,
    pub central_flops: Option<f64>,
    pub client_to_edge: Option<f64>,
    pub client_to_central: Option<f64>,
    pub edge_to_central: Option<f64>,
    pub num_edges: usize,
    pub clients_per_edge: usize,
    pub schedule: ClientSchedule,
    pub backward_flops_factor: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            preset: "setup1".into(),
            client_flops: None,
            edge_flops: None,
            central_flops: None,
            client_to_edge: None,
            client_to_central: None,
            edge_to_central: None,
            num_edges: 1,
            clients_per_edge: 2,
            schedule: ClientSchedule::Parallel,
            backward_flops_factor: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario, UsageError> {
        let mut s = Scenario::preset(&self.preset)
            .ok_or_else(|| {
                usage(format!(
                    "scenario.preset: unknown preset {:?} (setup1, setup2)",
                    self.preset
                ))
            })?
            .with_topology(self.num_edges, self.clients_per_edge);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut s.client.flops, self.client_flops);
        set(&mut s.edge.flops, self.edge_flops);
        set(&mut s.central.flops, self.central_flops);
        s.client.rate_to_edge = self.client_to_edge.or(s.client.rate_to_edge);
        s.client.rate_to_central = self.client_to_central.or(s.client.rate_to_central);
        s.edge.rate_to_central = self.edge_to_central.or(s.edge.rate_to_central);
        s.schedule = self.schedule;
        s.backward_flops_factor = self.backward_flops_factor;
        s.validate().map_err(|e| usage(format!("scenario: {e}")))?;
        Ok(s)
    }
}

fn default_hidden() -> Vec<usize> {
    vec![8, 6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Dense/ReLU stack; input and output widths come from the data.
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
    /// The 22,048-parameter LeNet on 1x28x28 inputs and 10 classes.
    Lenet,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Mlp {
            hidden: default_hidden(),
        }
    }
}

impl ModelConfig {
    fn input_shape(&self, features: usize) -> Vec<usize> {
        match self {
            ModelConfig::Mlp { .. } => vec![features],
            ModelConfig::Lenet => vec![1, 28, 28],
        }
    }

    /// Reshapes `ds` to the model's input.
    pub fn adapt(&self, mut ds: Dataset) -> Result<Dataset, UsageError> {
        let features: usize = ds.sample_shape().iter().product();
        if let ModelConfig::Lenet = self {
            if features != 784 || ds.num_classes != 10 {
                return Err(usage(format!(
                    "model.kind: lenet needs 784 features and 10 classes, data has {features} and {}",
                    ds.num_classes
                )));
            }
        }
        let mut shape = vec![ds.len()];
        shape.extend(self.input_shape(features));
        ds.features = ds
            .features
            .reshape(shape)
            .map_err(|e| usage(format!("data: {e}")))?;
        Ok(ds)
    }

    pub fn init(&self, ds: &Dataset, seed: u64) -> anyhow::Result<NetworkSpec> {
        let features: usize = ds.sample_shape().iter().product();
        let kinds = match self {
            ModelConfig::Mlp { hidden } => {
                let mut widths = vec![features];
                widths.extend(hidden);
                widths.push(ds.num_classes);
                mlp_kinds(&widths).map_err(|e| usage(format!("model.hidden: {e}")))?
            }
            ModelConfig::Lenet => lenet_kinds(),
        };
        let mut rng = Substreams::new(seed).stream("init", &[]);
        Ok(NetworkSpec::init(
            &kinds,
            self.input_shape(features),
            ds.num_classes,
            &mut rng,
        )?)
    }
}

fn default_train_size() -> usize {
    480
}

fn default_test_size() -> usize {
    240
}

fn default_classes() -> usize {
    3
}

fn default_dim() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Seeded Gaussian blobs.
    Synthetic {
        #[serde(default = "default_train_size")]
        train_size: usize,
        #[serde(default = "default_test_size")]
        test_size: usize,
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// IDX image/label files, e.g. MNIST.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `limit` examples of each file.
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            train_size: default_train_size(),
            test_size: default_test_size(),
            num_classes: default_classes(),
            dim: default_dim(),
        }
    }
}

impl DataConfig {
    /// Train and test sets.
    pub fn load(&self, seed: u64) -> anyhow::Result<(Dataset, Dataset)> {
        match self {
            DataConfig::Synthetic {
                train_size,
                test_size,
                num_classes,
                dim,
            } => {
                let data_seed = Substreams::new(seed).child("data", &[]).seed();
                synth_train_test(*train_size, *test_size, *num_classes, *dim, data_seed)
                    .map_err(|e| usage(format!("data: {e}")).into())
            }
            DataConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit,
            } => {
                let read = |img: &Path, lab: &Path, tag| -> anyhow::Result<Dataset> {
                    let mut ds = read_idx(img, lab).map_err(|e| {
                        usage(format!("data: {} / {}: {e}", img.display(), lab.display()))
                    })?;
                    ds.tag = tag;
                    Ok(match limit {
                        Some(n) if *n < ds.len() => ds.subset(&(0..*n).collect::<Vec<_>>()),
                        _ => ds,
                    })
                };
                Ok((
                    read(train_images, train_labels, eusfl::data::SplitTag::Train)?,
                    read(test_images, test_labels, eusfl::data::SplitTag::Test)?,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub epsilons: Vec<f64>,
    pub samples: usize,
    pub num_classes: usize,
    /// Also audit a mechanism that uses half the required noise scale.
    pub planted_bug: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            epsilons: vec![0.5, 1.0, 2.0],
            samples: 100_000,
            num_classes: 3,
            planted_bug: false,
        }
    }
}

/// Where a config document comes from.
pub enum Source<'a> {
    File(&'a Path),
    Preset(&'a str),
    Empty,
}

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Reads, overrides and type-checks a config. Errors name the offending
/// field path.
pub fn load(
    source: Source<'_>,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<Config, UsageError> {
    let (origin, text) = match source {
        Source::File(path) => (
            path.display().to_string(),
            std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?,
        ),
        Source::Preset(name) => {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            let text = preset(name).ok_or_else(|| {
                usage(format!(
                    "unknown preset {name:?} (available: {})",
                    names.join(", ")
                ))
            })?;
            (format!("preset {name}"), text.to_string())
        }
        Source::Empty => ("defaults".into(), String::new()),
    };
    let mut table: toml::Table = text.parse().map_err(|e| usage(format!("{origin}: {e}")))?;
    apply_env(&mut table, env)?;
    serde_path_to_error::deserialize(toml::Value::Table(table))
        .map_err(|e| usage(format!("{origin}: {}: {}", e.path(), e.inner())))
}

/// Applies `EUSFL_A__B=value` as `a.b = value`. Values are parsed as TOML
/// and fall back to plain strings.
pub fn apply_env(
    table: &mut toml::Table,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<(), UsageError> {
    let mut vars: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_ascii_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(usage(format!("{key}: empty key segment")));
        }
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(toml::Value::String(raw));
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut at = &mut *table;
        for p in parents {
            at = at
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| usage(format!("{key}: {p} is not a section")))?;
        }
        at.insert(last.clone(), value);
    }
    Ok(())
}

impl Config {
    /// Sets the root seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.attack.seed = seed;
        if let Some(t) = self.train.as_mut() {
            t.seed = seed;
        }
    }

    /// The resolved document, as `#` comment lines for output headers.
    pub fn header(&self, command: &str) -> String {
        let body = toml::to_string(self).unwrap_or_else(|e| format!("unserializable config: {e}"));
        let mut out = format!("# eusfl {command}\n");
        for line in body.lines().filter(|l| !l.trim().is_empty()) {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
