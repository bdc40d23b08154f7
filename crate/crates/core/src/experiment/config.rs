use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::{modes, AdmmConfig};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::metrics::ProbeConfig;
use crate::net::{Activation, LayerSpec};

/// Where sequences come from and how they are cut into clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CSV in the `id,label,frame_index,v0,…` layout; overrides `generator`.
    pub input_file: Option<PathBuf>,
    pub generator: SyntheticSpec,
    pub clip_len: usize,
    pub overlap: usize,
    /// Share of each class's sequences held out as the test split.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input_file: None,
            generator: SyntheticSpec::default(),
            clip_len: 16,
            overlap: 8,
            test_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub out_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Hidden layers; the last one is the feature layer.
    pub layers: Vec<LayerConfig>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            layers: vec![
                LayerConfig {
                    out_dim: 32,
                    activation: Activation::Tanh,
                },
                LayerConfig {
                    out_dim: 16,
                    activation: Activation::Tanh,
                },
            ],
        }
    }
}

impl NetConfig {
    pub fn layer_specs(&self, input_dim: usize) -> Vec<LayerSpec> {
        let mut in_dim = input_dim;
        self.layers
            .iter()
            .map(|l| {
                let spec = LayerSpec::new(in_dim, l.out_dim, l.activation);
                in_dim = l.out_dim;
                spec
            })
            .collect()
    }
}

/// One experiment: data, network, optimiser and the runs to perform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Training modes to run for every seed, in order.
    pub modes: Vec<String>,
    /// Neighbourhood sizes used by `sweep-h` when none are given on the command line.
    pub h_values: Vec<usize>,
    /// Fraction of each class's training sequences actually trained on; the
    /// rest becomes the validation split. At 1.0 the test split validates.
    pub train_fraction: f64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub net: NetConfig,
    pub admm: AdmmConfig,
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![1],
            modes: vec!["baseline".into(), "stmn".into()],
            h_values: vec![5],
            train_fraction: 1.0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            net: NetConfig::default(),
            admm: AdmmConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; syntax and unknown-key errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.modes.is_empty() {
            return bad("modes must not be empty".into());
        }
        let registry = modes();
        for m in &self.modes {
            registry.get(m)?;
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.modes.iter().find(|m| !seen.insert(m.as_str())) {
            return bad(format!("mode `{dup}` listed twice"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction must lie in (0, 1], got {}", self.train_fraction));
        }
        let d = &self.data;
        if d.clip_len == 0 || d.overlap >= d.clip_len {
            return bad(format!(
                "data needs clip_len > overlap, got clip_len {} overlap {}",
                d.clip_len, d.overlap
            ));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return bad(format!("data.test_fraction must lie in (0, 1), got {}", d.test_fraction));
        }
        if d.input_file.is_none() {
            d.generator.validate()?;
            if d.generator.frames < d.clip_len {
                return bad(format!(
                    "data.generator.frames ({}) is shorter than clip_len ({})",
                    d.generator.frames, d.clip_len
                ));
            }
        }
        if self.net.layers.is_empty() {
            return bad("net.layers needs at least one layer".into());
        }
        if self.net.layers.iter().any(|l| l.out_dim == 0) {
            return bad("net.layers out_dim must be at least 1".into());
        }
        for mode in &self.modes {
            let mut admm = self.admm.clone();
            admm.mode = mode.clone();
            admm.validate()?;
        }
        if self.probe.epochs == 0 || self.probe.batch_size == 0 || !(self.probe.lr > 0.0) {
            return bad("probe needs epochs >= 1, batch_size >= 1 and lr > 0".into());
        }
        Ok(())
    }

    /// Neighbourhood sizes for a sweep: sorted, deduplicated, each checked
    /// against the batch size before anything runs.
    pub fn sweep_values(&self, requested: &[usize]) -> Result<Vec<usize>> {
        if requested.is_empty() {
            return Err(Error::Config("sweep needs at least one H value".into()));
        }
        let mut values = requested.to_vec();
        values.sort_unstable();
        values.dedup();
        if values.len() != requested.len() {
            log::warn!("duplicate H values dropped: {requested:?} -> {values:?}");
        }
        for &h in &values {
            let mut m = self.admm.manifold;
            m.h = h;
            m.validate(self.admm.batch_size)?;
        }
        Ok(values)
    }
}
