//! Model, training and service settings, read from sectioned `key = value`
//! files. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::ContextMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// State tracking only.
    Dst,
    /// Response generation from the gold current state.
    C2t,
    /// State tracking and response generation.
    #[default]
    E2e,
}

impl std::str::FromStr for TaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dst" => Ok(Self::Dst),
            "c2t" => Ok(Self::C2t),
            "e2e" => Ok(Self::E2e),
            _ => Err(Error::Config(format!("unknown task mode {s} (expected dst, c2t or e2e)"))),
        }
    }
}

impl std::fmt::Display for TaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dst => "dst",
            Self::C2t => "c2t",
            Self::E2e => "e2e",
        })
    }
}

/// One attention sublayer of a slot-level block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotSublayer {
    #[serde(rename = "self")]
    SelfAttn,
    Context,
    State,
    Utterance,
}

impl SlotSublayer {
    pub fn name(self) -> &'static str {
        match self {
            Self::SelfAttn => "self",
            Self::Context => "context",
            Self::State => "state",
            Self::Utterance => "utterance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub n_dst_slot: usize,
    pub n_dst_domain: usize,
    pub n_gen: usize,
    pub dropout: f64,
    /// Combine domain-level features with slot-level ones; when off the
    /// domain side is replaced by ones.
    pub bilevel: bool,
    /// Order of the attention sublayers inside a slot-level block.
    pub slot_chain: Vec<SlotSublayer>,
    pub act_loss: bool,
    pub context_mode: ContextMode,
    pub max_value_len: usize,
    pub max_response_len: usize,
    pub beam_size: usize,
    pub length_penalty: f64,
    pub act_threshold: f64,
    pub request_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 256,
            heads: 8,
            n_dst_slot: 3,
            n_dst_domain: 3,
            n_gen: 3,
            dropout: 0.3,
            bilevel: true,
            slot_chain: vec![SlotSublayer::SelfAttn, SlotSublayer::Context, SlotSublayer::State, SlotSublayer::Utterance],
            act_loss: true,
            context_mode: ContextMode::LastResponse,
            max_value_len: 10,
            max_response_len: 60,
            beam_size: 5,
            length_penalty: 0.6,
            act_threshold: 0.5,
            request_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!("d={} must be a positive multiple of heads={}", self.d, self.heads)));
        }
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_value_len == 0 || self.max_response_len == 0 {
            return Err(Error::Config("maximum lengths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TaskMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate, reached at the end of warmup.
    pub lr: f64,
    pub warmup: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TaskMode::E2e,
            epochs: 30,
            batch_size: 32,
            lr: 1e-4,
            warmup: 4000,
            label_smoothing: 0.1,
            seed: 0,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!("label_smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub idle_timeout_secs: u64,
    pub max_turns: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            idle_timeout_secs: 30 * 60,
            max_turns: 40,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Per-row settings of an ablation grid; unset fields keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub d: Option<usize>,
    pub heads: Option<usize>,
    pub n_dst_slot: Option<usize>,
    pub n_dst_domain: Option<usize>,
    pub n_gen: Option<usize>,
    pub dropout: Option<f64>,
    pub bilevel: Option<bool>,
    pub act_loss: Option<bool>,
    pub context_mode: Option<ContextMode>,
    pub mode: Option<TaskMode>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub warmup: Option<usize>,
    pub label_smoothing: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, base: &Config) -> Result<Config> {
        let mut c = base.clone();
        let m = &mut c.model;
        let t = &mut c.train;
        macro_rules! set {
            ($($src:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = self.$src { $dst = v; })*
            };
        }
        set!(
            d => m.d, heads => m.heads, n_dst_slot => m.n_dst_slot, n_dst_domain => m.n_dst_domain,
            n_gen => m.n_gen, dropout => m.dropout, bilevel => m.bilevel, act_loss => m.act_loss,
            context_mode => m.context_mode, mode => t.mode, epochs => t.epochs, batch_size => t.batch_size,
            lr => t.lr, warmup => t.warmup, label_smoothing => t.label_smoothing, seed => t.seed,
        );
        c.validate()?;
        Ok(c)
    }
}

/// Named rows of an ablation grid, in file order. Each `[section]` is a row.
pub fn parse_grid(text: &str) -> Result<Vec<(String, Overrides)>> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut rows = Vec::with_capacity(table.len());
    for (name, v) in table {
        if !v.is_table() {
            return Err(Error::Config(format!("grid entry {name} is not a section")));
        }
        let o: Overrides = v.try_into().map_err(|e: toml::de::Error| Error::Config(format!("row {name}: {e}")))?;
        rows.push((name, o));
    }
    Ok(rows)
}

pub fn load_grid(path: &Path) -> Result<Vec<(String, Overrides)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grid(&text)
}
