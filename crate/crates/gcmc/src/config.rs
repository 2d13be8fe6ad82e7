//! Run configuration: a TOML file with a closed key set, overridden by
//! command-line flags.
//!
//! ```toml
//! seeds = [0, 1, 2, 3, 4]
//! out = "runs/gru"
//!
//! [dataset]
//! path = "ml-100k/u.data"
//! format = "ml100k"
//! test_frac = 0.2
//! val_frac = 0.2
//!
//! [model]
//! mode = "incremental"   # static | disjoint | incremental
//! cell = "gru"           # none | gru | lstm
//! steps = 10
//! hidden = 500
//! output = 75
//! recurrent_hidden = 500
//! accumulation = "concat"
//! norm = "left"
//! dropout = 0.7
//! ordinal_sharing = true
//! basis_count = 2
//!
//! [train]
//! epochs = 1000
//! learning_rate = 0.01
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! ema_decay = 0.995
//! eval_every = 50
//! ```
//!
//! Every key is optional. Unset model and training keys take the defaults of
//! the dataset format: ML-100k uses concatenation, left normalization and
//! 1000 epochs; ML-1M uses summation, symmetric normalization and 3500
//! epochs. `steps` defaults to 10 with a recurrent cell and 1 without.

use std::path::{Path, PathBuf};

use gcmc_core::graph::{NormScheme, SequenceMode};
use gcmc_core::model::{Accumulation, CellKind, ModelConfig};
use gcmc_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::ingest::DatasetFormat;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("missing setting: {0}")]
    Missing(&'static str),
    #[error("invalid settings: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub path: Option<PathBuf>,
    pub format: Option<DatasetFormat>,
    pub test_frac: Option<f64>,
    pub val_frac: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub mode: Option<SequenceMode>,
    pub cell: Option<CellKind>,
    pub steps: Option<usize>,
    pub hidden: Option<usize>,
    pub output: Option<usize>,
    pub recurrent_hidden: Option<usize>,
    pub accumulation: Option<Accumulation>,
    pub norm: Option<NormScheme>,
    pub dropout: Option<f64>,
    pub ordinal_sharing: Option<bool>,
    pub basis_count: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub ema_decay: Option<f64>,
    pub eval_every: Option<usize>,
}

/// The file as written, every key optional.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpecFile {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetFile,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub train: TrainFile,
}

impl RunSpecFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Model settings that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub mode: SequenceMode,
    pub cell: CellKind,
    pub steps: usize,
    pub hidden: usize,
    pub output: usize,
    pub recurrent_hidden: usize,
    pub accumulation: Accumulation,
    pub norm: NormScheme,
    pub dropout: f64,
    pub ordinal_sharing: bool,
    pub basis_count: usize,
}

impl ModelSettings {
    /// Model config with counts and rating values left for the dataset.
    pub fn template(&self) -> ModelConfig {
        let mut c = ModelConfig::new(0, 0, Vec::new());
        c.mode = self.mode;
        c.cell = self.cell;
        c.steps = self.steps;
        c.hidden = self.hidden;
        c.output = self.output;
        c.recurrent_hidden = self.recurrent_hidden;
        c.accumulation = self.accumulation;
        c.norm = self.norm;
        c.dropout = self.dropout;
        c.ordinal_sharing = self.ordinal_sharing;
        c.basis_count = self.basis_count;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub format: DatasetFormat,
    pub test_frac: f64,
    pub val_frac: f64,
}

/// Fully resolved run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub dataset: DatasetSpec,
    pub model: ModelSettings,
    /// `seed` is overwritten per run.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl RunSpec {
    pub fn resolve(file: RunSpecFile) -> Result<Self, ConfigError> {
        let d = file.dataset;
        let format = d.format.unwrap_or(DatasetFormat::Ml100k);
        let (accumulation, norm, epochs) = match format {
            DatasetFormat::Ml100k => (Accumulation::Concat, NormScheme::Left, 1000),
            DatasetFormat::Ml1m => (Accumulation::Sum, NormScheme::Symmetric, 3500),
        };
        let m = file.model;
        let cell = m.cell.unwrap_or(CellKind::None);
        let mode = m.mode.unwrap_or(match cell {
            CellKind::None => SequenceMode::Static,
            _ => SequenceMode::Incremental,
        });
        let defaults = ModelConfig::new(0, 0, Vec::new());
        let model = ModelSettings {
            mode,
            cell,
            steps: m.steps.unwrap_or(if cell == CellKind::None { 1 } else { 10 }),
            hidden: m.hidden.unwrap_or(defaults.hidden),
            output: m.output.unwrap_or(defaults.output),
            recurrent_hidden: m.recurrent_hidden.unwrap_or(defaults.recurrent_hidden),
            accumulation: m.accumulation.unwrap_or(accumulation),
            norm: m.norm.unwrap_or(norm),
            dropout: m.dropout.unwrap_or(defaults.dropout),
            ordinal_sharing: m.ordinal_sharing.unwrap_or(defaults.ordinal_sharing),
            basis_count: m.basis_count.unwrap_or(defaults.basis_count),
        };
        let t = file.train;
        let base = TrainConfig::default();
        let train = TrainConfig {
            epochs: t.epochs.unwrap_or(epochs),
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            beta1: t.beta1.unwrap_or(base.beta1),
            beta2: t.beta2.unwrap_or(base.beta2),
            eps: t.eps.unwrap_or(base.eps),
            ema_decay: t.ema_decay.unwrap_or(base.ema_decay),
            seed: 0,
            eval_every: t.eval_every.unwrap_or(base.eval_every),
        };
        let spec = RunSpec {
            dataset: DatasetSpec {
                path: d.path.ok_or(ConfigError::Missing("dataset.path (or --data)"))?,
                format,
                test_frac: d.test_frac.unwrap_or(0.2),
                val_frac: d.val_frac.unwrap_or(0.2),
            },
            model,
            train,
            seeds: file.seeds.unwrap_or_else(|| vec![0]),
            out: file.out.ok_or(ConfigError::Missing("out (or --out)"))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks everything that can be checked before the data is read.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        for f in [self.dataset.test_frac, self.dataset.val_frac] {
            if !(f > 0.0 && f < 1.0) {
                return Err(ConfigError::Invalid(format!("split fraction {f} outside (0, 1)")));
            }
        }
        // MovieLens ratings are always 1..=5
        let mut probe = self.model.template();
        probe.n_users = 1;
        probe.n_items = 1;
        probe.rating_values = vec![1, 2, 3, 4, 5];
        probe.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> Result<RunSpec, ConfigError> {
        RunSpec::resolve(RunSpecFile::parse(text, "test.toml")?)
    }

    #[test]
    fn defaults_follow_format() {
        let s = spec("out = \"o\"\n[dataset]\npath = \"u.data\"\n").unwrap();
        assert_eq!(s.train.epochs, 1000);
        assert_eq!(s.model.accumulation, Accumulation::Concat);
        assert_eq!(s.model.mode, SequenceMode::Static);
        assert_eq!(s.seeds, vec![0]);
        let s = spec("out = \"o\"\n[dataset]\npath = \"r.dat\"\nformat = \"ml1m\"\n[model]\ncell = \"lstm\"\n").unwrap();
        assert_eq!((s.train.epochs, s.model.norm), (3500, NormScheme::Symmetric));
        assert_eq!((s.model.mode, s.model.steps), (SequenceMode::Incremental, 10));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = spec("out = \"o\"\n[model]\nhiden = 3\n").unwrap_err();
        assert!(err.to_string().contains("hiden"), "{err}");
    }

    #[test]
    fn disjoint_without_cell_is_rejected() {
        let err = spec("out = \"o\"\n[dataset]\npath = \"u\"\n[model]\nmode = \"disjoint\"\ncell = \"none\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn missing_path() {
        assert!(matches!(spec("out = \"o\"\n"), Err(ConfigError::Missing(_))));
    }
}
