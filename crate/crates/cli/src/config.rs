//! Run configuration: a flat TOML file merged with command-line flags
//! (flags win).

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use soh_klstm::model::{ModelKind, ModelSpec};
use soh_klstm::recurrent::KanShape;
use soh_klstm::train::TrainConfig;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 42;

/// Every tunable, all optional. The same struct is read from the config file
/// and from flags; [`RunOptions::merge`] layers flags over the file.
#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    /// Cell type: lstm or klstm
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    /// Window length L (cycles per input sequence)
    #[arg(long)]
    pub window: Option<usize>,
    /// B-spline degree k
    #[arg(long)]
    pub degree: Option<usize>,
    /// Inner spline basis size G
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Outer spline basis size G_out
    #[arg(long)]
    pub grid_out: Option<usize>,
    /// Spline aggregation channels Q
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Early-stopping patience in epochs
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr_factor: Option<f64>,
    #[arg(long)]
    pub lr_patience: Option<usize>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nominal capacity in Ah, used when the CSV has no header value
    #[arg(long)]
    pub nominal_capacity: Option<f64>,
    /// Clip the global gradient norm (10.0 when given without a value)
    #[arg(long, num_args = 0..=1, default_missing_value = "10.0")]
    pub clip_grad: Option<f64>,
    /// Input CSV
    #[arg(long)]
    pub data: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($base:ident, $over:ident; $($f:ident),*) => {
        RunOptions { $($f: $over.$f.or($base.$f)),* }
    };
}

/// Documented bounds for each numeric option.
const LIMITS: &[(&str, usize, usize)] = &[
    ("hidden_size", 1, 1024),
    ("window", 1, 512),
    ("degree", 1, 5),
    ("grid_size", 2, 64),
    ("grid_out", 2, 64),
    ("channels", 1, 16),
    ("batch_size", 1, 4096),
    ("max_epochs", 1, 100_000),
    ("patience", 1, 100_000),
    ("lr_patience", 1, 100_000),
];

fn in_range(name: &str, v: usize) -> Result<usize, CliError> {
    let &(_, lo, hi) = LIMITS.iter().find(|(n, ..)| *n == name).expect("known option");
    if (lo..=hi).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{name} must lie in [{lo}, {hi}], got {v}")))
    }
}

impl RunOptions {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {}", path.display(), e.message())))
    }

    /// `self` overridden by every field set in `over`.
    pub fn merge(self, over: RunOptions) -> RunOptions {
        let base = self;
        merge_fields!(base, over; model, hidden_size, window, degree, grid_size, grid_out, channels, lr,
            batch_size, max_epochs, patience, lr_factor, lr_patience, min_lr, seed, nominal_capacity,
            clip_grad, data)
    }

    /// Load the optional config file and layer the flags on top.
    pub fn resolve(config: Option<&Path>, flags: RunOptions) -> Result<Self, CliError> {
        let base = match config {
            Some(p) => RunOptions::from_file(p)?,
            None => RunOptions::default(),
        };
        Ok(base.merge(flags))
    }

    pub fn kind(&self) -> Result<ModelKind, CliError> {
        match &self.model {
            None => Ok(ModelKind::Klstm),
            Some(s) => s.parse().map_err(|e: soh_klstm::Error| CliError::Usage(e.to_string())),
        }
    }

    fn has_architecture(&self) -> bool {
        self.model.is_some()
            || self.hidden_size.is_some()
            || self.window.is_some()
            || self.degree.is_some()
            || self.grid_size.is_some()
            || self.grid_out.is_some()
            || self.channels.is_some()
    }

    /// Architecture with defaults for unset fields.
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        self.spec_over(ModelSpec::default())
    }

    /// `base` with every architecture field that is set here replaced, or
    /// `None` when no architecture field is set.
    pub fn spec_override(&self, base: ModelSpec) -> Result<Option<ModelSpec>, CliError> {
        if !self.has_architecture() {
            return Ok(None);
        }
        self.spec_over(base).map(Some)
    }

    fn spec_over(&self, base: ModelSpec) -> Result<ModelSpec, CliError> {
        let kind = match &self.model {
            Some(_) => self.kind()?,
            None => base.kind,
        };
        let degree = in_range("degree", self.degree.unwrap_or(base.kan.degree))?;
        let inner = in_range("grid_size", self.grid_size.unwrap_or(base.kan.inner_basis))?;
        let outer = in_range("grid_out", self.grid_out.unwrap_or(base.kan.outer_basis))?;
        for (name, g) in [("grid_size", inner), ("grid_out", outer)] {
            if g <= degree {
                return Err(CliError::Usage(format!("{name} ({g}) must exceed degree ({degree})")));
            }
        }
        Ok(ModelSpec {
            kind,
            hidden_size: in_range("hidden_size", self.hidden_size.unwrap_or(base.hidden_size))?,
            input_size: base.input_size,
            window: in_range("window", self.window.unwrap_or(base.window))?,
            kan: KanShape {
                degree,
                inner_basis: inner,
                outer_basis: outer,
                channels: in_range("channels", self.channels.unwrap_or(base.kan.channels))?,
            },
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let lr = self.lr.unwrap_or(d.lr);
        let min_lr = self.min_lr.unwrap_or(d.min_lr);
        let lr_factor = self.lr_factor.unwrap_or(d.lr_factor);
        if !(lr > 0.0 && lr <= 1.0) {
            return Err(CliError::Usage(format!("lr must lie in (0, 1], got {lr}")));
        }
        if !(0.0..=lr).contains(&min_lr) {
            return Err(CliError::Usage(format!("min_lr must lie in [0, lr], got {min_lr}")));
        }
        if !(lr_factor > 0.0 && lr_factor < 1.0) {
            return Err(CliError::Usage(format!("lr_factor must lie in (0, 1), got {lr_factor}")));
        }
        if let Some(c) = self.clip_grad {
            if !(c > 0.0 && c.is_finite()) {
                return Err(CliError::Usage(format!("clip_grad must be positive, got {c}")));
            }
        }
        Ok(TrainConfig {
            batch_size: in_range("batch_size", self.batch_size.unwrap_or(d.batch_size))?,
            max_epochs: in_range("max_epochs", self.max_epochs.unwrap_or(d.max_epochs))?,
            lr,
            patience: in_range("patience", self.patience.unwrap_or(d.patience))?,
            lr_patience: in_range("lr_patience", self.lr_patience.unwrap_or(d.lr_patience))?,
            lr_factor,
            min_lr,
            clip_grad: self.clip_grad,
            shuffle: true,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn nominal_fallback(&self) -> Result<Option<f64>, CliError> {
        match self.nominal_capacity {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                Err(CliError::Usage(format!("nominal_capacity must be positive, got {v}")))
            }
            other => Ok(other),
        }
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("no input data: pass --data or set `data` in the config".into()))
    }
}
