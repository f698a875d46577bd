//! The complete description of one run. Every report embeds it, and a
//! report file can be fed back through `adapt --config` to repeat the run.

use std::path::PathBuf;

use adcsd::decomposition::DecompConfig;
use adcsd::engine::{AblationMode, AdaptConfig, Freeze, LossKind};
use adcsd::forecasters::{ForecasterSpec, DEFAULT_RIDGE};
use adcsd::metrics::Policy;
use adcsd::network::Activation;
use adcsd::optimizer::{OptimizerKind, DEFAULT_LR};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Where the frozen base forecasts come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseSource {
    /// Fit on the train and validation steps at the start of the run.
    SeasonalNaive { period: usize },
    HistAvg { slots_per_day: usize },
    Ar { order: Option<usize>, ridge: f64 },
    /// A forecaster checkpoint written by `fit-base`.
    Fitted { path: PathBuf },
    /// Precomputed forecasts, one per test entry.
    Predictions { path: PathBuf },
}

impl BaseSource {
    pub fn default_ar() -> Self {
        BaseSource::Ar {
            order: None,
            ridge: DEFAULT_RIDGE,
        }
    }

    /// The fit specification, for the sources fitted in-process.
    pub fn spec(&self) -> Option<ForecasterSpec> {
        match *self {
            BaseSource::SeasonalNaive { period } => Some(ForecasterSpec::SeasonalNaive { period }),
            BaseSource::HistAvg { slots_per_day } => Some(ForecasterSpec::HistoricalAverage { slots_per_day }),
            BaseSource::Ar { order, ridge } => Some(ForecasterSpec::AutoRegressive { order, ridge }),
            BaseSource::Fitted { .. } | BaseSource::Predictions { .. } => None,
        }
    }
}

/// How values are scaled before they reach the correction nets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Z-score fitted on the train and validation steps.
    Zscore,
    None,
}

impl Scaling {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "zscore" => Some(Scaling::Zscore),
            "none" => Some(Scaling::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub input_steps: usize,
    pub horizon: usize,
    pub mode: String,
    pub kernel: usize,
    pub hidden: Option<usize>,
    pub activation: String,
    pub lr: f64,
    pub optimizer: String,
    pub loss: String,
    pub clip: Option<f64>,
    pub freeze: String,
    pub label_delay: usize,
    pub policy: String,
    pub scaling: Scaling,
    pub seed: u64,
    /// Adaptation state to resume from instead of a fresh one.
    pub resume: Option<PathBuf>,
    /// Half-open range of test entries to stream; all of them when absent.
    pub entries: Option<[usize; 2]>,
    pub out_dir: PathBuf,
    pub base: BaseSource,
}

impl RunConfig {
    pub fn new(dataset: PathBuf, base: BaseSource, out_dir: PathBuf) -> Self {
        Self {
            dataset,
            split: [0.6, 0.2, 0.2],
            input_steps: 12,
            horizon: 12,
            mode: AblationMode::M5.name().into(),
            kernel: adcsd::decomposition::DEFAULT_KERNEL,
            hidden: None,
            activation: Activation::Gelu.name().into(),
            lr: DEFAULT_LR,
            optimizer: OptimizerKind::Adam.name().into(),
            loss: LossKind::Mse.name().into(),
            clip: None,
            freeze: "none".into(),
            label_delay: 1,
            policy: Policy::Graph.name().into(),
            scaling: Scaling::Zscore,
            seed: 0,
            resume: None,
            entries: None,
            out_dir,
            base,
        }
    }

    pub fn mode(&self) -> Result<AblationMode> {
        AblationMode::from_name(&self.mode).ok_or_else(|| HarnessError::usage(format!("unknown mode `{}`", self.mode)))
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::from_name(&self.policy)
            .ok_or_else(|| HarnessError::usage(format!("unknown policy `{}`; expected graph or grid", self.policy)))
    }

    /// Engine settings for `mode`, validated.
    pub fn adapt_config(&self, mode: AblationMode) -> Result<AdaptConfig> {
        let usage = |what: &str, v: &str| HarnessError::usage(format!("unknown {what} `{v}`"));
        let decomp = DecompConfig::new(self.kernel).map_err(|e| HarnessError::usage(e.to_string()))?;
        let freeze = Freeze::parse(&self.freeze).map_err(|e| HarnessError::usage(e.to_string()))?;
        Ok(AdaptConfig {
            mode,
            decomp,
            d_hidden: self.hidden,
            activation: Activation::from_name(&self.activation).ok_or_else(|| usage("activation", &self.activation))?,
            optimizer: OptimizerKind::from_name(&self.optimizer).ok_or_else(|| usage("optimizer", &self.optimizer))?,
            lr: self.lr,
            loss: LossKind::from_name(&self.loss).ok_or_else(|| usage("loss", &self.loss))?,
            clip: self.clip,
            freeze,
            seed: self.seed,
        })
    }

    /// Checks everything that can be checked without touching the files.
    /// The mode is left to the command, since ablations run all of them.
    pub fn validate(&self) -> Result<()> {
        self.policy()?;
        self.adapt_config(AblationMode::M5)?;
        if self.input_steps == 0 || self.horizon == 0 {
            return Err(HarnessError::usage("input window and horizon must be positive"));
        }
        if let Some([a, b]) = self.entries {
            if a >= b {
                return Err(HarnessError::usage(format!("entry range {a}..{b} is empty")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Report(e.to_string()))
    }
}
