//! Report documents: a TOML file that embeds the full run configuration,
//! and a per-horizon CSV for plotting.

use std::path::Path;

use adcsd::engine::AblationMode;
use adcsd::metrics::MetricReport;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::{ArmRun, Stream};

pub const VERSION: &str = concat!("adcsd ", env!("CARGO_PKG_VERSION"));

pub const MAPE_ZERO_RULE: &str = "cells with truth 0 are excluded from MAPE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub policy: String,
    pub mape_zero_rule: String,
    pub mae: f64,
    pub mape_percent: f64,
    pub rmse: f64,
    pub count: u64,
    pub mape_count: u64,
    pub mae_per_horizon: Vec<f64>,
    pub mape_per_horizon: Vec<f64>,
    pub rmse_per_horizon: Vec<f64>,
    pub count_per_horizon: Vec<u64>,
    pub mape_count_per_horizon: Vec<u64>,
}

impl From<&MetricReport> for MetricsDoc {
    fn from(m: &MetricReport) -> Self {
        Self {
            policy: m.policy.name().into(),
            mape_zero_rule: MAPE_ZERO_RULE.into(),
            mae: m.mae,
            mape_percent: m.mape,
            rmse: m.rmse,
            count: m.count,
            mape_count: m.mape_count,
            mae_per_horizon: m.mae_per_horizon.clone(),
            mape_per_horizon: m.mape_per_horizon.clone(),
            rmse_per_horizon: m.rmse_per_horizon.clone(),
            count_per_horizon: m.count_per_horizon.clone(),
            mape_count_per_horizon: m.mape_count_per_horizon.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDoc {
    pub nodes: usize,
    pub channels: usize,
    pub steps: usize,
    pub train: [usize; 2],
    pub val: [usize; 2],
    pub test: [usize; 2],
    pub split_entries: usize,
    pub first_entry: usize,
    pub entries: usize,
    pub base: String,
    pub scaler_mean: f64,
    pub scaler_std: f64,
}

impl From<&Stream> for DataDoc {
    fn from(s: &Stream) -> Self {
        let r = |i: usize| [s.ranges[i].start, s.ranges[i].end];
        Self {
            nodes: s.data_shape.n_nodes,
            channels: s.data_shape.n_channels,
            steps: s.data_shape.n_steps,
            train: r(0),
            val: r(1),
            test: r(2),
            split_entries: s.split_entries,
            first_entry: s.first_entry,
            entries: s.entries.len(),
            base: s.base_kind.into(),
            scaler_mean: s.scaler.mean(),
            scaler_std: s.scaler.std(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationDoc {
    pub mode: String,
    pub formula: String,
    pub updates: u64,
    pub skipped: usize,
    pub entries_seen: u64,
    pub mean_loss: Option<f64>,
    pub last_loss: Option<f64>,
    /// Final per-node weights; larger magnitudes mark nodes the stream
    /// corrected harder.
    pub lambda_s: Vec<f64>,
    pub lambda_t: Vec<f64>,
}

impl From<&ArmRun> for AdaptationDoc {
    fn from(a: &ArmRun) -> Self {
        let losses: Vec<f64> = a.run.losses.iter().flatten().copied().collect();
        Self {
            mode: a.mode.name().into(),
            formula: a.mode.formula().into(),
            updates: a.run.updates,
            skipped: a.run.losses.len() - losses.len(),
            entries_seen: a.state.entries_seen(),
            mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            last_loss: losses.last().copied(),
            lambda_s: a.run.lambda_s.as_slice().to_vec(),
            lambda_t: a.run.lambda_t.as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReportDoc {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub data: DataDoc,
    pub metrics: MetricsDoc,
    /// The base forecasts scored under the same policy.
    pub base_metrics: MetricsDoc,
    pub adaptation: AdaptationDoc,
}

impl RunReportDoc {
    pub fn new(cfg: &RunConfig, stream: &Stream, arm: &ArmRun) -> Self {
        let mut config = cfg.clone();
        config.mode = arm.mode.name().into();
        Self {
            version: VERSION.into(),
            command: "adapt".into(),
            config,
            data: stream.into(),
            metrics: (&arm.run.metrics).into(),
            base_metrics: (&arm.base_metrics).into(),
            adaptation: arm.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub mode: String,
    pub formula: String,
    pub status: String,
    pub mae: Option<f64>,
    pub mape_percent: Option<f64>,
    pub rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDoc {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub data: DataDoc,
    pub arms: Vec<ArmRow>,
}

impl AblationDoc {
    pub fn new(cfg: &RunConfig, stream: &Stream, arms: &[(AblationMode, Result<ArmRun>)]) -> Self {
        let mut config = cfg.clone();
        config.mode = "all".into();
        let arms = arms
            .iter()
            .map(|(mode, r)| match r {
                Ok(a) => ArmRow {
                    mode: mode.name().into(),
                    formula: mode.formula().into(),
                    status: "ok".into(),
                    mae: Some(a.run.metrics.mae),
                    mape_percent: Some(a.run.metrics.mape),
                    rmse: Some(a.run.metrics.rmse),
                    error: None,
                },
                Err(e) => ArmRow {
                    mode: mode.name().into(),
                    formula: mode.formula().into(),
                    status: "failed".into(),
                    mae: None,
                    mape_percent: None,
                    rmse: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        Self {
            version: VERSION.into(),
            command: "ablate".into(),
            config,
            data: stream.into(),
            arms,
        }
    }

    /// Fixed-width MAE/MAPE/RMSE table, one row per mode.
    pub fn table(&self) -> String {
        let mut out = format!("{:<4} {:>12} {:>10} {:>12}  {}\n", "mode", "MAE", "MAPE%", "RMSE", "formula");
        for r in &self.arms {
            match (r.mae, r.mape_percent, r.rmse) {
                (Some(mae), Some(mape), Some(rmse)) => {
                    out += &format!("{:<4} {mae:>12.6} {mape:>10.4} {rmse:>12.6}  {}\n", r.mode, r.formula)
                }
                _ => out += &format!("{:<4} failed: {}\n", r.mode, r.error.as_deref().unwrap_or("unknown")),
            }
        }
        out
    }
}

pub fn to_toml<T: Serialize>(doc: &T) -> Result<String> {
    toml::to_string(doc).map_err(|e| HarnessError::Report(e.to_string()))
}

pub fn write_toml<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    write_text(path, &to_toml(doc)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct HorizonRow {
    horizon: usize,
    count: u64,
    mae: f64,
    rmse: f64,
    mape_count: u64,
    mape_percent: f64,
}

/// One row per horizon step, numbered from 1.
pub fn horizon_csv(m: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in 0..m.mae_per_horizon.len() {
        w.serialize(HorizonRow {
            horizon: h + 1,
            count: m.count_per_horizon[h],
            mae: m.mae_per_horizon[h],
            rmse: m.rmse_per_horizon[h],
            mape_count: m.mape_count_per_horizon[h],
            mape_percent: m.mape_per_horizon[h],
        })
        .map_err(|e| HarnessError::Report(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Report(e.to_string()))
}

/// Human-readable metric summary, optionally with the per-horizon breakdown.
pub fn metrics_text(m: &MetricReport, horizons: bool) -> String {
    let mut out = format!(
        "policy {}  cells {} (MAPE cells {})\nMAE  {:.6}\nMAPE {:.4}%\nRMSE {:.6}\n",
        m.policy.name(),
        m.count,
        m.mape_count,
        m.mae,
        m.mape,
        m.rmse
    );
    if horizons {
        out += &format!("{:>3} {:>8} {:>12} {:>10} {:>12}\n", "h", "cells", "MAE", "MAPE%", "RMSE");
        for h in 0..m.mae_per_horizon.len() {
            out += &format!(
                "{:>3} {:>8} {:>12.6} {:>10.4} {:>12.6}\n",
                h + 1,
                m.count_per_horizon[h],
                m.mae_per_horizon[h],
                m.mape_per_horizon[h],
                m.rmse_per_horizon[h]
            );
        }
    }
    out
}
