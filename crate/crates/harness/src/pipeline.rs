//! Dataset to stream to adapted predictions. The train and validation steps
//! are history: they fit the base forecaster and the scaler. Only the test
//! split is streamed.

use std::ops::Range;
use std::path::Path;

use adcsd::engine::{run_stream, AblationMode, AdaptState, RunReport, Scaler, StreamEntry};
use adcsd::forecasters::{BaseForecaster, ForecastInput, RollingBuffer};
use adcsd::io::{read_dataset, read_predictions, Checkpoint};
use adcsd::metrics::{metrics, MetricReport};
use adcsd::tensor::{SeriesTensor, Shape};
use adcsd::windows::{make_entries, split};
use adcsd::Error;

use crate::config::{BaseSource, RunConfig, Scaling};
use crate::error::{HarnessError, Result, StageExt};

/// The test stream of one dataset, ready for any ablation arm.
#[derive(Debug, Clone)]
pub struct Stream {
    pub data_shape: Shape,
    pub ranges: [Range<usize>; 3],
    /// Index of the first streamed entry within the whole test split.
    pub first_entry: usize,
    /// Test entries in the whole split, before any entry range is applied.
    pub split_entries: usize,
    pub entries: Vec<StreamEntry<f64>>,
    pub scaler: Scaler<f64>,
    pub base_kind: &'static str,
}

impl Stream {
    pub fn forecast_shape(&self) -> Shape {
        self.entries[0].base_forecast.shape()
    }

    pub fn base_forecasts(&self) -> Vec<SeriesTensor<f64>> {
        self.entries.iter().map(|e| e.base_forecast.clone()).collect()
    }

    pub fn truths(&self) -> Vec<SeriesTensor<f64>> {
        self.entries.iter().map(|e| e.truth.clone()).collect()
    }
}

pub fn load_stream(cfg: &RunConfig) -> Result<Stream> {
    let data = read_dataset::<f64>(&cfg.dataset).stage("load dataset")?;
    build_stream(cfg, &data)
}

/// Loads or fits the base forecaster on the history steps.
pub fn base_forecaster(cfg: &RunConfig, history: &SeriesTensor<f64>) -> Result<BaseForecaster<f64>> {
    let fc = match &cfg.base {
        BaseSource::Fitted { path } => {
            let ck = Checkpoint::read(path).stage("load base checkpoint")?;
            BaseForecaster::from_checkpoint(&ck).stage("load base checkpoint")?
        }
        BaseSource::Predictions { path } => {
            let preds = read_predictions::<f64>(path).stage("load base predictions")?;
            BaseForecaster::external(preds).stage("load base predictions")?
        }
        other => {
            let spec = other.spec().expect("in-process source");
            BaseForecaster::fit(&spec, history, cfg.input_steps, cfg.horizon).stage("fit base")?
        }
    };
    if fc.horizon() != cfg.horizon {
        return Err(HarnessError::Stage {
            stage: "load base",
            source: Error::Shape(format!(
                "base forecaster has horizon {}, the run uses {}",
                fc.horizon(),
                cfg.horizon
            )),
        });
    }
    Ok(fc)
}

pub fn build_stream(cfg: &RunConfig, data: &SeriesTensor<f64>) -> Result<Stream> {
    cfg.validate()?;
    let shape = data.shape();
    let ranges = split(shape.n_steps, cfg.split).stage("split")?;
    let test = ranges[2].clone();
    let history = data.slice_steps(0..test.start).stage("split")?;
    let base = base_forecaster(cfg, &history)?;
    let windows = make_entries(data, cfg.input_steps, cfg.horizon, test).stage("make entries")?;
    let split_entries = windows.len();
    if let BaseForecaster::External(ext) = &base {
        if ext.entries.len() != split_entries {
            return Err(HarnessError::Stage {
                stage: "load base predictions",
                source: Error::StreamLength(format!(
                    "{} base predictions for {split_entries} test entries",
                    ext.entries.len()
                )),
            });
        }
    }
    let range = match cfg.entries {
        Some([a, b]) if b <= split_entries => a..b,
        Some([a, b]) => {
            return Err(HarnessError::usage(format!(
                "entry range {a}..{b} exceeds the {split_entries} test entries"
            )))
        }
        None => 0..split_entries,
    };

    let mut buffer = match base.buffer_len() {
        Some(cap) => Some(RollingBuffer::new(shape.n_nodes, shape.n_channels, cap).stage("base forecast")?),
        None => None,
    };
    let mut entries = Vec::with_capacity(range.len());
    for (k, w) in windows.into_iter().enumerate().skip(range.start).take(range.len()) {
        let end = w.start + cfg.input_steps;
        if let Some(buf) = buffer.as_mut() {
            // Top up with every step the buffer has not seen, ending with x's last.
            let from = if buf.is_empty() { end.saturating_sub(base.buffer_len().unwrap()) } else { end - 1 };
            buf.push_steps(&data.slice_steps(from..end).stage("base forecast")?)
                .stage("base forecast")?;
        }
        let input = ForecastInput {
            x: &w.x,
            start: w.start,
            entry: k,
            recent: buffer.as_ref(),
        };
        let o = base.forecast(&input).stage("base forecast")?;
        entries.push(StreamEntry::new(w.x, o, w.y).stage("base forecast")?);
    }

    let scaler = match cfg.scaling {
        Scaling::Zscore => Scaler::fit(&history).stage("fit scaler")?,
        Scaling::None => Scaler::identity(),
    };
    Ok(Stream {
        data_shape: shape,
        ranges,
        first_entry: range.start,
        split_entries,
        entries,
        scaler,
        base_kind: base.kind(),
    })
}

/// Fresh state for `mode`, or the configured checkpoint.
pub fn initial_state(cfg: &RunConfig, stream: &Stream, mode: AblationMode) -> Result<AdaptState<f64>> {
    let shape = stream.forecast_shape();
    match &cfg.resume {
        Some(path) => {
            let ck = Checkpoint::read(path).stage("load checkpoint")?;
            let state = AdaptState::<f64>::from_checkpoint(&ck).stage("load checkpoint")?;
            if state.shape() != shape {
                return Err(HarnessError::Stage {
                    stage: "load checkpoint",
                    source: Error::Shape(format!("checkpoint expects {}, the stream has {shape}", state.shape())),
                });
            }
            if state.mode() != mode {
                return Err(HarnessError::usage(format!(
                    "checkpoint was written in mode {}, the run asks for {mode}",
                    state.mode()
                )));
            }
            Ok(state)
        }
        None => {
            let ac = cfg.adapt_config(mode)?;
            AdaptState::new(&ac, shape, stream.scaler).stage("create state")
        }
    }
}

/// Result of streaming one ablation arm.
#[derive(Debug, Clone)]
pub struct ArmRun {
    pub mode: AblationMode,
    pub run: RunReport<f64>,
    pub base_metrics: MetricReport,
    pub state: AdaptState<f64>,
}

pub fn run_arm(cfg: &RunConfig, stream: &Stream, mode: AblationMode) -> Result<ArmRun> {
    let mut state = initial_state(cfg, stream, mode)?;
    let run = run_stream(&mut state, &stream.entries, cfg.label_delay, cfg.policy()?).stage("stream")?;
    let base_metrics = metrics(&stream.truths(), &stream.base_forecasts(), cfg.policy()?).stage("base metrics")?;
    Ok(ArmRun {
        mode,
        run,
        base_metrics,
        state,
    })
}

/// Runs every arm, at most `jobs` at a time. A failing arm does not stop
/// the others.
pub fn run_ablation(cfg: &RunConfig, stream: &Stream, jobs: usize) -> Vec<(AblationMode, Result<ArmRun>)> {
    let jobs = jobs.clamp(1, AblationMode::ALL.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut done: Vec<(usize, Result<ArmRun>)> = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        let Some(&mode) = AblationMode::ALL.get(i) else { break };
                        out.push((i, run_arm(cfg, stream, mode)));
                    }
                    out
                })
            })
            .collect();
        workers.into_iter().flat_map(|w| w.join().expect("ablation worker panicked")).collect()
    });
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(i, r)| (AblationMode::ALL[i], r)).collect()
}

/// Truth windows of the test split, for evaluating predictions against a
/// dataset file.
pub fn test_truths(data: &SeriesTensor<f64>, fractions: [f64; 3], input_steps: usize, horizon: usize) -> Result<Vec<SeriesTensor<f64>>> {
    let ranges = split(data.shape().n_steps, fractions).stage("split")?;
    let w = make_entries(data, input_steps, horizon, ranges[2].clone()).stage("make entries")?;
    Ok(w.into_iter().map(|w| w.y).collect())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::from).stage("create output directory")
}
