use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use adcsd::engine::{AblationMode, LossKind};
use adcsd::forecasters::{BaseForecaster, DEFAULT_RIDGE};
use adcsd::io::{parse_dataset, parse_predictions, read_predictions, write_dataset, write_predictions};
use adcsd::metrics::{metrics, MetricReport, Policy};
use adcsd::sim::{DriftKind, DriftScenario, DEFAULT_SEED};
use adcsd::windows::{parse_ratio, split};
use adcsd::Error;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{BaseSource, RunConfig, Scaling};
use crate::error::{HarnessError, Result, StageExt};
use crate::pipeline::{self, ArmRun};
use crate::report::{self, AblationDoc, RunReportDoc, VERSION};
use crate::suites;

pub const PREDICTIONS_FILE: &str = "predictions.txt";
pub const REPORT_FILE: &str = "report.toml";
pub const HORIZONS_FILE: &str = "horizons.csv";
pub const STATE_FILE: &str = "state.ckpt";
pub const ABLATION_FILE: &str = "ablation.toml";
pub const ABLATION_TABLE: &str = "ablation.txt";

/// Seeds of the suites `verify` runs by default.
pub const VERIFY_SEED: u64 = 2024;

#[derive(Debug, Parser)]
#[command(name = "adcsd", version, about = "Online decomposition-based correction of frozen forecasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a drifting synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit a base forecaster on the history steps and save it.
    FitBase(FitBaseArgs),
    /// Stream the test split through one correction mode.
    Adapt(AdaptArgs),
    /// Run all seven modes on the same stream and compare them.
    Ablate(AblateArgs),
    /// Score predictions against truth.
    Eval(EvalArgs),
    /// Compare analytic gradients with extended-precision differences.
    Gradcheck(GradcheckArgs),
    /// Run the gradient, witness and decomposition suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Defaults to eight periods.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value_t = 288)]
    pub period: usize,
    #[arg(long, default_value = "mean-shift")]
    pub drift_kind: String,
    /// Defaults to the start of the last 20% of the series.
    #[arg(long)]
    pub drift_start: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub drift_magnitude: f64,
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
    #[arg(long, default_value_t = 5.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 100.0)]
    pub amp: f64,
    /// Steps over which the drift ramps up; 0 is a step change. Defaults
    /// to ramping until the last step.
    #[arg(long)]
    pub ramp_len: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Base-forecaster choice when fitting in-process.
#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// seasonal-naive, hist-avg or ar.
    #[arg(long, default_value = "seasonal-naive")]
    pub model: String,
    #[arg(long, default_value_t = 288)]
    pub period: usize,
    /// Slots per day for hist-avg; defaults to the period.
    #[arg(long)]
    pub slots_per_day: Option<usize>,
    /// AR lag order; defaults to the input window.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    pub ridge: f64,
}

impl ModelArgs {
    fn source(&self) -> Result<BaseSource> {
        match self.model.as_str() {
            "seasonal-naive" => Ok(BaseSource::SeasonalNaive { period: self.period }),
            "hist-avg" => Ok(BaseSource::HistAvg {
                slots_per_day: self.slots_per_day.unwrap_or(self.period),
            }),
            "ar" => Ok(BaseSource::Ar {
                order: self.order,
                ridge: self.ridge,
            }),
            other => Err(HarnessError::usage(format!(
                "unknown model `{other}`; expected seasonal-naive, hist-avg or ar"
            ))),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitBaseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "6:2:2")]
    pub split: String,
    /// Fraction of steps used as history; defaults to train plus validation.
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long, default_value_t = 12)]
    pub input_steps: usize,
    #[arg(long, default_value_t = 12)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// A run configuration, or any report embedding one; the remaining run
    /// flags are then ignored except `--out`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Forecaster checkpoint from `fit-base`.
    #[arg(long, conflicts_with = "base_preds")]
    pub base: Option<PathBuf>,
    /// Precomputed base forecasts, one per test entry.
    #[arg(long)]
    pub base_preds: Option<PathBuf>,
    #[arg(long, default_value = "6:2:2")]
    pub split: String,
    #[arg(long, default_value_t = 12)]
    pub input_steps: usize,
    #[arg(long, default_value_t = 12)]
    pub horizon: usize,
    #[arg(long, default_value_t = adcsd::decomposition::DEFAULT_KERNEL)]
    pub kernel: usize,
    /// Hidden width of each net; defaults to four times its input width.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value = "gelu")]
    pub activation: String,
    #[arg(long, default_value_t = adcsd::optimizer::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[arg(long, default_value = "mse")]
    pub loss: String,
    /// Global gradient-norm bound.
    #[arg(long)]
    pub clip: Option<f64>,
    /// Comma-separated groups among g_s, g_t, lambda_s, lambda_t.
    #[arg(long, default_value = "none")]
    pub freeze: String,
    #[arg(long, default_value_t = 1)]
    pub label_delay: usize,
    #[arg(long, default_value = "graph")]
    pub policy: String,
    /// zscore or none.
    #[arg(long, default_value = "zscore")]
    pub scaling: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stream only test entries `a` to `b`, written `a:b`.
    #[arg(long)]
    pub entries: Option<String>,
    #[arg(long, required_unless_present = "config")]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    fn run_config(&self, mode: &str) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            let mut cfg = load_config(path)?;
            if let Some(out) = &self.out {
                cfg.out_dir = out.clone();
            }
            return Ok(cfg);
        }
        let base = match (&self.base, &self.base_preds) {
            (Some(p), _) => BaseSource::Fitted { path: p.clone() },
            (_, Some(p)) => BaseSource::Predictions { path: p.clone() },
            _ => self.model.source()?,
        };
        let data = self.data.clone().expect("required by the parser");
        let out = self.out.clone().expect("required by the parser");
        let mut cfg = RunConfig::new(data, base, out);
        cfg.split = parse_ratio(&self.split).map_err(|e| HarnessError::usage(e.to_string()))?;
        cfg.input_steps = self.input_steps;
        cfg.horizon = self.horizon;
        cfg.mode = mode.into();
        cfg.kernel = self.kernel;
        cfg.hidden = self.hidden;
        cfg.activation = self.activation.clone();
        cfg.lr = self.lr;
        cfg.optimizer = self.optimizer.clone();
        cfg.loss = self.loss.clone();
        cfg.clip = self.clip;
        cfg.freeze = self.freeze.clone();
        cfg.label_delay = self.label_delay;
        cfg.policy = self.policy.clone();
        cfg.scaling = Scaling::from_name(&self.scaling)
            .ok_or_else(|| HarnessError::usage(format!("unknown scaling `{}`; expected zscore or none", self.scaling)))?;
        cfg.seed = self.seed;
        cfg.entries = self.entries.as_deref().map(parse_entry_range).transpose()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_entry_range(text: &str) -> Result<[usize; 2]> {
    let bad = || HarnessError::usage(format!("entry range `{text}` is not of the form a:b"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    Ok([a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?])
}

/// A bare configuration or any document with a `[config]` table.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    #[derive(Deserialize)]
    struct Wrapped {
        config: RunConfig,
    }
    let text = std::fs::read_to_string(path).map_err(Error::from).stage("load config")?;
    let bad = |e: toml::de::Error| HarnessError::usage(format!("{}: {e}", path.display()));
    match toml::from_str::<Wrapped>(&text) {
        Ok(w) => Ok(w.config),
        Err(_) => toml::from_str::<RunConfig>(&text).map_err(bad),
    }
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// M0 to M6.
    #[arg(long, default_value = "M5")]
    pub mode: String,
    /// Adaptation state to resume from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Arms run concurrently; defaults to the available cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Aligned truth windows, or a dataset whose test split is windowed
    /// with `--input-steps` and `--split`.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "graph")]
    pub policy: String,
    /// Print the per-horizon breakdown.
    #[arg(long)]
    pub horizons: bool,
    #[arg(long, default_value_t = 12)]
    pub input_steps: usize,
    #[arg(long, default_value = "6:2:2")]
    pub split: String,
    /// Also write the report here, with the per-horizon CSV beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub configs: usize,
    #[arg(long, default_value_t = VERIFY_SEED)]
    pub seed: u64,
    /// f64 or f32.
    #[arg(long, default_value = "f64")]
    pub precision: String,
    #[arg(long, default_value = "M5")]
    pub mode: String,
    #[arg(long, default_value = "mse")]
    pub loss: String,
    /// Largest accepted relative error; defaults to 1e-7 for f64 and 1e-4
    /// for f32.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = VERIFY_SEED)]
    pub seed: u64,
}

/// Parses `args` and runs the command, returning the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a, out),
        Command::FitBase(a) => fit_base(a, out),
        Command::Adapt(a) => adapt(a, out),
        Command::Ablate(a) => ablate(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Verify(a) => verify(a, out),
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| HarnessError::Report(format!("stdout: {e}")))
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let length = a.length.unwrap_or(8 * a.period);
    let scenario = DriftScenario {
        n_nodes: a.nodes,
        n_channels: a.channels,
        length,
        period: a.period,
        base_amp: a.amp,
        noise_std: a.noise,
        drift_start: a.drift_start.unwrap_or((length as f64 * 0.8).floor() as usize),
        drift_kind: DriftKind::from_name(&a.drift_kind).ok_or_else(|| {
            HarnessError::usage(format!(
                "unknown drift kind `{}`; expected mean-shift, amp-scale or phase-shift",
                a.drift_kind
            ))
        })?,
        drift_magnitude: a.drift_magnitude,
        per_node_spread: a.spread,
        ramp_len: a.ramp_len,
        seed: a.seed,
    };
    let data = scenario.generate().stage("simulate")?;
    write_dataset(&a.out, &data).stage("write dataset")?;
    say(out, &format!("wrote {} ({})\n", a.out.display(), data.shape()))
}

fn fit_base(a: FitBaseArgs, out: &mut dyn Write) -> Result<()> {
    let data = adcsd::io::read_dataset::<f64>(&a.data).stage("load dataset")?;
    let steps = data.shape().n_steps;
    let history = match a.train_frac {
        Some(f) if f > 0.0 && f < 1.0 => (steps as f64 * f).floor() as usize,
        Some(f) => return Err(HarnessError::usage(format!("train fraction must lie in (0, 1), got {f}"))),
        None => {
            let fractions = parse_ratio(&a.split).map_err(|e| HarnessError::usage(e.to_string()))?;
            split(steps, fractions).stage("split")?[2].start
        }
    };
    let spec = a.model.source()?.spec().expect("in-process model");
    let hist = data.slice_steps(0..history).stage("split")?;
    let fc = BaseForecaster::fit(&spec, &hist, a.input_steps, a.horizon).stage("fit base")?;
    fc.to_checkpoint().write(&a.out).stage("write base checkpoint")?;
    say(out, &format!("fitted {} on {history} steps, wrote {}\n", fc.kind(), a.out.display()))
}

/// Writes predictions, report, per-horizon CSV and final state of one arm.
pub fn write_arm(cfg: &RunConfig, stream: &pipeline::Stream, arm: &ArmRun, dir: &Path) -> Result<RunReportDoc> {
    pipeline::create_dir(dir)?;
    write_predictions(&dir.join(PREDICTIONS_FILE), &arm.run.predictions).stage("write predictions")?;
    let doc = RunReportDoc::new(cfg, stream, arm);
    report::write_toml(&dir.join(REPORT_FILE), &doc)?;
    report::write_text(&dir.join(HORIZONS_FILE), &report::horizon_csv(&arm.run.metrics)?)?;
    arm.state.to_checkpoint().write(&dir.join(STATE_FILE)).stage("write checkpoint")?;
    Ok(doc)
}

fn adapt(a: AdaptArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.run.run_config(&a.mode)?;
    if a.checkpoint.is_some() {
        cfg.resume = a.checkpoint.clone();
    }
    let mode = cfg.mode()?;
    let stream = pipeline::load_stream(&cfg)?;
    let arm = pipeline::run_arm(&cfg, &stream, mode)?;
    write_arm(&cfg, &stream, &arm, &cfg.out_dir)?;
    say(
        out,
        &format!(
            "{mode} over {} entries ({} updates)\nbase\n{}adapted\n{}wrote {}\n",
            stream.entries.len(),
            arm.run.updates,
            report::metrics_text(&arm.base_metrics, false),
            report::metrics_text(&arm.run.metrics, false),
            cfg.out_dir.display()
        ),
    )
}

fn ablate(a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.run.run_config("all")?;
    cfg.mode = "all".into();
    let stream = pipeline::load_stream(&cfg)?;
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let arms = pipeline::run_ablation(&cfg, &stream, jobs);
    pipeline::create_dir(&cfg.out_dir)?;
    let mut failed = Vec::new();
    let mut arm_results = Vec::with_capacity(arms.len());
    for (mode, r) in arms {
        let r = r.and_then(|arm| write_arm(&cfg, &stream, &arm, &cfg.out_dir.join(mode.name())).map(|_| arm));
        if let Err(e) = &r {
            failed.push(format!("{mode}: {e}"));
        }
        arm_results.push((mode, r));
    }
    let doc = AblationDoc::new(&cfg, &stream, &arm_results);
    report::write_toml(&cfg.out_dir.join(ABLATION_FILE), &doc)?;
    let table = doc.table();
    report::write_text(&cfg.out_dir.join(ABLATION_TABLE), &table)?;
    say(out, &table)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Violation(format!("{} arm(s) failed: {}", failed.len(), failed.join("; "))))
    }
}

#[derive(Debug, Serialize)]
struct EvalDoc {
    version: String,
    command: String,
    pred: PathBuf,
    truth: PathBuf,
    metrics: report::MetricsDoc,
}

/// Truth windows from a predictions-format file or a dataset.
fn load_truth(a: &EvalArgs, horizon: usize) -> Result<Vec<adcsd::tensor::SeriesTensor<f64>>> {
    let text = std::fs::read_to_string(&a.truth).map_err(Error::from).stage("load truth")?;
    if text.starts_with(adcsd::io::dataset::DATASET_MAGIC) {
        let data = parse_dataset::<f64>(&text).stage("load truth")?;
        let fractions = parse_ratio(&a.split).map_err(|e| HarnessError::usage(e.to_string()))?;
        pipeline::test_truths(&data, fractions, a.input_steps, horizon)
    } else {
        parse_predictions::<f64>(&text).stage("load truth")
    }
}

pub fn eval_metrics(a: &EvalArgs) -> Result<MetricReport> {
    let policy = Policy::from_name(&a.policy)
        .ok_or_else(|| HarnessError::usage(format!("unknown policy `{}`; expected graph or grid", a.policy)))?;
    let pred = read_predictions::<f64>(&a.pred).stage("load predictions")?;
    let horizon = pred.first().map_or(1, |p| p.shape().n_steps);
    let truth = load_truth(a, horizon)?;
    if truth.len() != pred.len() {
        return Err(HarnessError::Stage {
            stage: "eval",
            source: Error::StreamLength(format!("{} predictions for {} truth windows", pred.len(), truth.len())),
        });
    }
    metrics(&truth, &pred, policy).stage("eval")
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let m = eval_metrics(&a)?;
    if let Some(path) = &a.out {
        let doc = EvalDoc {
            version: VERSION.into(),
            command: "eval".into(),
            pred: a.pred.clone(),
            truth: a.truth.clone(),
            metrics: (&m).into(),
        };
        report::write_toml(path, &doc)?;
        report::write_text(&path.with_extension("csv"), &report::horizon_csv(&m)?)?;
    }
    say(out, &report::metrics_text(&m, a.horizons))
}

fn grad_suite(
    out: &mut dyn Write,
    configs: usize,
    seed: u64,
    precision: &str,
    mode: AblationMode,
    loss: LossKind,
    verbose: bool,
) -> Result<f64> {
    let cases = suites::gradient_cases(configs, seed, mode, loss);
    let mut worst = 0.0f64;
    for case in &cases {
        let g = match precision {
            "f64" => suites::gradient_check::<f64>(case),
            "f32" => suites::gradient_check::<f32>(case),
            other => return Err(HarnessError::usage(format!("unknown precision `{other}`; expected f64 or f32"))),
        };
        if verbose {
            say(
                out,
                &format!(
                    "seed {:>6} {} h={:<2} {:<9} params {:>5}  max rel err {:.3e} at {} ({:.6e} vs {:.6e})\n",
                    case.seed,
                    case.shape,
                    case.hidden,
                    case.activation.name(),
                    g.params,
                    g.max_rel_err,
                    g.worst_index,
                    g.analytic,
                    g.reference
                ),
            )?;
        }
        worst = worst.max(g.max_rel_err);
    }
    Ok(worst)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let mode = AblationMode::from_name(&a.mode).ok_or_else(|| HarnessError::usage(format!("unknown mode `{}`", a.mode)))?;
    let loss = LossKind::from_name(&a.loss).ok_or_else(|| HarnessError::usage(format!("unknown loss `{}`", a.loss)))?;
    let tol = a.tol.unwrap_or(if a.precision == "f32" { 1e-4 } else { 1e-7 });
    let worst = grad_suite(out, a.configs, a.seed, &a.precision, mode, loss, true)?;
    let ok = worst <= tol;
    say(
        out,
        &format!("{}: worst relative error {worst:.3e} (tolerance {tol:e})\n", if ok { "pass" } else { "FAIL" }),
    )?;
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Violation(format!("gradient check exceeded {tol:e}")))
    }
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> Result<()> {
    let mut violations = Vec::new();
    let mut line = |out: &mut dyn Write, ok: bool, text: String| -> Result<()> {
        if !ok {
            violations.push(text.clone());
        }
        say(out, &format!("{} {text}\n", if ok { "pass" } else { "FAIL" }))
    };

    let worst = grad_suite(out, 20, a.seed, "f64", AblationMode::M5, LossKind::Mse, false)?;
    line(out, worst <= 1e-7, format!("gradients f64, 20 configs: max rel err {worst:.3e} (≤ 1e-7)"))?;

    let w = suites::witness_suite(100, a.seed);
    line(
        out,
        w.violations.is_empty(),
        format!(
            "residual witness, {} instances: max corrected loss {:.3e}, min base loss {:.3e}",
            w.instances, w.t1_max_corrected, w.t1_min_base
        ),
    )?;
    line(
        out,
        w.violations.is_empty(),
        format!(
            "original-output witness, {} instances: max identity err {:.3e}, min strict gap {:.3e}",
            w.instances, w.t2_max_identity_err, w.t2_min_gap
        ),
    )?;
    for v in &w.violations {
        say(out, &format!("  {v}\n"))?;
    }

    let d = suites::decomposition_suite(1000, a.seed);
    line(
        out,
        d.max_abs_err <= 1e-6,
        format!("decomposition, {} tensors: worst reconstruction err {:.3e} (≤ 1e-6)", d.tensors, d.max_abs_err),
    )?;

    // Reported only: single precision cannot resolve the smallest coordinates.
    let worst32 = grad_suite(out, 20, a.seed, "f32", AblationMode::M5, LossKind::Mse, false)?;
    say(out, &format!("info gradients f32, 20 configs: max rel err {worst32:.3e}\n"))?;

    if violations.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Violation(format!("{} check(s) failed", violations.len())))
    }
}
