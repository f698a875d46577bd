//! The online correction state machine: predict with the current lite
//! network, then adapt it on the delayed ground truth.
//!
//! Every mode computes `ŷ = base + σ·(c_s·ĝ_s + c_t·ĝ_t)` where `base` is the
//! original forecast (or the scaler mean when the original output is dropped)
//! and `c_s`, `c_t` are per-node coefficients: the adaptive vectors, a
//! constant one, or absent. The nets read the forecast in scaler units
//! `(o − μ)/σ`; with the identity scaler that is the raw forecast.

mod checkpoint;
pub mod stream;
pub mod witness;

use std::ops::Range;

use crate::decomposition::{decompose, DecompConfig};
use crate::error::{Error, Result};
use crate::network::{Activation, CorrectionNet, NetSpec, Tape};
use crate::optimizer::{clip_grad_norm, Optimizer, OptimizerKind, DEFAULT_LR};
use crate::scalar::Scalar;
use crate::tensor::{NodeVector, SeriesTensor, Shape};

pub use stream::{run_stream, RunReport, StreamEntry};
pub use witness::{theorem1_witness, theorem2_witness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum AblationMode {
    M0,
    M1,
    M2,
    M3,
    M4,
    #[default]
    M5,
    M6,
}

/// How one correction path enters the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gate {
    Off,
    Unit,
    Lambda,
}

impl AblationMode {
    pub const ALL: [AblationMode; 7] = [
        AblationMode::M0,
        AblationMode::M1,
        AblationMode::M2,
        AblationMode::M3,
        AblationMode::M4,
        AblationMode::M5,
        AblationMode::M6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::M0 => "M0",
            AblationMode::M1 => "M1",
            AblationMode::M2 => "M2",
            AblationMode::M3 => "M3",
            AblationMode::M4 => "M4",
            AblationMode::M5 => "M5",
            AblationMode::M6 => "M6",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(name))
    }

    pub fn formula(self) -> &'static str {
        match self {
            AblationMode::M0 => "y = o",
            AblationMode::M1 => "y = g_s(o_s) + g_t(o_t)",
            AblationMode::M2 => "y = o + g_s(o_s) + g_t(o_t)",
            AblationMode::M3 => "y = o + lambda_s*g_s(o_s)",
            AblationMode::M4 => "y = o + lambda_t*g_t(o_t)",
            AblationMode::M5 => "y = o + lambda_s*g_s(o_s) + lambda_t*g_t(o_t)",
            AblationMode::M6 => "y = o + lambda*g(o)",
        }
    }

    /// Whether the original forecast is part of the output.
    pub fn keeps_original(self) -> bool {
        self != AblationMode::M1
    }

    /// Whether the nets see decomposed parts rather than the raw forecast.
    pub fn is_decomposed(self) -> bool {
        self != AblationMode::M6
    }

    fn seasonal_gate(self) -> Gate {
        match self {
            AblationMode::M0 | AblationMode::M4 => Gate::Off,
            AblationMode::M1 | AblationMode::M2 => Gate::Unit,
            AblationMode::M3 | AblationMode::M5 | AblationMode::M6 => Gate::Lambda,
        }
    }

    fn trend_gate(self) -> Gate {
        match self {
            AblationMode::M0 | AblationMode::M3 | AblationMode::M6 => Gate::Off,
            AblationMode::M1 | AblationMode::M2 => Gate::Unit,
            AblationMode::M4 | AblationMode::M5 => Gate::Lambda,
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mse" => Some(LossKind::Mse),
            "mae" => Some(LossKind::Mae),
            _ => None,
        }
    }
}

/// Affine map between forecast units and the units the nets work in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler<S> {
    mean: S,
    std: S,
}

impl<S: Scalar> Scaler<S> {
    pub fn identity() -> Self {
        Self {
            mean: S::zero(),
            std: S::one(),
        }
    }

    pub fn new(mean: S, std: S) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std <= S::zero() {
            return Err(Error::config(format!(
                "scaler needs finite mean and positive std, got mean={mean} std={std}"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Z-score over the observed cells of `history`; a constant history
    /// keeps unit spread.
    pub fn fit(history: &SeriesTensor<S>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = 0.0f64;
        for (&v, &m) in history.values().iter().zip(history.mask()) {
            if m {
                n += 1;
                sum += v.as_f64();
            }
        }
        if n == 0 {
            return Err(Error::degenerate("scaler history has no observed cell"));
        }
        let mean = sum / n as f64;
        let var = history
            .values()
            .iter()
            .zip(history.mask())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| (v.as_f64() - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self::new(S::lit(mean), S::lit(std))
    }

    #[inline]
    pub fn mean(&self) -> S {
        self.mean
    }

    #[inline]
    pub fn std(&self) -> S {
        self.std
    }

    pub fn is_identity(&self) -> bool {
        self.mean == S::zero() && self.std == S::one()
    }

    pub fn cast<T: Scalar>(&self) -> Scaler<T> {
        Scaler {
            mean: T::lit(self.mean.as_f64()),
            std: T::lit(self.std.as_f64()),
        }
    }
}

/// Parameter groups whose gradients are zeroed before each optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Freeze {
    pub g_s: bool,
    pub g_t: bool,
    pub lambda_s: bool,
    pub lambda_t: bool,
}

impl Freeze {
    pub const GROUPS: [&'static str; 4] = ["g_s", "g_t", "lambda_s", "lambda_t"];

    /// Parses a comma-separated list of group names; empty or `none` freezes
    /// nothing.
    pub fn parse(list: &str) -> Result<Self> {
        let mut f = Freeze::default();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "none" => {}
                "g_s" => f.g_s = true,
                "g_t" => f.g_t = true,
                "lambda_s" => f.lambda_s = true,
                "lambda_t" => f.lambda_t = true,
                other => {
                    return Err(Error::config(format!(
                        "unknown parameter group `{other}`; expected one of g_s, g_t, lambda_s, lambda_t"
                    )))
                }
            }
        }
        Ok(f)
    }

    fn flags(&self) -> [bool; 4] {
        [self.g_s, self.g_t, self.lambda_s, self.lambda_t]
    }

    pub fn describe(&self) -> String {
        let names: Vec<&str> = Self::GROUPS
            .iter()
            .zip(self.flags())
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect();
        if names.is_empty() {
            "none".into()
        } else {
            names.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub mode: AblationMode,
    pub decomp: DecompConfig,
    /// `None` uses four times the input width.
    pub d_hidden: Option<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub loss: LossKind,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    pub freeze: Freeze,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            mode: AblationMode::M5,
            decomp: DecompConfig::default(),
            d_hidden: None,
            activation: Activation::Gelu,
            optimizer: OptimizerKind::Adam,
            lr: DEFAULT_LR,
            loss: LossKind::Mse,
            clip: None,
            freeze: Freeze::default(),
            seed: 0,
        }
    }
}

/// Trainable state of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState<S> {
    shape: Shape,
    mode: AblationMode,
    decomp: DecompConfig,
    loss: LossKind,
    scaler: Scaler<S>,
    clip: Option<S>,
    freeze: Freeze,
    g_s: CorrectionNet<S>,
    g_t: CorrectionNet<S>,
    lambda_s: NodeVector<S>,
    lambda_t: NodeVector<S>,
    opt: Optimizer<S>,
    entries_seen: u64,
}

/// Net outputs, plus the tape when the pass was recorded for training.
type NetPass<S> = (Vec<S>, Option<Tape<S>>);

/// Forward intermediates kept for the reverse pass.
#[derive(Debug, Clone)]
struct Pass<S> {
    yhat: SeriesTensor<S>,
    seasonal: Option<NetPass<S>>,
    trend: Option<NetPass<S>>,
}

/// A prediction together with the recorded forward pass behind it. Handing
/// it back to [`AdaptState::adapt_prepared`] skips the second forward pass
/// when the state has not changed in between.
#[derive(Debug, Clone)]
pub struct Prepared<S> {
    pass: Pass<S>,
    base: SeriesTensor<S>,
    lambda_s: NodeVector<S>,
    lambda_t: NodeVector<S>,
    scaler: Scaler<S>,
    mode: AblationMode,
}

impl<S: Scalar> Prepared<S> {
    pub fn prediction(&self) -> &SeriesTensor<S> {
        &self.pass.yhat
    }

    pub fn base_forecast(&self) -> &SeriesTensor<S> {
        &self.base
    }
}

fn same_bits<S: Scalar>(a: &[S], b: &[S]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
}

impl<S: Scalar> AdaptState<S> {
    /// Fresh state for forecasts of shape `N×T'×C`: both λ vectors zero, nets
    /// drawn from streams 0 and 1 of `cfg.seed`.
    pub fn new(cfg: &AdaptConfig, forecast_shape: Shape, scaler: Scaler<S>) -> Result<Self> {
        cfg.decomp.check_steps(forecast_shape.n_steps)?;
        if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
            return Err(Error::config(format!("learning rate must be finite and non-negative, got {}", cfg.lr)));
        }
        if let Some(c) = cfg.clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(format!("clip norm must be positive, got {c}")));
            }
        }
        let d_in = forecast_shape.node_len();
        let spec = match cfg.d_hidden {
            Some(h) => NetSpec::new(d_in, h)?,
            None => NetSpec::with_default_hidden(d_in)?,
        }
        .with_activation(cfg.activation);
        let g_s = CorrectionNet::init_stream(spec, cfg.seed, 0);
        let g_t = CorrectionNet::init_stream(spec, cfg.seed, 1);
        let n = forecast_shape.n_nodes;
        let n_params = 2 * spec.param_count() + 2 * n;
        Ok(Self {
            shape: forecast_shape,
            mode: cfg.mode,
            decomp: cfg.decomp,
            loss: cfg.loss,
            scaler,
            clip: cfg.clip.map(S::lit),
            freeze: cfg.freeze,
            g_s,
            g_t,
            lambda_s: NodeVector::zeros(n),
            lambda_t: NodeVector::zeros(n),
            opt: Optimizer::new(cfg.optimizer, n_params, S::lit(cfg.lr)),
            entries_seen: 0,
        })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn mode(&self) -> AblationMode {
        self.mode
    }

    #[inline]
    pub fn decomp(&self) -> DecompConfig {
        self.decomp
    }

    #[inline]
    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    #[inline]
    pub fn scaler(&self) -> Scaler<S> {
        self.scaler
    }

    #[inline]
    pub fn freeze(&self) -> Freeze {
        self.freeze
    }

    pub fn set_freeze(&mut self, freeze: Freeze) {
        self.freeze = freeze;
    }

    #[inline]
    pub fn clip(&self) -> Option<S> {
        self.clip
    }

    #[inline]
    pub fn g_s(&self) -> &CorrectionNet<S> {
        &self.g_s
    }

    #[inline]
    pub fn g_t(&self) -> &CorrectionNet<S> {
        &self.g_t
    }

    #[inline]
    pub fn lambda_s(&self) -> &NodeVector<S> {
        &self.lambda_s
    }

    #[inline]
    pub fn lambda_t(&self) -> &NodeVector<S> {
        &self.lambda_t
    }

    #[inline]
    pub fn optimizer(&self) -> &Optimizer<S> {
        &self.opt
    }

    /// Number of completed updates; skipped entries do not count.
    #[inline]
    pub fn entries_seen(&self) -> u64 {
        self.entries_seen
    }

    pub fn net_spec(&self) -> NetSpec {
        self.g_s.spec()
    }

    /// Length of the flat trainable vector `g_s ∥ g_t ∥ λ_s ∥ λ_t`.
    pub fn param_count(&self) -> usize {
        2 * self.g_s.spec().param_count() + 2 * self.shape.n_nodes
    }

    /// Ranges of `g_s`, `g_t`, `λ_s`, `λ_t` in the flat vector.
    pub fn param_groups(&self) -> [Range<usize>; 4] {
        let p = self.g_s.spec().param_count();
        let n = self.shape.n_nodes;
        [0..p, p..2 * p, 2 * p..2 * p + n, 2 * p + n..2 * p + 2 * n]
    }

    pub fn flat_params(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.g_s.params());
        v.extend_from_slice(self.g_t.params());
        v.extend_from_slice(self.lambda_s.as_slice());
        v.extend_from_slice(self.lambda_t.as_slice());
        v
    }

    pub fn set_flat_params(&mut self, params: &[S]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "state has {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("parameter {i} is not finite")));
        }
        let [gs, gt, ls, lt] = self.param_groups();
        self.g_s.params_mut().copy_from_slice(&params[gs]);
        self.g_t.params_mut().copy_from_slice(&params[gt]);
        self.lambda_s.as_mut_slice().copy_from_slice(&params[ls]);
        self.lambda_t.as_mut_slice().copy_from_slice(&params[lt]);
        Ok(())
    }

    /// Replaces both adaptive vectors.
    pub fn set_lambdas(&mut self, lambda_s: NodeVector<S>, lambda_t: NodeVector<S>) -> Result<()> {
        let n = self.shape.n_nodes;
        if lambda_s.len() != n || lambda_t.len() != n {
            return Err(Error::shape(format!(
                "adaptive vectors need {n} entries, got {} and {}",
                lambda_s.len(),
                lambda_t.len()
            )));
        }
        self.lambda_s = lambda_s;
        self.lambda_t = lambda_t;
        Ok(())
    }

    pub fn set_nets(&mut self, g_s: CorrectionNet<S>, g_t: CorrectionNet<S>) -> Result<()> {
        let spec = self.g_s.spec();
        if g_s.spec() != spec || g_t.spec() != spec {
            return Err(Error::shape("replacement nets must match the state's net spec"));
        }
        self.g_s = g_s;
        self.g_t = g_t;
        Ok(())
    }

    /// Converts every parameter and moment to another scalar type.
    pub fn cast<T: Scalar>(&self) -> AdaptState<T> {
        AdaptState {
            shape: self.shape,
            mode: self.mode,
            decomp: self.decomp,
            loss: self.loss,
            scaler: self.scaler.cast(),
            clip: self.clip.map(|c| T::lit(c.as_f64())),
            freeze: self.freeze,
            g_s: self.g_s.cast(),
            g_t: self.g_t.cast(),
            lambda_s: self.lambda_s.cast(),
            lambda_t: self.lambda_t.cast(),
            opt: self.opt.cast(),
            entries_seen: self.entries_seen,
        }
    }

    fn check_forecast(&self, o: &SeriesTensor<S>, what: &str) -> Result<()> {
        if o.shape() != self.shape {
            return Err(Error::shape(format!(
                "{what} has shape {}, state expects {}",
                o.shape(),
                self.shape
            )));
        }
        Ok(())
    }

    /// Corrected forecast for `o`; the state is not modified.
    pub fn predict(&self, o: &SeriesTensor<S>) -> Result<SeriesTensor<S>> {
        self.check_forecast(o, "base forecast")?;
        Ok(self.pass(o, false)?.yhat)
    }

    /// Like [`predict`](Self::predict), keeping the forward pass for a later
    /// [`adapt_prepared`](Self::adapt_prepared).
    pub fn prepare(&self, o: &SeriesTensor<S>) -> Result<Prepared<S>> {
        self.check_forecast(o, "base forecast")?;
        Ok(Prepared {
            pass: self.pass(o, true)?,
            base: o.clone(),
            lambda_s: self.lambda_s.clone(),
            lambda_t: self.lambda_t.clone(),
            scaler: self.scaler,
            mode: self.mode,
        })
    }

    fn is_current(&self, p: &Prepared<S>) -> bool {
        let tape_ok = |np: &Option<NetPass<S>>, net: &CorrectionNet<S>| match np {
            None => true,
            Some((_, Some(tape))) => tape.is_current_for(net),
            Some((_, None)) => false,
        };
        p.mode == self.mode
            && p.scaler == self.scaler
            && same_bits(p.lambda_s.as_slice(), self.lambda_s.as_slice())
            && same_bits(p.lambda_t.as_slice(), self.lambda_t.as_slice())
            && tape_ok(&p.pass.seasonal, &self.g_s)
            && tape_ok(&p.pass.trend, &self.g_t)
    }

    /// The net inputs in scaler units: seasonal and trend parts, or the
    /// undecomposed forecast for M6. Missing cells read as zero.
    fn net_inputs(&self, o: &SeriesTensor<S>) -> Result<(Vec<S>, Option<Vec<S>>)> {
        let (mu, sigma) = (self.scaler.mean, self.scaler.std);
        let z: Vec<S> = o
            .values()
            .iter()
            .zip(o.mask())
            .map(|(&v, &m)| if m { (v - mu) / sigma } else { S::zero() })
            .collect();
        if !self.mode.is_decomposed() {
            return Ok((z, None));
        }
        let zt = SeriesTensor::from_parts(self.shape, z, o.mask().to_vec());
        let d = decompose(&zt, self.decomp)?;
        let zero_missing = |t: &SeriesTensor<S>| -> Vec<S> {
            t.values()
                .iter()
                .zip(t.mask())
                .map(|(&v, &m)| if m { v } else { S::zero() })
                .collect()
        };
        Ok((zero_missing(&d.seasonal), Some(zero_missing(&d.trend))))
    }

    fn run_net(net: &CorrectionNet<S>, xs: &[S], rows: usize, record: bool) -> Result<NetPass<S>> {
        if record {
            let (out, tape) = net.forward_batch(xs, rows)?;
            Ok((out, Some(tape)))
        } else {
            Ok((net.evaluate_batch(xs, rows)?, None))
        }
    }

    fn pass(&self, o: &SeriesTensor<S>, record: bool) -> Result<Pass<S>> {
        let n_nodes = self.shape.n_nodes;
        let width = self.shape.node_len();
        let sg = self.mode.seasonal_gate();
        let tg = self.mode.trend_gate();
        let (seasonal, trend) = if sg == Gate::Off && tg == Gate::Off {
            (None, None)
        } else {
            let (xs, xt) = self.net_inputs(o)?;
            let seasonal = if sg != Gate::Off {
                Some(Self::run_net(&self.g_s, &xs, n_nodes, record)?)
            } else {
                None
            };
            let trend = match (tg, xt) {
                (Gate::Off, _) | (_, None) => None,
                (_, Some(xt)) => Some(Self::run_net(&self.g_t, &xt, n_nodes, record)?),
            };
            (seasonal, trend)
        };

        let sigma = self.scaler.std;
        let keep = self.mode.keeps_original();
        let mut values = Vec::with_capacity(self.shape.len());
        for n in 0..n_nodes {
            let cs = coefficient(sg, &self.lambda_s, n);
            let ct = coefficient(tg, &self.lambda_t, n);
            for k in n * width..(n + 1) * width {
                let mut sum = S::zero();
                if let Some((gs, _)) = &seasonal {
                    sum = cs * gs[k];
                }
                if let Some((gt, _)) = &trend {
                    sum += ct * gt[k];
                }
                let c = sigma * sum;
                let v = if !keep {
                    self.scaler.mean + c
                } else if c == S::zero() {
                    // A zero correction leaves the base cell's bits untouched.
                    o.values()[k]
                } else {
                    o.values()[k] + c
                };
                values.push(v);
            }
        }
        let yhat = SeriesTensor::with_mask(self.shape, values, o.mask().to_vec())?;
        Ok(Pass {
            yhat,
            seasonal,
            trend,
        })
    }

    /// Training objective on one entry, in scaler units. `None` when no cell
    /// is observed in both the truth and the prediction.
    pub fn loss(&self, o: &SeriesTensor<S>, truth: &SeriesTensor<S>) -> Result<Option<S>> {
        self.check_forecast(o, "base forecast")?;
        self.check_forecast(truth, "truth")?;
        let pass = self.pass(o, false)?;
        Ok(self.residual_loss(&pass.yhat, truth)?.map(|(l, _)| l))
    }

    /// Loss and `dL/dŷ` over counted cells.
    fn residual_loss(&self, yhat: &SeriesTensor<S>, truth: &SeriesTensor<S>) -> Result<Option<(S, Vec<S>)>> {
        let count = yhat
            .mask()
            .iter()
            .zip(truth.mask())
            .filter(|(&a, &b)| a && b)
            .count();
        if count == 0 {
            return Ok(None);
        }
        let sigma = self.scaler.std;
        let cnt = S::lit(count as f64);
        let mut dyhat = vec![S::zero(); yhat.values().len()];
        let mut sum = S::zero();
        match self.loss {
            LossKind::Mse => {
                let denom = cnt * sigma * sigma;
                let two = S::lit(2.0);
                for i in 0..dyhat.len() {
                    if yhat.mask()[i] && truth.mask()[i] {
                        let r = yhat.values()[i] - truth.values()[i];
                        sum += r * r;
                        dyhat[i] = two * r / denom;
                    }
                }
                sum /= denom;
            }
            LossKind::Mae => {
                let denom = cnt * sigma;
                for i in 0..dyhat.len() {
                    if yhat.mask()[i] && truth.mask()[i] {
                        let r = yhat.values()[i] - truth.values()[i];
                        sum += r.abs();
                        dyhat[i] = if r == S::zero() { S::zero() } else { r.signum() / denom };
                    }
                }
                sum /= denom;
            }
        }
        if !sum.is_finite() {
            return Err(Error::contract("adaptation loss is not finite"));
        }
        Ok(Some((sum, dyhat)))
    }

    /// Loss and its gradient over the flat vector `g_s ∥ g_t ∥ λ_s ∥ λ_t`,
    /// before freezing and clipping.
    pub fn loss_and_gradient(&self, o: &SeriesTensor<S>, truth: &SeriesTensor<S>) -> Result<Option<(S, Vec<S>)>> {
        self.check_forecast(o, "base forecast")?;
        self.check_forecast(truth, "truth")?;
        let pass = self.pass(o, true)?;
        self.gradient_from_pass(&pass, truth)
    }

    fn gradient_from_pass(&self, pass: &Pass<S>, truth: &SeriesTensor<S>) -> Result<Option<(S, Vec<S>)>> {
        let Some((loss, dyhat)) = self.residual_loss(&pass.yhat, truth)? else {
            return Ok(None);
        };
        let n_nodes = self.shape.n_nodes;
        let width = self.shape.node_len();
        let sigma = self.scaler.std;
        let [gs_r, gt_r, ls_r, lt_r] = self.param_groups();
        let mut grads = vec![S::zero(); self.param_count()];

        let mut path = |gate: Gate,
                        out: &Option<NetPass<S>>,
                        net: &CorrectionNet<S>,
                        lambda: &NodeVector<S>,
                        net_r: Range<usize>,
                        lam_r: Range<usize>|
         -> Result<()> {
            let Some((g, tape)) = out else { return Ok(()) };
            let tape = tape.as_ref().ok_or_else(|| Error::contract("forward pass was not recorded"))?;
            let mut dg = vec![S::zero(); dyhat.len()];
            for n in 0..n_nodes {
                let coef = coefficient(gate, lambda, n);
                let mut dlam = S::zero();
                for k in n * width..(n + 1) * width {
                    let d = dyhat[k] * sigma;
                    dg[k] = d * coef;
                    dlam += d * g[k];
                }
                if gate == Gate::Lambda {
                    grads[lam_r.start + n] = dlam;
                }
            }
            let ng = net.backward_params(tape, &dg)?;
            grads[net_r].copy_from_slice(ng.as_slice());
            Ok(())
        };
        path(self.mode.seasonal_gate(), &pass.seasonal, &self.g_s, &self.lambda_s, gs_r, ls_r)?;
        path(self.mode.trend_gate(), &pass.trend, &self.g_t, &self.lambda_t, gt_r, lt_r)?;
        Ok(Some((loss, grads)))
    }

    /// One loss evaluation and one optimizer step. Returns `None` and leaves
    /// the state untouched when the entry has no counted cell.
    pub fn adapt(&mut self, o: &SeriesTensor<S>, truth: &SeriesTensor<S>) -> Result<Option<S>> {
        let grads = self.loss_and_gradient(o, truth)?;
        self.apply_gradient(grads)
    }

    /// [`adapt`](Self::adapt) on the prepared forecast, reusing its forward
    /// pass when the state is unchanged since [`prepare`](Self::prepare).
    pub fn adapt_prepared(&mut self, prepared: Prepared<S>, truth: &SeriesTensor<S>) -> Result<Option<S>> {
        if !self.is_current(&prepared) {
            return self.adapt(&prepared.base, truth);
        }
        self.check_forecast(truth, "truth")?;
        let grads = self.gradient_from_pass(&prepared.pass, truth)?;
        self.apply_gradient(grads)
    }

    fn apply_gradient(&mut self, grads: Option<(S, Vec<S>)>) -> Result<Option<S>> {
        let Some((loss, mut grads)) = grads else {
            return Ok(None);
        };
        for (range, frozen) in self.param_groups().into_iter().zip(self.freeze.flags()) {
            if frozen {
                grads[range].fill(S::zero());
            }
        }
        if let Some(max) = self.clip {
            clip_grad_norm(&mut grads, max);
        }
        let mut params = self.flat_params();
        self.opt.step(&mut params, &grads)?;
        self.set_flat_params(&params)?;
        self.entries_seen += 1;
        Ok(Some(loss))
    }
}

#[inline]
fn coefficient<S: Scalar>(gate: Gate, lambda: &NodeVector<S>, node: usize) -> S {
    match gate {
        Gate::Off => S::zero(),
        Gate::Unit => S::one(),
        Gate::Lambda => lambda.as_slice()[node],
    }
}

#[cfg(test)]
mod tests;
