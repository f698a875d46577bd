//! Frozen base forecasters: seasonal naive, historical average, ridge
//! autoregression, and pass-through of externally produced predictions.
//!
//! Parameters never change after fitting. The only mutable companion is the
//! [`RollingBuffer`] a stream loop feeds to a seasonal-naive forecaster whose
//! period exceeds its input window.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::scalar::Scalar;
use crate::tensor::{SeriesTensor, Shape};

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Steps per day for a sampling interval in minutes (5 → 288).
pub fn steps_per_day(interval_minutes: u32) -> Result<usize> {
    if interval_minutes == 0 || 1440 % interval_minutes != 0 {
        return Err(Error::config(format!(
            "sampling interval {interval_minutes} min does not divide a day"
        )));
    }
    Ok((1440 / interval_minutes) as usize)
}

/// What a forecaster may look at when producing one forecast.
#[derive(Debug, Clone, Copy)]
pub struct ForecastInput<'a, S> {
    /// The `N×T×C` input window.
    pub x: &'a SeriesTensor<S>,
    /// Absolute step index of `x`'s first step.
    pub start: usize,
    /// Position of this forecast in the stream.
    pub entry: usize,
    /// Most recent observed steps ending with `x`'s last step.
    pub recent: Option<&'a RollingBuffer<S>>,
}

impl<'a, S: Scalar> ForecastInput<'a, S> {
    pub fn new(x: &'a SeriesTensor<S>) -> Self {
        Self {
            x,
            start: 0,
            entry: 0,
            recent: None,
        }
    }
}

/// The last `capacity` observed steps of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingBuffer<S> {
    n_nodes: usize,
    n_channels: usize,
    capacity: usize,
    // Each step holds `N·C` (value, observed) cells, node-major.
    steps: VecDeque<Vec<(S, bool)>>,
}

impl<S: Scalar> RollingBuffer<S> {
    pub fn new(n_nodes: usize, n_channels: usize, capacity: usize) -> Result<Self> {
        if n_nodes == 0 || n_channels == 0 || capacity == 0 {
            return Err(Error::config("rolling buffer dimensions must be positive"));
        }
        Ok(Self {
            n_nodes,
            n_channels,
            capacity,
            steps: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() == self.capacity
    }

    /// Appends every step of `series`, dropping the oldest beyond capacity.
    pub fn push_steps(&mut self, series: &SeriesTensor<S>) -> Result<()> {
        let s = series.shape();
        if s.n_nodes != self.n_nodes || s.n_channels != self.n_channels {
            return Err(Error::shape(format!(
                "buffer holds {} nodes × {} channels, got {s}",
                self.n_nodes, self.n_channels
            )));
        }
        for t in 0..s.n_steps {
            let mut row = Vec::with_capacity(self.n_nodes * self.n_channels);
            for n in 0..s.n_nodes {
                for c in 0..s.n_channels {
                    let i = s.index(n, t, c);
                    row.push((series.values()[i], series.mask()[i]));
                }
            }
            self.steps.push_back(row);
            if self.steps.len() > self.capacity {
                self.steps.pop_front();
            }
        }
        Ok(())
    }

    /// Cell `(n, c)` at `back` steps before the newest (0 = newest).
    fn get_back(&self, back: usize, n: usize, c: usize) -> Option<(S, bool)> {
        let len = self.steps.len();
        (back < len).then(|| self.steps[len - 1 - back][n * self.n_channels + c])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForecasterSpec {
    SeasonalNaive { period: usize },
    HistoricalAverage { slots_per_day: usize },
    AutoRegressive { order: Option<usize>, ridge: f64 },
}

impl ForecasterSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ForecasterSpec::SeasonalNaive { .. } => "seasonal-naive",
            ForecasterSpec::HistoricalAverage { .. } => "hist-avg",
            ForecasterSpec::AutoRegressive { .. } => "ar",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalNaive {
    pub period: usize,
    pub input_steps: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalAverage<S> {
    pub input_steps: usize,
    pub horizon: usize,
    /// `N×S×C` slot means; unobserved slots are missing.
    pub means: SeriesTensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoRegressive<S> {
    pub input_steps: usize,
    pub horizon: usize,
    pub order: usize,
    pub ridge: f64,
    pub n_nodes: usize,
    pub n_channels: usize,
    /// `N·C` rows of `order` lag weights, most recent lag first.
    pub coef: Vec<S>,
    pub intercept: Vec<S>,
    /// Per-series mean, substituted for missing inputs.
    pub level: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalPredictions<S> {
    pub entries: Vec<SeriesTensor<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaseForecaster<S> {
    SeasonalNaive(SeasonalNaive),
    HistoricalAverage(HistoricalAverage<S>),
    AutoRegressive(AutoRegressive<S>),
    External(ExternalPredictions<S>),
}

impl<S: Scalar> BaseForecaster<S> {
    /// Fits on `history`, whose first step is absolute step 0.
    pub fn fit(spec: &ForecasterSpec, history: &SeriesTensor<S>, input_steps: usize, horizon: usize) -> Result<Self> {
        if input_steps == 0 || horizon == 0 {
            return Err(Error::config("input window and horizon must be positive"));
        }
        let len = history.shape().n_steps;
        match *spec {
            ForecasterSpec::SeasonalNaive { period } => {
                if period == 0 {
                    return Err(Error::config("seasonal period must be positive"));
                }
                if len < period {
                    return Err(Error::config(format!(
                        "seasonal naive needs at least one period ({period} steps) of history, got {len}"
                    )));
                }
                Ok(Self::SeasonalNaive(SeasonalNaive {
                    period,
                    input_steps,
                    horizon,
                }))
            }
            ForecasterSpec::HistoricalAverage { slots_per_day } => {
                fit_hist_avg(history, slots_per_day, input_steps, horizon).map(Self::HistoricalAverage)
            }
            ForecasterSpec::AutoRegressive { order, ridge } => {
                fit_ar(history, order.unwrap_or(input_steps), ridge, input_steps, horizon).map(Self::AutoRegressive)
            }
        }
    }

    pub fn external(entries: Vec<SeriesTensor<S>>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::StreamLength("external prediction stream is empty".into()));
        };
        let shape = first.shape();
        if let Some(i) = entries.iter().position(|e| e.shape() != shape) {
            return Err(Error::shape(format!("external entry {i} differs in shape from entry 0")));
        }
        Ok(Self::External(ExternalPredictions { entries }))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::SeasonalNaive(_) => "seasonal-naive",
            Self::HistoricalAverage(_) => "hist-avg",
            Self::AutoRegressive(_) => "ar",
            Self::External(_) => "external",
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Self::SeasonalNaive(f) => f.horizon,
            Self::HistoricalAverage(f) => f.horizon,
            Self::AutoRegressive(f) => f.horizon,
            Self::External(f) => f.entries[0].shape().n_steps,
        }
    }

    /// Steps of context the forecaster needs beyond `x`, if any.
    pub fn buffer_len(&self) -> Option<usize> {
        match self {
            Self::SeasonalNaive(f) if f.period > f.input_steps => Some(f.period),
            _ => None,
        }
    }

    fn check_input(&self, x: &SeriesTensor<S>, input_steps: usize) -> Result<()> {
        if x.shape().n_steps != input_steps {
            return Err(Error::shape(format!(
                "{} forecaster expects {input_steps} input steps, got {}",
                self.kind(),
                x.shape().n_steps
            )));
        }
        Ok(())
    }

    /// `N×T'×C` forecast for one input window.
    pub fn forecast(&self, input: &ForecastInput<'_, S>) -> Result<SeriesTensor<S>> {
        let x = input.x;
        let xs = x.shape();
        match self {
            Self::SeasonalNaive(f) => {
                self.check_input(x, f.input_steps)?;
                let out = xs.with_steps(f.horizon);
                let mut values = Vec::with_capacity(out.len());
                let mut mask = Vec::with_capacity(out.len());
                if f.period <= f.input_steps {
                    for n in 0..xs.n_nodes {
                        for h in 0..f.horizon {
                            let src = f.input_steps - f.period + h % f.period;
                            for c in 0..xs.n_channels {
                                let i = xs.index(n, src, c);
                                values.push(x.values()[i]);
                                mask.push(x.mask()[i]);
                            }
                        }
                    }
                } else {
                    let buf = input.recent.ok_or_else(|| {
                        Error::config(format!(
                            "seasonal period {} exceeds the {}-step input; a rolling buffer is required",
                            f.period, f.input_steps
                        ))
                    })?;
                    if buf.len() < f.period || buf.n_nodes != xs.n_nodes || buf.n_channels != xs.n_channels {
                        return Err(Error::StreamLength(format!(
                            "rolling buffer holds {} steps, seasonal naive needs {}",
                            buf.len(),
                            f.period
                        )));
                    }
                    for n in 0..xs.n_nodes {
                        for h in 0..f.horizon {
                            // Forecast step h lies h+1 steps after the newest; one
                            // period earlier is period−1−(h mod period) steps back.
                            let back = f.period - 1 - h % f.period;
                            for c in 0..xs.n_channels {
                                let (v, m) = buf.get_back(back, n, c).expect("buffer length checked");
                                values.push(v);
                                mask.push(m);
                            }
                        }
                    }
                }
                SeriesTensor::with_mask(out, values, mask)
            }
            Self::HistoricalAverage(f) => {
                self.check_input(x, f.input_steps)?;
                let ms = f.means.shape();
                if ms.n_nodes != xs.n_nodes || ms.n_channels != xs.n_channels {
                    return Err(Error::shape(format!("input {xs} does not match fitted means {ms}")));
                }
                let slots = ms.n_steps;
                let out = xs.with_steps(f.horizon);
                let mut values = Vec::with_capacity(out.len());
                let mut mask = Vec::with_capacity(out.len());
                for n in 0..xs.n_nodes {
                    for h in 0..f.horizon {
                        let slot = (input.start + f.input_steps + h) % slots;
                        for c in 0..xs.n_channels {
                            let i = ms.index(n, slot, c);
                            values.push(f.means.values()[i]);
                            mask.push(f.means.mask()[i]);
                        }
                    }
                }
                SeriesTensor::with_mask(out, values, mask)
            }
            Self::AutoRegressive(f) => {
                self.check_input(x, f.input_steps)?;
                if xs.n_nodes != f.n_nodes || xs.n_channels != f.n_channels {
                    return Err(Error::shape(format!(
                        "input {xs} does not match the fitted {}×{} series",
                        f.n_nodes, f.n_channels
                    )));
                }
                let out = xs.with_steps(f.horizon);
                let mut values = vec![S::zero(); out.len()];
                let mut lags = vec![S::zero(); f.order];
                for n in 0..xs.n_nodes {
                    for c in 0..xs.n_channels {
                        let s = n * xs.n_channels + c;
                        // lags[0] is the most recent value.
                        for (k, lag) in lags.iter_mut().enumerate() {
                            let i = xs.index(n, f.input_steps - 1 - k, c);
                            *lag = if x.mask()[i] { x.values()[i] } else { f.level[s] };
                        }
                        let w = &f.coef[s * f.order..(s + 1) * f.order];
                        for h in 0..f.horizon {
                            let mut y = f.intercept[s];
                            for (wk, lk) in w.iter().zip(&lags) {
                                y += *wk * *lk;
                            }
                            values[out.index(n, h, c)] = y;
                            lags.rotate_right(1);
                            lags[0] = y;
                        }
                    }
                }
                SeriesTensor::from_values(out, values)
            }
            Self::External(f) => f.entries.get(input.entry).cloned().ok_or_else(|| {
                Error::StreamLength(format!(
                    "external predictions hold {} entries, entry {} was requested",
                    f.entries.len(),
                    input.entry
                ))
            }),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("forecaster");
        ck.push_meta("model", self.kind());
        ck.push_meta("scalar", S::NAME);
        let nan_if_missing = |t: &SeriesTensor<S>| -> Vec<f64> {
            t.values()
                .iter()
                .zip(t.mask())
                .map(|(&v, &m)| if m { v.as_f64() } else { f64::NAN })
                .collect()
        };
        match self {
            Self::SeasonalNaive(f) => {
                ck.push_meta("input_steps", f.input_steps);
                ck.push_meta("horizon", f.horizon);
                ck.push_meta("period", f.period);
            }
            Self::HistoricalAverage(f) => {
                ck.push_meta("input_steps", f.input_steps);
                ck.push_meta("horizon", f.horizon);
                let s = f.means.shape();
                ck.push_array("means", &[s.n_nodes, s.n_steps, s.n_channels], nan_if_missing(&f.means));
            }
            Self::AutoRegressive(f) => {
                ck.push_meta("input_steps", f.input_steps);
                ck.push_meta("horizon", f.horizon);
                ck.push_meta("order", f.order);
                ck.push_float("ridge", f.ridge);
                let series = f.n_nodes * f.n_channels;
                let dims = [f.n_nodes, f.n_channels];
                ck.push_array("coef", &[f.n_nodes, f.n_channels, f.order], f.coef.iter().map(|v| v.as_f64()));
                ck.push_array("intercept", &dims, f.intercept.iter().map(|v| v.as_f64()));
                ck.push_array("level", &dims, f.level.iter().map(|v| v.as_f64()));
                debug_assert_eq!(f.coef.len(), series * f.order);
            }
            Self::External(f) => {
                let s = f.entries[0].shape();
                let all: Vec<f64> = f.entries.iter().flat_map(nan_if_missing).collect();
                ck.push_array("entries", &[f.entries.len(), s.n_nodes, s.n_steps, s.n_channels], all);
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("forecaster")?;
        let lit = |v: &[f64]| v.iter().map(|&x| S::lit(x)).collect::<Vec<S>>();
        let tensor = |shape: Shape, v: &[f64]| SeriesTensor::from_values(shape, lit(v));
        match ck.meta("model")? {
            "seasonal-naive" => Ok(Self::SeasonalNaive(SeasonalNaive {
                period: ck.meta_as("period")?,
                input_steps: ck.meta_as("input_steps")?,
                horizon: ck.meta_as("horizon")?,
            })),
            "hist-avg" => {
                let (dims, vals) = ck.array("means")?;
                if dims.len() != 3 {
                    return Err(Error::shape("hist-avg means must be 3-dimensional"));
                }
                Ok(Self::HistoricalAverage(HistoricalAverage {
                    input_steps: ck.meta_as("input_steps")?,
                    horizon: ck.meta_as("horizon")?,
                    means: tensor(Shape::new(dims[0], dims[1], dims[2])?, vals)?,
                }))
            }
            "ar" => {
                let order: usize = ck.meta_as("order")?;
                let (dims, coef) = ck.array("coef")?;
                if dims.len() != 3 || dims[2] != order {
                    return Err(Error::shape("ar coefficients must be nodes×channels×order"));
                }
                let (n, c) = (dims[0], dims[1]);
                let intercept = lit(ck.array_with_dims("intercept", &[n, c])?);
                let level = lit(ck.array_with_dims("level", &[n, c])?);
                let coef = lit(coef);
                if coef.iter().chain(&intercept).chain(&level).any(|v| !v.is_finite()) {
                    return Err(Error::contract("ar parameters must be finite"));
                }
                Ok(Self::AutoRegressive(AutoRegressive {
                    input_steps: ck.meta_as("input_steps")?,
                    horizon: ck.meta_as("horizon")?,
                    order,
                    ridge: ck.meta_as("ridge")?,
                    n_nodes: n,
                    n_channels: c,
                    coef,
                    intercept,
                    level,
                }))
            }
            "external" => {
                let (dims, vals) = ck.array("entries")?;
                if dims.len() != 4 {
                    return Err(Error::shape("external entries must be entries×nodes×horizon×channels"));
                }
                let shape = Shape::new(dims[1], dims[2], dims[3])?;
                let entries = vals
                    .chunks(shape.len())
                    .map(|chunk| tensor(shape, chunk))
                    .collect::<Result<Vec<_>>>()?;
                Self::external(entries)
            }
            other => Err(Error::config(format!("unknown forecaster model `{other}`"))),
        }
    }
}

fn fit_hist_avg<S: Scalar>(
    history: &SeriesTensor<S>,
    slots: usize,
    input_steps: usize,
    horizon: usize,
) -> Result<HistoricalAverage<S>> {
    let hs = history.shape();
    if slots == 0 {
        return Err(Error::config("slots per day must be positive"));
    }
    if hs.n_steps < slots {
        return Err(Error::config(format!(
            "historical average needs one day ({slots} steps) of history, got {}",
            hs.n_steps
        )));
    }
    let out = hs.with_steps(slots);
    let mut sums = vec![0.0f64; out.len()];
    let mut counts = vec![0u64; out.len()];
    for n in 0..hs.n_nodes {
        for t in 0..hs.n_steps {
            for c in 0..hs.n_channels {
                let i = hs.index(n, t, c);
                if history.mask()[i] {
                    let j = out.index(n, t % slots, c);
                    sums[j] += history.values()[i].as_f64();
                    counts[j] += 1;
                }
            }
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &k)| if k == 0 { S::nan() } else { S::lit(s / k as f64) })
        .collect();
    Ok(HistoricalAverage {
        input_steps,
        horizon,
        means: SeriesTensor::from_values(out, values)?,
    })
}

fn fit_ar<S: Scalar>(
    history: &SeriesTensor<S>,
    order: usize,
    ridge: f64,
    input_steps: usize,
    horizon: usize,
) -> Result<AutoRegressive<S>> {
    let hs = history.shape();
    if order == 0 || order > input_steps {
        return Err(Error::config(format!(
            "autoregressive order must be in 1..={input_steps}, got {order}"
        )));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::config(format!("ridge penalty must be non-negative, got {ridge}")));
    }
    if hs.n_steps < input_steps + horizon {
        return Err(Error::config(format!(
            "autoregression needs at least T + T' = {} steps of history, got {}",
            input_steps + horizon,
            hs.n_steps
        )));
    }
    let series = hs.n_nodes * hs.n_channels;
    let mut coef = Vec::with_capacity(series * order);
    let mut intercept = Vec::with_capacity(series);
    let mut level = Vec::with_capacity(series);
    for n in 0..hs.n_nodes {
        for c in 0..hs.n_channels {
            let obs = |t: usize| {
                let i = hs.index(n, t, c);
                history.mask()[i].then(|| history.values()[i].as_f64())
            };
            // Samples: target at t with lags t−1 … t−order, all observed.
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            for t in order..hs.n_steps {
                let Some(y) = obs(t) else { continue };
                let lags: Option<Vec<f64>> = (1..=order).map(|k| obs(t - k)).collect();
                if let Some(lags) = lags {
                    rows.push((lags, y));
                }
            }
            if rows.len() <= order {
                return Err(Error::config(format!(
                    "node {n} channel {c} has {} complete samples; order {order} needs more",
                    rows.len()
                )));
            }
            let m = rows.len() as f64;
            let mut xbar = vec![0.0; order];
            let mut ybar = 0.0;
            for (lags, y) in &rows {
                for (a, l) in xbar.iter_mut().zip(lags) {
                    *a += l / m;
                }
                ybar += y / m;
            }
            let mut gram = DMatrix::<f64>::zeros(order, order);
            let mut rhs = DVector::<f64>::zeros(order);
            for (lags, y) in &rows {
                let xc: Vec<f64> = lags.iter().zip(&xbar).map(|(l, b)| l - b).collect();
                let yc = y - ybar;
                for i in 0..order {
                    rhs[i] += xc[i] * yc;
                    for j in 0..order {
                        gram[(i, j)] += xc[i] * xc[j];
                    }
                }
            }
            let scale = (0..order).map(|i| gram[(i, i)]).fold(0.0f64, f64::max);
            for i in 0..order {
                gram[(i, i)] += ridge;
            }
            let singular = || {
                Error::Numerical(format!(
                    "normal equations for node {n} channel {c} are singular; use a ridge penalty α > 0"
                ))
            };
            let chol = gram.clone().cholesky().ok_or_else(singular)?;
            let l = chol.l();
            let min_pivot = (0..order).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot.is_nan() || min_pivot <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return Err(singular());
            }
            let beta = chol.solve(&rhs);
            let b0 = ybar - beta.iter().zip(&xbar).map(|(b, x)| b * x).sum::<f64>();
            if beta.iter().any(|b| !b.is_finite()) || !b0.is_finite() {
                return Err(singular());
            }
            coef.extend(beta.iter().map(|&b| S::lit(b)));
            intercept.push(S::lit(b0));
            let all: Vec<f64> = (0..hs.n_steps).filter_map(obs).collect();
            level.push(S::lit(all.iter().sum::<f64>() / all.len() as f64));
        }
    }
    Ok(AutoRegressive {
        input_steps,
        horizon,
        order,
        ridge,
        n_nodes: hs.n_nodes,
        n_channels: hs.n_channels,
        coef,
        intercept,
        level,
    })
}
