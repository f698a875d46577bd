//! Prequential replay: every entry is predicted before its truth is used.

use super::{AdaptState, Prepared};
use crate::error::{Error, Result};
use crate::metrics::{MetricAccumulator, MetricReport, Policy};
use crate::scalar::Scalar;
use crate::tensor::{NodeVector, SeriesTensor};

/// One prequential unit. `truth` is consumed only by updates.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEntry<S> {
    pub x: SeriesTensor<S>,
    pub base_forecast: SeriesTensor<S>,
    pub truth: SeriesTensor<S>,
}

impl<S: Scalar> StreamEntry<S> {
    pub fn new(x: SeriesTensor<S>, base_forecast: SeriesTensor<S>, truth: SeriesTensor<S>) -> Result<Self> {
        base_forecast.check_same_shape(&truth)?;
        let (xs, os) = (x.shape(), base_forecast.shape());
        if xs.n_nodes != os.n_nodes || xs.n_channels != os.n_channels {
            return Err(Error::shape(format!("input window {xs} does not match forecast {os}")));
        }
        Ok(Self {
            x,
            base_forecast,
            truth,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport<S> {
    pub predictions: Vec<SeriesTensor<S>>,
    /// Training loss of the update that consumed each entry's truth; `None`
    /// when the entry had no counted cell.
    pub losses: Vec<Option<S>>,
    pub updates: u64,
    pub metrics: MetricReport,
    pub lambda_s: NodeVector<S>,
    pub lambda_t: NodeVector<S>,
}

/// Streams `entries` through `state`. Entry `t` is predicted by the state
/// that has absorbed the truths of entries `0 ..= t − max(1, label_delay)`;
/// the remaining truths are absorbed after the last prediction.
pub fn run_stream<S: Scalar>(
    state: &mut AdaptState<S>,
    entries: &[StreamEntry<S>],
    label_delay: usize,
    policy: Policy,
) -> Result<RunReport<S>> {
    let Some(first) = entries.first() else {
        return Err(Error::config("stream has no entries"));
    };
    let x_shape = first.x.shape();
    for (i, e) in entries.iter().enumerate() {
        if e.x.shape() != x_shape || e.base_forecast.shape() != state.shape() || e.truth.shape() != state.shape() {
            return Err(Error::shape(format!(
                "entry {i} has shapes x={} o={} y={}, stream expects x={x_shape} o={}",
                e.x.shape(),
                e.base_forecast.shape(),
                e.truth.shape(),
                state.shape()
            )));
        }
    }
    let delay = label_delay.max(1);
    let mut predictions = Vec::with_capacity(entries.len());
    let mut losses = vec![None; entries.len()];
    let mut acc = MetricAccumulator::new(policy, state.shape().n_steps);
    let mut absorbed = 0usize;
    let mut updates = 0u64;
    // The newest prediction's forward pass; reusable by its own update when
    // nothing else was absorbed in between, as with a delay of one.
    let mut last: Option<(usize, Prepared<S>)> = None;
    let mut absorb = |state: &mut AdaptState<S>, j: usize, last: &mut Option<(usize, Prepared<S>)>| -> Result<()> {
        let e = &entries[j];
        losses[j] = match last.take() {
            Some((i, prepared)) if i == j => state.adapt_prepared(prepared, &e.truth)?,
            other => {
                *last = other;
                state.adapt(&e.base_forecast, &e.truth)?
            }
        };
        if losses[j].is_some() {
            updates += 1;
        }
        Ok(())
    };
    for (t, e) in entries.iter().enumerate() {
        while absorbed + delay <= t {
            absorb(state, absorbed, &mut last)?;
            absorbed += 1;
        }
        let prepared = state.prepare(&e.base_forecast)?;
        acc.push_tensors(&e.truth, prepared.prediction())?;
        predictions.push(prepared.prediction().clone());
        last = Some((t, prepared));
    }
    while absorbed < entries.len() {
        absorb(state, absorbed, &mut last)?;
        absorbed += 1;
    }
    Ok(RunReport {
        predictions,
        losses,
        updates,
        metrics: acc.report()?,
        lambda_s: state.lambda_s().clone(),
        lambda_t: state.lambda_t().clone(),
    })
}
