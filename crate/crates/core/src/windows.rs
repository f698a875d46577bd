//! Chronological splits and stride-1 sliding windows.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::SeriesTensor;

/// Splits `n_steps` into train, validation and test ranges with boundaries
/// at `floor(n_steps · cumulative fraction)`.
pub fn split(n_steps: usize, fractions: [f64; 3]) -> Result<[Range<usize>; 3]> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions sum to {total}, not 1")));
    }
    let b1 = (n_steps as f64 * fractions[0]).floor() as usize;
    let b2 = ((n_steps as f64 * (fractions[0] + fractions[1])).floor() as usize).min(n_steps);
    let ranges = [0..b1, b1..b2, b2..n_steps];
    for (name, r) in ["train", "validation", "test"].iter().zip(&ranges) {
        if r.is_empty() {
            return Err(Error::config(format!(
                "{name} split is empty for {n_steps} steps with fractions {fractions:?}"
            )));
        }
    }
    Ok(ranges)
}

/// Parses `a:b:c` with any positive numbers, normalised to sum to one.
pub fn parse_ratio(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("split ratio `{text}` is not of the form a:b:c")))?;
    if parts.len() != 3 || parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::config(format!("split ratio `{text}` is not of the form a:b:c")));
    }
    let sum: f64 = parts.iter().sum();
    if sum <= 0.0 {
        return Err(Error::config(format!("split ratio `{text}` has zero total")));
    }
    let f = [parts[0] / sum, parts[1] / sum, parts[2] / sum];
    if f.contains(&0.0) {
        return Err(Error::config(format!("split ratio `{text}` leaves a split empty")));
    }
    Ok(f)
}

/// One sliding window: input steps `[start, start+T)` and target steps
/// `[start+T, start+T+T')`, with `start` absolute in the source series.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<S> {
    pub start: usize,
    pub x: SeriesTensor<S>,
    pub y: SeriesTensor<S>,
}

/// Absolute start steps of every window inside `range`.
pub fn window_starts(range: Range<usize>, t_in: usize, t_out: usize) -> Result<Range<usize>> {
    if t_in == 0 || t_out == 0 {
        return Err(Error::config("input and output windows must be positive"));
    }
    let len = range.end.saturating_sub(range.start);
    if len < t_in + t_out {
        return Err(Error::config(format!(
            "range of {len} steps is shorter than T + T' = {}",
            t_in + t_out
        )));
    }
    Ok(range.start..range.start + len - t_in - t_out + 1)
}

/// `L − T − T' + 1` stride-1 windows over `range` of `data`.
pub fn make_entries<S: Scalar>(
    data: &SeriesTensor<S>,
    t_in: usize,
    t_out: usize,
    range: Range<usize>,
) -> Result<Vec<Window<S>>> {
    if range.end > data.shape().n_steps {
        return Err(Error::shape(format!(
            "range ends at {} but the series has {} steps",
            range.end,
            data.shape().n_steps
        )));
    }
    window_starts(range, t_in, t_out)?
        .map(|k| {
            Ok(Window {
                start: k,
                x: data.slice_steps(k..k + t_in)?,
                y: data.slice_steps(k + t_in..k + t_in + t_out)?,
            })
        })
        .collect()
}
