//! Moving-average series decomposition along the time axis.
//!
//! The trend-cyclical part is a centred moving average over the series padded
//! by replicating its first and last step `(k-1)/2` times, so the output keeps
//! the input length. The seasonal part is the residual.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::SeriesTensor;

pub const DEFAULT_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecompConfig {
    kernel: usize,
}

impl DecompConfig {
    pub fn new(kernel: usize) -> Result<Self> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "moving-average kernel must be odd and positive, got {kernel}"
            )));
        }
        Ok(Self { kernel })
    }

    #[inline]
    pub fn kernel(&self) -> usize {
        self.kernel
    }

    #[inline]
    pub fn half_width(&self) -> usize {
        self.kernel / 2
    }

    pub fn check_steps(&self, n_steps: usize) -> Result<()> {
        if self.kernel > 2 * n_steps - 1 {
            return Err(Error::config(format!(
                "kernel {} exceeds 2·T−1 = {} for a {n_steps}-step series",
                self.kernel,
                2 * n_steps - 1
            )));
        }
        Ok(())
    }
}

impl Default for DecompConfig {
    fn default() -> Self {
        Self {
            kernel: DEFAULT_KERNEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<S> {
    pub seasonal: SeriesTensor<S>,
    pub trend: SeriesTensor<S>,
}

/// Splits `series` into seasonal and trend-cyclical parts.
///
/// Window means use observed cells only. A cell whose window holds no
/// observation is missing in the trend; the seasonal mask is the input mask
/// AND the trend mask. Stored values still satisfy `seasonal + trend = input`
/// on every cell.
pub fn decompose<S: Scalar>(series: &SeriesTensor<S>, cfg: DecompConfig) -> Result<Decomposition<S>> {
    let shape = series.shape();
    cfg.check_steps(shape.n_steps)?;
    let half = cfg.half_width();
    let steps = shape.n_steps;
    let chans = shape.n_channels;
    let values = series.values();
    let mask = series.mask();
    let full = series.is_fully_observed();

    let mut trend = vec![S::zero(); shape.len()];
    let mut trend_mask = vec![true; shape.len()];
    for n in 0..shape.n_nodes {
        let base = n * steps * chans;
        for c in 0..chans {
            let at = |t: usize| base + t * chans + c;
            for t in 0..steps {
                let mut sum = S::zero();
                let mut count = 0usize;
                for offset in 0..cfg.kernel() {
                    // Replicate padding is index clamping into the series.
                    let j = (t + offset).saturating_sub(half).min(steps - 1);
                    let i = at(j);
                    if full || mask[i] {
                        sum += values[i];
                        count += 1;
                    }
                }
                let i = at(t);
                if count == 0 {
                    trend_mask[i] = false;
                } else {
                    trend[i] = sum / S::lit(count as f64);
                }
            }
        }
    }
    let seasonal: Vec<S> = values.iter().zip(&trend).map(|(&v, &tr)| v - tr).collect();
    let seasonal_mask: Vec<bool> = mask.iter().zip(&trend_mask).map(|(&a, &b)| a && b).collect();
    let trend_mask: Vec<bool> = mask.iter().zip(&trend_mask).map(|(&a, &b)| a && b).collect();
    Ok(Decomposition {
        seasonal: SeriesTensor::from_parts(shape, seasonal, seasonal_mask),
        trend: SeriesTensor::from_parts(shape, trend, trend_mask),
    })
}
