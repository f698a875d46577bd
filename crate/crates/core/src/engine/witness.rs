//! Constructive witnesses for the two loss-ordering claims: adding a
//! correction to the original output can reach zero loss where the original
//! alone cannot, and the same correction without the original output loses
//! exactly `mean(o²)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{masked_mse, SeriesTensor};

/// The residual `r = y − o`, so that `o + r` matches `y` on every observed
/// cell. Rejected when `o` already equals `y` on all jointly observed cells.
pub fn theorem1_witness<S: Scalar>(o: &SeriesTensor<S>, y: &SeriesTensor<S>) -> Result<SeriesTensor<S>> {
    let base = masked_mse(y, o)?;
    if base == S::zero() {
        return Err(Error::degenerate(
            "forecast already equals the truth; no strict improvement exists",
        ));
    }
    y.sub(o)
}

/// Losses of `o + r` and of `r` alone for the residual witness `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Losses<S> {
    pub with_original: S,
    pub without_original: S,
}

/// Evaluates both models with `r = y − o`. Rejected when `o` is zero on every
/// jointly observed cell, where the two models coincide.
pub fn theorem2_witness<S: Scalar>(o: &SeriesTensor<S>, y: &SeriesTensor<S>) -> Result<Theorem2Losses<S>> {
    o.check_same_shape(y)?;
    let nonzero = o
        .values()
        .iter()
        .zip(o.mask().iter().zip(y.mask()))
        .any(|(&v, (&a, &b))| a && b && v != S::zero());
    if !nonzero {
        return Err(Error::degenerate(
            "forecast is zero on every observed cell; both models coincide",
        ));
    }
    let r = y.sub(o)?;
    Ok(Theorem2Losses {
        with_original: masked_mse(y, &o.add(&r)?)?,
        without_original: masked_mse(y, &r)?,
    })
}
