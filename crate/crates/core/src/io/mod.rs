//! Text file formats: datasets (`STTF v1`), prediction streams (`PRED v1`)
//! and checkpoints (`CKPT v1`).

pub mod checkpoint;
pub mod dataset;
pub mod predictions;

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::Checkpoint;
pub use dataset::{parse_dataset, read_dataset, write_dataset, dataset_to_string};
pub use predictions::{parse_predictions, predictions_to_string, read_predictions, write_predictions};

pub(crate) const MISSING: &str = "nan";

/// Shortest token that parses back to the same `S` value.
pub(crate) fn value_token<S: Scalar>(v: S, observed: bool) -> String {
    if observed {
        format!("{v}")
    } else {
        MISSING.to_string()
    }
}

pub(crate) fn parse_value<S: Scalar>(tok: &str, line: usize) -> Result<Option<S>> {
    if tok.eq_ignore_ascii_case(MISSING) {
        return Ok(None);
    }
    let v = S::from_str(tok).map_err(|_| Error::parse(line, format!("`{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("`{tok}` is not finite")));
    }
    Ok(Some(v))
}

/// Parses `KEY=<int>` fields in order.
pub(crate) fn parse_dims(text: &str, keys: &[&str], line: usize) -> Result<Vec<usize>> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != keys.len() {
        return Err(Error::parse(
            line,
            format!("expected `{}`", keys.iter().map(|k| format!("{k}=<int>")).collect::<Vec<_>>().join(" ")),
        ));
    }
    keys.iter()
        .zip(toks)
        .map(|(key, tok)| {
            let val = tok
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| Error::parse(line, format!("expected `{key}=<int>`, found `{tok}`")))?;
            let n = usize::from_str(val).map_err(|_| Error::parse(line, format!("`{val}` is not a count")))?;
            if n == 0 {
                return Err(Error::parse(line, format!("{key} must be positive")));
            }
            Ok(n)
        })
        .collect()
}

/// Iterates non-empty lines with 1-based numbers.
pub(crate) fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
}
