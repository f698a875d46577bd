//! `PRED v1`: one block of `H` lines per entry, each line holding `N·C`
//! values for one horizon step.

use std::fs;
use std::path::Path;

use super::{numbered_lines, parse_dims, parse_value, value_token};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{SeriesTensor, Shape};

pub const PREDICTIONS_MAGIC: &str = "PRED v1";

pub fn parse_predictions<S: Scalar>(text: &str) -> Result<Vec<SeriesTensor<S>>> {
    let mut lines = numbered_lines(text);
    match lines.next() {
        Some((_, l)) if l.trim() == PREDICTIONS_MAGIC => {}
        Some((n, l)) => return Err(Error::parse(n, format!("expected `{PREDICTIONS_MAGIC}`, found `{l}`"))),
        None => return Err(Error::parse(1, "empty predictions file")),
    }
    let (dn, dims) = lines.next().ok_or_else(|| Error::parse(2, "missing dimension line"))?;
    let d = parse_dims(dims, &["E", "N", "H", "C"], dn)?;
    let (n_entries, n_nodes, horizon, n_ch) = (d[0], d[1], d[2], d[3]);
    let shape = Shape::new(n_nodes, horizon, n_ch)?;
    let width = n_nodes * n_ch;
    let mut entries = Vec::with_capacity(n_entries);
    let mut values = vec![S::zero(); shape.len()];
    let mut mask = vec![false; shape.len()];
    let mut row = 0usize;
    let mut last = dn;
    for (ln, line) in lines {
        last = ln;
        if line.trim().is_empty() {
            continue;
        }
        if row == n_entries * horizon {
            return Err(Error::parse(ln, format!("more than the declared {n_entries}·{horizon} rows")));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != width {
            return Err(Error::parse(ln, format!("expected {width} values (N·C), found {}", toks.len())));
        }
        let h = row % horizon;
        for (j, tok) in toks.iter().enumerate() {
            let i = shape.index(j / n_ch, h, j % n_ch);
            match parse_value::<S>(tok, ln)? {
                Some(v) => {
                    values[i] = v;
                    mask[i] = true;
                }
                None => {
                    values[i] = S::zero();
                    mask[i] = false;
                }
            }
        }
        row += 1;
        if row.is_multiple_of(horizon) {
            entries.push(SeriesTensor::with_mask(shape, values.clone(), mask.clone())?);
        }
    }
    if row != n_entries * horizon {
        return Err(Error::parse(
            last,
            format!("declared {} rows (E·H), found {row}", n_entries * horizon),
        ));
    }
    Ok(entries)
}

pub fn predictions_to_string<S: Scalar>(entries: &[SeriesTensor<S>]) -> Result<String> {
    let Some(first) = entries.first() else {
        return Err(Error::config("cannot write an empty prediction stream"));
    };
    let shape = first.shape();
    let mut out = format!(
        "{PREDICTIONS_MAGIC}\nE={} N={} H={} C={}\n",
        entries.len(),
        shape.n_nodes,
        shape.n_steps,
        shape.n_channels
    );
    for (e, entry) in entries.iter().enumerate() {
        if entry.shape() != shape {
            return Err(Error::shape(format!("entry {e} has shape {}, expected {shape}", entry.shape())));
        }
        for h in 0..shape.n_steps {
            let mut first = true;
            for n in 0..shape.n_nodes {
                for c in 0..shape.n_channels {
                    let i = shape.index(n, h, c);
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    out.push_str(&value_token(entry.values()[i], entry.mask()[i]));
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn read_predictions<S: Scalar>(path: &Path) -> Result<Vec<SeriesTensor<S>>> {
    parse_predictions(&fs::read_to_string(path)?)
}

pub fn write_predictions<S: Scalar>(path: &Path, entries: &[SeriesTensor<S>]) -> Result<()> {
    fs::write(path, predictions_to_string(entries)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "PRED v1\nE=2 N=2 H=2 C=1\n1 2\n3 4\n5 nan\n7 8\n";

    #[test]
    fn entries_are_horizon_blocks() {
        let e: Vec<SeriesTensor<f64>> = parse_predictions(TWO).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].get(1, 1, 0), Some(4.0));
        assert_eq!(e[1].get(0, 1, 0), Some(7.0));
        assert_eq!(e[1].get(1, 0, 0), None);
        assert_eq!(predictions_to_string(&e).unwrap(), TWO);
    }

    #[test]
    fn row_count_is_checked() {
        let err = parse_predictions::<f64>("PRED v1\nE=2 N=1 H=2 C=1\n1\n2\n3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err:?}");
        let err = parse_predictions::<f64>("PRED v1\nE=1 N=1 H=1 C=1\n1\n2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let a = SeriesTensor::<f64>::zeros(Shape::new(1, 2, 1).unwrap());
        let b = SeriesTensor::<f64>::zeros(Shape::new(2, 2, 1).unwrap());
        assert!(matches!(predictions_to_string(&[a, b]), Err(Error::Shape(_))));
    }
}
