//! `STTF v1`: a header line, a `N=.. T=.. C=..` line, then one line per time
//! step holding `N·C` values, node-major and channel-minor.

use std::fs;
use std::path::Path;

use super::{numbered_lines, parse_dims, parse_value, value_token};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{SeriesTensor, Shape};

pub const DATASET_MAGIC: &str = "STTF v1";

pub fn parse_dataset<S: Scalar>(text: &str) -> Result<SeriesTensor<S>> {
    let mut lines = numbered_lines(text);
    match lines.next() {
        Some((_, l)) if l.trim() == DATASET_MAGIC => {}
        Some((n, l)) => return Err(Error::parse(n, format!("expected `{DATASET_MAGIC}`, found `{l}`"))),
        None => return Err(Error::parse(1, "empty dataset file")),
    }
    let (dn, dims) = lines.next().ok_or_else(|| Error::parse(2, "missing dimension line"))?;
    let d = parse_dims(dims, &["N", "T", "C"], dn)?;
    let shape = Shape::new(d[0], d[1], d[2])?;
    let (n_nodes, n_steps, n_ch) = (d[0], d[1], d[2]);
    let width = n_nodes * n_ch;
    let mut values = vec![S::zero(); shape.len()];
    let mut mask = vec![false; shape.len()];
    let mut t = 0;
    let mut last = dn;
    for (ln, line) in lines {
        last = ln;
        if line.trim().is_empty() {
            continue;
        }
        if t == n_steps {
            return Err(Error::parse(ln, format!("more than the declared {n_steps} time steps")));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != width {
            return Err(Error::parse(ln, format!("expected {width} values (N·C), found {}", toks.len())));
        }
        for (j, tok) in toks.iter().enumerate() {
            let (n, c) = (j / n_ch, j % n_ch);
            let i = shape.index(n, t, c);
            if let Some(v) = parse_value::<S>(tok, ln)? {
                values[i] = v;
                mask[i] = true;
            }
        }
        t += 1;
    }
    if t != n_steps {
        return Err(Error::parse(last, format!("declared {n_steps} time steps, found {t}")));
    }
    SeriesTensor::with_mask(shape, values, mask)
}

pub fn dataset_to_string<S: Scalar>(data: &SeriesTensor<S>) -> String {
    let shape = data.shape();
    let mut out = format!(
        "{DATASET_MAGIC}\nN={} T={} C={}\n",
        shape.n_nodes, shape.n_steps, shape.n_channels
    );
    for t in 0..shape.n_steps {
        let mut first = true;
        for n in 0..shape.n_nodes {
            for c in 0..shape.n_channels {
                let i = shape.index(n, t, c);
                if !first {
                    out.push(' ');
                }
                first = false;
                out.push_str(&value_token(data.values()[i], data.mask()[i]));
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_dataset<S: Scalar>(path: &Path) -> Result<SeriesTensor<S>> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn write_dataset<S: Scalar>(path: &Path, data: &SeriesTensor<S>) -> Result<()> {
    fs::write(path, dataset_to_string(data))?;
    Ok(())
}
