//! `CKPT v1 <kind>` container: `meta <key> <value>` lines and named arrays.
//!
//! ```text
//! CKPT v1 adapt-state
//! meta mode M5
//! array lambda_s 3
//! 0 0 0
//! array g_s.w1 2 3
//! 1.0000000000000000e-1 -2.5000000000000000e-1 0
//! 3.0000000000000000e-1 0 0
//! ```
//!
//! Array values print with 17 significant digits, so every `f64` survives a
//! save/load cycle and a second save reproduces the file byte for byte.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::numbered_lines;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "CKPT v1";

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Meta { key: String, value: String, line: usize },
    Array { name: String, dims: Vec<usize>, values: Vec<f64>, line: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    kind: String,
    items: Vec<Item>,
    // Last line of the parsed source, used to locate missing sections.
    end_line: usize,
}

/// `0` for zero, `nan` for NaN, otherwise 17 significant digits.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        if v.is_sign_negative() { "-0".into() } else { "0".into() }
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        assert!(is_name(kind), "checkpoint kind `{kind}` must be a bare word");
        Self {
            kind: kind.to_string(),
            items: Vec::new(),
            end_line: 0,
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    /// Fails unless the container holds `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::parse(1, format!("expected a `{kind}` checkpoint, found `{}`", self.kind)));
        }
        Ok(())
    }

    pub fn push_meta(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        assert!(is_name(key), "meta key `{key}` must be a bare word");
        assert!(!value.is_empty() && !value.contains('\n'), "meta value must be one non-empty line");
        self.items.push(Item::Meta {
            key: key.to_string(),
            value,
            line: 0,
        });
    }

    pub fn push_float(&mut self, key: &str, value: f64) {
        self.push_meta(key, format_f64(value));
    }

    /// Appends an array; the last dimension is the row length.
    pub fn push_array(&mut self, name: &str, dims: &[usize], values: impl IntoIterator<Item = f64>) {
        assert!(is_name(name), "array name `{name}` must be a bare word");
        let values: Vec<f64> = values.into_iter().collect();
        assert!(!dims.is_empty() && dims.iter().all(|&d| d > 0), "array dims must be positive");
        assert_eq!(dims.iter().product::<usize>(), values.len(), "array `{name}` size mismatch");
        self.items.push(Item::Array {
            name: name.to_string(),
            dims: dims.to_vec(),
            values,
            line: 0,
        });
    }

    fn missing(&self, what: &str) -> Error {
        Error::parse(self.end_line.max(1), format!("checkpoint has no {what}"))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.items
            .iter()
            .find_map(|it| match it {
                Item::Meta { key: k, value, .. } if k == key => Some(value.as_str()),
                _ => None,
            })
            .ok_or_else(|| self.missing(&format!("meta `{key}`")))
    }

    pub fn has_meta(&self, key: &str) -> bool {
        self.meta(key).is_ok()
    }

    /// Parses a meta value; failures name the meta line.
    pub fn meta_as<T: FromStr>(&self, key: &str) -> Result<T> {
        let (value, line) = self
            .items
            .iter()
            .find_map(|it| match it {
                Item::Meta { key: k, value, line } if k == key => Some((value.as_str(), *line)),
                _ => None,
            })
            .ok_or_else(|| self.missing(&format!("meta `{key}`")))?;
        value
            .parse()
            .map_err(|_| Error::parse(line, format!("meta `{key}` has unreadable value `{value}`")))
    }

    pub fn array(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.items
            .iter()
            .find_map(|it| match it {
                Item::Array { name: n, dims, values, .. } if n == name => Some((dims.as_slice(), values.as_slice())),
                _ => None,
            })
            .ok_or_else(|| self.missing(&format!("array `{name}`")))
    }

    /// The array's values after checking its dimensions.
    pub fn array_with_dims(&self, name: &str, want: &[usize]) -> Result<&[f64]> {
        let (dims, values) = self.array(name)?;
        if dims != want {
            return Err(Error::shape(format!(
                "checkpoint array `{name}` has dims {dims:?}, expected {want:?}"
            )));
        }
        Ok(values)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} {}\n", self.kind);
        for item in &self.items {
            match item {
                Item::Meta { key, value, .. } => {
                    out.push_str(&format!("meta {key} {value}\n"));
                }
                Item::Array { name, dims, values, .. } => {
                    out.push_str("array ");
                    out.push_str(name);
                    for d in dims {
                        out.push_str(&format!(" {d}"));
                    }
                    out.push('\n');
                    let row = *dims.last().expect("dims are non-empty");
                    for chunk in values.chunks(row) {
                        let toks: Vec<String> = chunk.iter().map(|&v| format_f64(v)).collect();
                        out.push_str(&toks.join(" "));
                        out.push('\n');
                    }
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = numbered_lines(text).peekable();
        let kind = match lines.next() {
            Some((n, l)) => {
                let rest = l
                    .strip_prefix(CHECKPOINT_MAGIC)
                    .map(str::trim)
                    .ok_or_else(|| Error::parse(n, format!("expected `{CHECKPOINT_MAGIC} <kind>`, found `{l}`")))?;
                if !is_name(rest) {
                    return Err(Error::parse(n, format!("bad checkpoint kind `{rest}`")));
                }
                rest.to_string()
            }
            None => return Err(Error::parse(1, "empty checkpoint file")),
        };
        let mut items = Vec::new();
        let mut end_line = 1;
        while let Some((ln, line)) = lines.next() {
            end_line = ln;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.first().copied() {
                None => continue,
                Some("meta") => {
                    if toks.len() < 3 || !is_name(toks[1]) {
                        return Err(Error::parse(ln, "expected `meta <key> <value>`"));
                    }
                    let value = line.trim().splitn(3, char::is_whitespace).nth(2).unwrap_or("").trim();
                    items.push(Item::Meta {
                        key: toks[1].to_string(),
                        value: value.to_string(),
                        line: ln,
                    });
                }
                Some("array") => {
                    if toks.len() < 3 || !is_name(toks[1]) {
                        return Err(Error::parse(ln, "expected `array <name> <dim>...`"));
                    }
                    let dims = toks[2..]
                        .iter()
                        .map(|t| match usize::from_str(t) {
                            Ok(d) if d > 0 => Ok(d),
                            _ => Err(Error::parse(ln, format!("bad array dimension `{t}`"))),
                        })
                        .collect::<Result<Vec<usize>>>()?;
                    let total = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                    let total = total.ok_or_else(|| Error::parse(ln, "array is too large"))?;
                    let row = *dims.last().expect("checked non-empty");
                    let mut values = Vec::with_capacity(total);
                    while values.len() < total {
                        let (rn, rline) = lines
                            .next()
                            .ok_or_else(|| Error::parse(end_line + 1, format!("array `{}` is truncated", toks[1])))?;
                        end_line = rn;
                        let rt: Vec<&str> = rline.split_whitespace().collect();
                        if rt.len() != row {
                            return Err(Error::parse(rn, format!("expected {row} values, found {}", rt.len())));
                        }
                        for t in rt {
                            let v = f64::from_str(t).map_err(|_| Error::parse(rn, format!("`{t}` is not a number")))?;
                            if v.is_infinite() {
                                return Err(Error::parse(rn, format!("`{t}` is not finite")));
                            }
                            values.push(v);
                        }
                    }
                    items.push(Item::Array {
                        name: toks[1].to_string(),
                        dims,
                        values,
                        line: ln,
                    });
                }
                Some(other) => {
                    return Err(Error::parse(ln, format!("expected `meta` or `array`, found `{other}`")));
                }
            }
        }
        Ok(Self { kind, items, end_line })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}
