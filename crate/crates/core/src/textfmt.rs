//! Plain-text tensors: a `tensor v1 <rank> <extents...>` header followed by
//! whitespace-separated values in row-major order.
//!
//! Values are written in Rust's shortest round-trip decimal form, so
//! write → read reproduces every `f64` bit pattern (NaN payloads aside).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor;

pub const HEADER: &str = "tensor v1";

fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// One line per innermost row.
pub fn to_text(t: &Tensor) -> String {
    let mut out = format!("{HEADER} {}", t.rank());
    for e in t.shape() {
        let _ = write!(out, " {e}");
    }
    out.push('\n');
    let width = t.shape().last().copied().unwrap_or(1).max(1);
    for row in t.data().chunks(width) {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn from_text(text: &str) -> Result<Tensor> {
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| Error::Truncated(format!("text tensor: missing {what}")))
    };
    let (magic, version) = (next("header")?, next("header")?);
    if magic != "tensor" || version != "v1" {
        return Err(Error::Format(format!(
            "text tensor: expected header `{HEADER}`, found `{magic} {version}`"
        )));
    }
    let parse_usize = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("text tensor: {what} `{s}` is not a non-negative integer")))
    };
    let rank = parse_usize(next("rank")?, "rank")?;
    let shape = (0..rank)
        .map(|_| next("extent").and_then(|s| parse_usize(s, "extent")))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = shape.iter().product();
    let values: Vec<f64> = tokens
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("text tensor: `{s}` is not a number")))
        })
        .collect::<Result<_>>()?;
    if values.len() != count {
        return Err(Error::Format(format!(
            "text tensor: extents {shape:?} need {count} values, found {}",
            values.len()
        )));
    }
    Tensor::new(shape, values)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path.as_ref(), to_text(t)).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    from_text(&text)
}
