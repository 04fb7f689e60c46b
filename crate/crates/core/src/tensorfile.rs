//! Flat text tensor records, one per line: `name shape values...`.
//!
//! `shape` is a `x`-separated list of extents (`4x3`, `5`); values follow in
//! row-major order, written with 17 significant digits so every `f64`
//! round-trips exactly. Blank lines and lines starting with `#` are skipped.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("bad tensor name {name:?}")));
        }
        let count: usize = shape.iter().product();
        if shape.is_empty() || count != values.len() {
            return Err(Error::invalid(format!(
                "tensor {name}: shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(Tensor {
            name,
            shape,
            values,
        })
    }
}

/// Shortest scientific form with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_tensors(tensors: &[Tensor]) -> String {
    let mut out = String::new();
    for t in tensors {
        out.push_str(&t.name);
        out.push(' ');
        let shape: Vec<String> = t.shape.iter().map(|s| s.to_string()).collect();
        out.push_str(&shape.join("x"));
        for v in &t.values {
            out.push(' ');
            out.push_str(&format_real(*v));
        }
        out.push('\n');
    }
    out
}

pub fn parse_tensors(text: &str) -> Result<Vec<Tensor>> {
    let mut tensors = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::invalid(format!("line {}: {what}", lineno + 1));
        let mut fields = line.split_whitespace();
        let name = fields.next().ok_or_else(|| bad("missing name"))?;
        let shape = fields
            .next()
            .ok_or_else(|| bad("missing shape"))?
            .split('x')
            .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape")))
            .collect::<Result<Vec<_>>>()?;
        let values = fields
            .map(|s| s.parse::<f64>().map_err(|_| bad(&format!("bad value {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(name, shape, values).map_err(|e| bad(&e.to_string()))?);
    }
    Ok(tensors)
}
