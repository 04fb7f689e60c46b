//! Dataset CSVs and mixture parameter files.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mixlab_core::tensorfile::{format_real, parse_tensors, write_tensors, Tensor};
use mixlab_core::{DVector, GaussianParams, MixtureParams};

use crate::UsageError;

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Writes `x,y,label` rows; labels are written one-based.
pub fn write_dataset(path: &Path, points: &[DVector<f64>], labels: &[usize]) -> Result<()> {
    let dim = points.first().map_or(2, |p| p.len());
    let mut header: Vec<String> = match dim {
        2 => vec!["x".into(), "y".into()],
        _ => (1..=dim).map(|i| format!("x{i}")).collect(),
    };
    header.push("label".into());
    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    for (p, &z) in points.iter().zip(labels) {
        let mut row: Vec<String> = p.iter().map(|v| format_real(*v)).collect();
        row.push((z + 1).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every numeric column except one named `label`.
pub fn read_dataset(path: &Path) -> Result<Vec<DVector<f64>>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .with_context(|| format!("{}: cannot read header", path.display()))?
        .clone();
    let keep: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim() != "label")
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(UsageError(format!("{}: no data columns", path.display())).into());
    }
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}", path.display()))?;
        let values = keep
            .iter()
            .map(|&i| {
                let field = record.get(i).unwrap_or("").trim();
                field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    UsageError(format!(
                        "{}: line {}: `{field}` is not a finite number",
                        path.display(),
                        row + 2
                    ))
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        points.push(DVector::from_vec(values));
    }
    if points.is_empty() {
        return Err(UsageError(format!("{}: no data rows", path.display())).into());
    }
    Ok(points)
}

/// Records `weights`, then `mean.<j>` and `cov.<j>` per component.
pub fn params_to_text(theta: &MixtureParams) -> String {
    let k = theta.n_components();
    let n = theta.dim();
    let mut tensors = vec![Tensor::new("weights", vec![k], theta.weights().to_vec()).unwrap()];
    for (j, c) in theta.components().iter().enumerate() {
        tensors.push(Tensor::new(format!("mean.{j}"), vec![n], c.mean().iter().copied().collect()).unwrap());
        // symmetric, so column-major storage reads the same row-major
        tensors.push(Tensor::new(format!("cov.{j}"), vec![n, n], c.cov().iter().copied().collect()).unwrap());
    }
    write_tensors(&tensors)
}

pub fn params_from_text(text: &str) -> Result<MixtureParams> {
    let tensors = parse_tensors(text)?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| UsageError(format!("missing record `{name}`")))
    };
    let weights = find("weights")?;
    let k = weights.values.len();
    if tensors.len() != 1 + 2 * k {
        return Err(UsageError(format!(
            "expected {} records for {k} components, found {}",
            1 + 2 * k,
            tensors.len()
        ))
        .into());
    }
    let comps = (0..k)
        .map(|j| {
            let mean = find(&format!("mean.{j}"))?;
            let cov = find(&format!("cov.{j}"))?;
            let n = mean.values.len();
            if cov.shape != [n, n] {
                return Err(UsageError(format!("cov.{j} should be {n}x{n}")).into());
            }
            Ok(GaussianParams::from_slices(&mean.values, &cov.values)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureParams::new(weights.values.clone(), comps)?)
}

pub fn read_params(path: &Path) -> Result<MixtureParams> {
    params_from_text(&read_text(path)?).with_context(|| format!("{}", path.display()))
}
