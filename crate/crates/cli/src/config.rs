//! Flat `key = value` experiment configuration.
//!
//! Values are resolved in order: built-in defaults, the config file, `--set`
//! overrides, then the dedicated flags (`--seed`, `--out`, `--k-hat`). Every
//! key is known up front; anything else is rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use mixlab_core::{
    DMatrix, DVector, EstimatorKind, GaussianParams, MixtureParams, Seed, StoppingRule, VaeConfig,
};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Sample a labelled Gaussian mixture dataset.
    GenData,
    /// Fit a mixture with EM from a grid initialisation.
    FitEm,
    /// Mean-field fit of a bivariate quadratic model.
    FitVb,
    /// Train a variational autoencoder on a dataset.
    TrainVae,
    /// Compare estimated mixture parameters with the truth.
    Report,
}

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "seed for every random stream"),
    ("out", "out", "output directory"),
    ("data", "", "dataset CSV (default <out>/data.csv)"),
    ("n", "5000", "gen-data: number of samples"),
    ("weights", "0.25, 0.40, 0.35", "gen-data: mixture weights"),
    ("means", "0 2; 3 1; 6 3", "gen-data: component means, ';' between components"),
    (
        "covariances",
        "0.5 0 0 0.5",
        "gen-data: row-major covariances, ';' between components; one entry is shared by all",
    ),
    ("k_hat", "3", "fit-em: number of components to fit (1 to 16)"),
    ("max_passes", "50", "fit-em: pass limit"),
    ("loglik_tol", "1e-3", "fit-em: stop once |change in log-likelihood| falls below this"),
    ("precision", "2 1; 1 2", "fit-vb: precision matrix of the quadratic model, ';' between rows"),
    ("linear", "1, -0.5", "fit-vb: linear coefficient of the quadratic model"),
    ("max_sweeps", "100", "fit-vb: sweep limit"),
    ("sweep_tol", "1e-10", "fit-vb: stop once no factor parameter moves this much"),
    ("n_z", "2", "train-vae: latent dimension"),
    ("encoder_hidden", "16", "train-vae: encoder hidden widths (empty for none)"),
    ("decoder_hidden", "16", "train-vae: decoder hidden widths (empty for none)"),
    ("samples", "1", "train-vae: noise draws per datapoint during training"),
    ("batch_size", "200", "train-vae: minibatch size"),
    ("learning_rate", "0.001", "train-vae: SGD step size"),
    ("epochs", "200", "train-vae: passes over the data"),
    ("estimator", "B", "train-vae: bound estimator, A or B"),
    ("eval_samples", "100", "train-vae: noise draws per datapoint for the final bound"),
    ("estimate", "", "report: estimated parameters (default <out>/params.txt)"),
    ("truth", "", "report: true parameters (default <out>/truth.txt)"),
];

pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (`key = value`, `#` starts a comment):\n");
    for (key, default, doc) in KEYS {
        let default = if default.is_empty() { "-" } else { default };
        s.push_str(&format!("  {key:<width$}  {doc} [default: {default}]\n"));
    }
    s
}

/// Raw key/value pairs after all layers have been merged.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .map(|(k, d, _)| (k.to_string(), d.to_string()))
            .collect();
        RawConfig { values }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(UsageError(format!("unknown config key `{key}`")).into());
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies a `key = value` assignment.
    pub fn assign(&mut self, line: &str) -> Result<()> {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("expected `key = value`, got `{line}`")))?;
        self.set(key.trim(), value)
    }

    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        self.merge_text(&text, &path.display().to_string())
    }

    fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| UsageError(format!("config key `{key}`: cannot parse `{v}`")).into())
    }

    fn reals(&self, key: &str) -> Result<Vec<f64>> {
        parse_reals(self.get(key)).with_context(|| format!("config key `{key}`"))
    }

    fn rows(&self, key: &str) -> Result<Vec<Vec<f64>>> {
        self.get(key)
            .split(';')
            .map(parse_reals)
            .collect::<Result<Vec<_>>>()
            .with_context(|| format!("config key `{key}`"))
    }

    fn widths(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse()
                    .map_err(|_| UsageError(format!("config key `{key}`: bad width `{t}`")).into())
            })
            .collect()
    }

    fn path_or(&self, key: &str, out: &Path, file: &str) -> PathBuf {
        match self.get(key) {
            "" => out.join(file),
            p => PathBuf::from(p),
        }
    }
}

fn parse_reals(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| UsageError(format!("`{t}` is not a finite number")).into())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
    pub n_samples: usize,
    pub truth: MixtureParams,
    pub k_hat: usize,
    pub stop: StoppingRule,
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub max_sweeps: usize,
    pub sweep_tol: f64,
    /// `n_x` is filled in from the dataset at training time.
    pub vae: VaeConfig,
    pub estimator: EstimatorKind,
    pub eval_samples: usize,
    pub estimate_file: PathBuf,
    pub truth_file: PathBuf,
}

impl ExperimentConfig {
    pub fn from_raw(mode: Mode, raw: &RawConfig) -> Result<Self> {
        let seed: u64 = raw.parse("seed")?;
        let out = PathBuf::from(raw.get("out"));
        let k_hat: usize = raw.parse("k_hat")?;
        if !(1..=16).contains(&k_hat) {
            return Err(UsageError(format!("k_hat must be between 1 and 16, got {k_hat}")).into());
        }
        let stop = StoppingRule::new(raw.parse("max_passes")?, raw.parse("loglik_tol")?)?;

        let precision_rows = raw.rows("precision")?;
        let dim = precision_rows.len();
        if precision_rows.iter().any(|r| r.len() != dim) {
            return Err(UsageError("precision must be a square matrix".into()).into());
        }
        let precision = DMatrix::from_fn(dim, dim, |r, c| precision_rows[r][c]);
        let linear = DVector::from_vec(raw.reals("linear")?);
        if linear.len() != dim {
            return Err(UsageError(format!(
                "linear has {} entries but precision is {dim}x{dim}",
                linear.len()
            ))
            .into());
        }
        let sweep_tol: f64 = raw.parse("sweep_tol")?;
        if !(sweep_tol > 0.0) {
            return Err(UsageError("sweep_tol must be positive".into()).into());
        }

        let estimator = match raw.get("estimator") {
            "A" | "a" => EstimatorKind::A,
            "B" | "b" => EstimatorKind::B,
            other => {
                return Err(UsageError(format!("estimator must be A or B, got `{other}`")).into())
            }
        };
        let vae = VaeConfig {
            n_x: 2,
            n_z: raw.parse("n_z")?,
            encoder_hidden: raw.widths("encoder_hidden")?,
            decoder_hidden: raw.widths("decoder_hidden")?,
            samples: raw.parse("samples")?,
            batch_size: raw.parse("batch_size")?,
            learning_rate: raw.parse("learning_rate")?,
            epochs: raw.parse("epochs")?,
            seed: Seed(seed),
        };
        vae.validate()?;
        let eval_samples: usize = raw.parse("eval_samples")?;
        if eval_samples < 2 {
            return Err(UsageError("eval_samples must be at least 2".into()).into());
        }

        Ok(ExperimentConfig {
            mode,
            seed,
            data: raw.path_or("data", &out, "data.csv"),
            estimate_file: raw.path_or("estimate", &out, "params.txt"),
            truth_file: raw.path_or("truth", &out, "truth.txt"),
            out,
            n_samples: raw.parse("n")?,
            truth: truth_params(raw)?,
            k_hat,
            stop,
            precision,
            linear,
            max_sweeps: raw.parse("max_sweeps")?,
            sweep_tol,
            vae,
            estimator,
            eval_samples,
        })
    }
}

fn truth_params(raw: &RawConfig) -> Result<MixtureParams> {
    let weights = raw.reals("weights")?;
    let means = raw.rows("means")?;
    let mut covs = raw.rows("covariances")?;
    let k = weights.len();
    if means.len() != k {
        return Err(UsageError(format!("{k} weights but {} means", means.len())).into());
    }
    if covs.len() == 1 {
        covs = vec![covs[0].clone(); k];
    }
    if covs.len() != k {
        return Err(UsageError(format!("{k} weights but {} covariances", covs.len())).into());
    }
    let comps = means
        .iter()
        .zip(&covs)
        .map(|(m, c)| {
            if c.len() != m.len() * m.len() {
                return Err(UsageError(format!(
                    "covariance with {} entries does not match a {}-dimensional mean",
                    c.len(),
                    m.len()
                ))
                .into());
            }
            Ok(GaussianParams::from_slices(m, c)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureParams::new(weights, comps)?)
}
