use nalgebra::DVector;

use super::elbo::{draw_noise, grad_elbo, EstimatorKind};
use super::mlp::{Layer, MlpParams};
use crate::error::{Error, Result};
use crate::gauss::GaussianParams;
use crate::reparam::McEstimate;
use crate::rng::{Rng, Seed};
use crate::tensorfile::{parse_tensors, write_tensors, Tensor};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub n_x: usize,
    pub n_z: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Monte Carlo samples per datapoint (`L`).
    pub samples: usize,
    /// Minibatch size (`M`).
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: Seed,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            n_x: 2,
            n_z: 2,
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            samples: 1,
            batch_size: 200,
            learning_rate: 0.001,
            epochs: 200,
            seed: Seed(0),
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_z == 0 {
            return Err(Error::invalid("n_x and n_z must be at least 1"));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be at least 1"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples (L) must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size (M) must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_x];
        s.extend(&self.encoder_hidden);
        s.push(2 * self.n_z);
        s
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_z];
        s.extend(&self.decoder_hidden);
        s.push(2 * self.n_x);
        s
    }
}

/// Encoder `Φ` and decoder `Θ` networks.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

impl VaeModel {
    pub fn init(config: &VaeConfig) -> Result<Self> {
        config.validate()?;
        let s = config.seed.derive(&[INIT_STREAM]);
        Ok(VaeModel {
            encoder: MlpParams::random(&config.encoder_sizes(), s.derive(&[0])),
            decoder: MlpParams::random(&config.decoder_sizes(), s.derive(&[1])),
        })
    }

    pub fn n_z(&self) -> usize {
        self.encoder.output_dim() / 2
    }

    /// Checkpoint records `encoder.<i>.weight`, `encoder.<i>.bias`, then the
    /// same for `decoder`.
    pub fn to_checkpoint(&self) -> String {
        let mut tensors = Vec::new();
        for (prefix, net) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, l) in net.layers().iter().enumerate() {
                let w = &l.weight;
                let row_major: Vec<f64> = (0..w.nrows())
                    .flat_map(|r| (0..w.ncols()).map(move |c| w[(r, c)]))
                    .collect();
                tensors.push(
                    Tensor::new(format!("{prefix}.{i}.weight"), vec![w.nrows(), w.ncols()], row_major)
                        .expect("shape matches"),
                );
                tensors.push(
                    Tensor::new(format!("{prefix}.{i}.bias"), vec![l.bias.len()], l.bias.iter().copied().collect())
                        .expect("shape matches"),
                );
            }
        }
        write_tensors(&tensors)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let tensors = parse_tensors(text)?;
        let load = |prefix: &str| -> Result<MlpParams> {
            let mut layers = Vec::new();
            loop {
                let i = layers.len();
                let find = |suffix: &str| {
                    tensors
                        .iter()
                        .find(|t| t.name == format!("{prefix}.{i}.{suffix}"))
                };
                let (Some(w), Some(b)) = (find("weight"), find("bias")) else {
                    break;
                };
                if w.shape.len() != 2 || b.shape.len() != 1 {
                    return Err(Error::invalid(format!("{prefix}.{i}: bad tensor rank")));
                }
                layers.push(Layer {
                    weight: nalgebra::DMatrix::from_row_slice(w.shape[0], w.shape[1], &w.values),
                    bias: DVector::from_column_slice(&b.values),
                });
            }
            MlpParams::new(layers)
        };
        let model = VaeModel {
            encoder: load("encoder")?,
            decoder: load("decoder")?,
        };
        let expected = 2 * (model.encoder.layers().len() + model.decoder.layers().len());
        if expected != tensors.len() {
            return Err(Error::invalid("checkpoint has unrecognised records"));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: VaeModel,
    /// Mean minibatch bound per epoch, evaluated before each update.
    pub trace: Vec<f64>,
}

pub fn train_vae(
    dataset: &[DVector<f64>],
    config: &VaeConfig,
    kind: EstimatorKind,
) -> Result<TrainOutcome> {
    let model = VaeModel::init(config)?;
    train_from(model, dataset, config, kind)
}

/// Minibatch stochastic gradient ascent on the chosen estimator. The data
/// order is reshuffled every epoch; the noise for datapoint `i` of batch `b`
/// in epoch `e` comes from the stream keyed `(seed, e, b, i)`.
pub fn train_from(
    mut model: VaeModel,
    dataset: &[DVector<f64>],
    config: &VaeConfig,
    kind: EstimatorKind,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.batch_size > dataset.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds dataset size {}",
            config.batch_size,
            dataset.len()
        )));
    }
    let prior = GaussianParams::standard(config.n_z);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = Rng::new(config.seed.derive(&[SHUFFLE_STREAM, epoch as u64]));
        rng.shuffle(&mut order);
        let mut epoch_sum = 0.0;
        let mut n_batches = 0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let mut g_enc = model.encoder.zeros_like();
            let mut g_dec = model.decoder.zeros_like();
            let mut bound = 0.0;
            for (i, &n) in idx.iter().enumerate() {
                let seed = config
                    .seed
                    .derive(&[NOISE_STREAM, epoch as u64, batch as u64, i as u64]);
                let noise = draw_noise(config.n_z, config.samples, seed);
                let g = grad_elbo(&dataset[n], &model.encoder, &model.decoder, &prior, &noise, kind)
                    .map_err(|e| Error::AtBatch {
                        epoch,
                        batch,
                        source: Box::new(e),
                    })?;
                bound += g.estimate.value;
                g_enc.add_scaled(1.0, &g.encoder);
                g_dec.add_scaled(1.0, &g.decoder);
            }
            let m = idx.len() as f64;
            if config.learning_rate != 0.0 {
                model.encoder.add_scaled(config.learning_rate / m, &g_enc);
                model.decoder.add_scaled(config.learning_rate / m, &g_dec);
            }
            if !model.encoder.is_finite() || !model.decoder.is_finite() {
                return Err(Error::AtBatch {
                    epoch,
                    batch,
                    source: Box::new(Error::NumericalOverflow {
                        location: "parameter update".into(),
                    }),
                });
            }
            epoch_sum += bound / m;
            n_batches += 1;
        }
        trace.push(epoch_sum / n_batches as f64);
    }
    Ok(TrainOutcome { model, trace })
}

/// Per-datapoint bound with `samples` draws each, summarised across the
/// dataset (mean and standard error over datapoints).
pub fn evaluate_bound(
    model: &VaeModel,
    dataset: &[DVector<f64>],
    samples: usize,
    seed: Seed,
    kind: EstimatorKind,
) -> Result<McEstimate> {
    let prior = GaussianParams::standard(model.n_z());
    let mut values = Vec::with_capacity(dataset.len());
    for (i, x) in dataset.iter().enumerate() {
        let noise = draw_noise(model.n_z(), samples, seed.derive(&[i as u64]));
        let est = super::elbo::elbo_with_noise(x, &model.encoder, &model.decoder, &prior, &noise, kind)
            .map_err(|e| e.at_sample(i))?;
        values.push(est.value);
    }
    McEstimate::from_samples(values)
}
