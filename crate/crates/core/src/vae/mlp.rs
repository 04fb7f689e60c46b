use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::rng::{Rng, Seed};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Fully connected network: `tanh` on every hidden layer, identity on the
/// last. Also used as the gradient container for its own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Inputs to every layer, kept for the backward pass. `inputs[l]` feeds
/// layer `l`; the last entry is the network output.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    inputs: Vec<DVector<f64>>,
}

impl ForwardCache {
    pub(crate) fn output(&self) -> &DVector<f64> {
        self.inputs.last().expect("cache holds at least the input")
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            check_dim(l.weight.nrows(), l.bias.len())?;
            if i > 0 {
                check_dim(layers[i - 1].weight.nrows(), l.weight.ncols())?;
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite entries")));
            }
        }
        Ok(MlpParams { layers })
    }

    /// All-zero network with the given layer widths (input first).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        MlpParams { layers }
    }

    /// Weights and biases uniform on `[−1/√fan_in, 1/√fan_in]`.
    pub fn random(sizes: &[usize], seed: Seed) -> Self {
        let mut rng = Rng::new(seed);
        let mut net = Self::zeros(sizes);
        for l in &mut net.layers {
            let bound = 1.0 / (l.weight.ncols() as f64).sqrt();
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        net
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.nrows()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            let nw = l.weight.len();
            if index < nw {
                let cols = l.weight.ncols();
                return (li, Some((index / cols, index % cols)), 0);
            }
            index -= nw;
            if index < l.bias.len() {
                return (li, None, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat indexing: layer by layer, weights row-major then biases.
    pub fn get(&self, index: usize) -> f64 {
        match self.locate(index) {
            (li, Some(rc), _) => self.layers[li].weight[rc],
            (li, None, b) => self.layers[li].bias[b],
        }
    }

    pub fn set(&mut self, index: usize, value: f64) {
        match self.locate(index) {
            (li, Some(rc), _) => self.layers[li].weight[rc] = value,
            (li, None, b) => self.layers[li].bias[b] = value,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight * alpha;
            a.bias += &b.bias * alpha;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weight *= alpha;
            l.bias *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_cached(x)?.output().clone())
    }

    pub(crate) fn forward_cached(&self, x: &DVector<f64>) -> Result<ForwardCache> {
        check_dim(self.input_dim(), x.len())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = &l.weight * inputs.last().unwrap() + &l.bias;
            if i < last {
                a.apply(|v| *v = v.tanh());
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalOverflow {
                    location: format!("layer {i} forward"),
                });
            }
            inputs.push(a);
        }
        Ok(ForwardCache { inputs })
    }

    /// Gradients of a scalar with respect to every parameter and to the
    /// network input, given its gradient with respect to the output.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &DVector<f64>,
    ) -> (MlpParams, DVector<f64>) {
        let mut grads = self.zeros_like();
        let last = self.layers.len() - 1;
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                // output of layer i is tanh(a): d/da = 1 − h²
                let h = &cache.inputs[i + 1];
                g.zip_apply(h, |gv, hv| *gv *= 1.0 - hv * hv);
            }
            let input = &cache.inputs[i];
            grads.layers[i].weight = &g * input.transpose();
            grads.layers[i].bias = g.clone();
            g = self.layers[i].weight.tr_mul(&g);
        }
        (grads, g)
    }
}
