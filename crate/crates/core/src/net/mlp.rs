use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Input width, hidden widths, then `C` (softmax head) or 1 (linear head).
    pub layer_sizes: Vec<usize>,
    pub head: Head,
    pub seed: u64,
    pub weight_init_scale: f64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidInput("a network needs at least an input and an output layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidInput("layer sizes must be positive".into()));
        }
        let out = *self.layer_sizes.last().unwrap_or(&0);
        match self.head {
            Head::Softmax if out < 2 => {
                return Err(Error::InvalidInput("softmax head needs at least 2 outputs".into()))
            }
            Head::Linear if out != 1 => {
                return Err(Error::InvalidInput("linear head must have exactly 1 output".into()))
            }
            _ => {}
        }
        if !(self.weight_init_scale >= 0.0 && self.weight_init_scale.is_finite()) {
            return Err(Error::InvalidInput("weight_init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    /// Width of the feature tap (the input to the output layer).
    pub fn feature_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }
}

/// Fully connected layer `y = W x + b`, `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.as_slice().iter().chain(&self.bias)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput {
    Probabilities(Vec<f64>),
    Scalar(f64),
}

/// Everything backprop needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `activations[l]` is the input to layer `l`.
    activations: Vec<Vec<f64>>,
    /// Output-layer pre-activation.
    pub logits: Vec<f64>,
    pub output: HeadOutput,
}

impl ForwardPass {
    /// The second-to-last-layer response (input to the output layer).
    pub fn features(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        match &self.output {
            HeadOutput::Probabilities(p) => Some(p),
            HeadOutput::Scalar(_) => None,
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `Jᵀ g` for the softmax Jacobian at `p`: `p_i (g_i − Σ_j p_j g_j)`.
pub fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter().zip(grad_p).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Multi-layer perceptron with rectifier hidden units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: NetConfig,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Gaussian weights with standard deviation `weight_init_scale / √fan_in`,
    /// zero biases.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = config.weight_init_scale / (fan_in as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                for v in layer.weights.as_mut_slice() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = std * z;
                }
                layer
            })
            .collect();
        Ok(Mlp { config, layers })
    }

    pub fn from_layers(config: NetConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        check_len("layer count", config.layer_sizes.len() - 1, layers.len())?;
        for (w, layer) in config.layer_sizes.windows(2).zip(&layers) {
            check_len("layer inputs", w[0], layer.weights.cols())?;
            check_len("layer outputs", w[1], layer.weights.rows())?;
            check_len("layer bias", w[1], layer.bias.len())?;
        }
        Ok(Mlp { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn zeros_like(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.weights.cols(), l.weights.rows()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardPass> {
        check_len("network input", self.config.input_dim(), input.len())?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers[..last] {
            let mut z = layer.weights.mul_vec(&x);
            for (v, b) in z.iter_mut().zip(&layer.bias) {
                *v = (*v + b).max(0.0);
            }
            activations.push(std::mem::replace(&mut x, z));
        }
        let head = &self.layers[last];
        let mut logits = head.weights.mul_vec(&x);
        for (v, b) in logits.iter_mut().zip(&head.bias) {
            *v += b;
        }
        activations.push(x);
        let output = match self.config.head {
            Head::Softmax => HeadOutput::Probabilities(softmax(&logits)),
            Head::Linear => HeadOutput::Scalar(logits[0]),
        };
        Ok(ForwardPass {
            activations,
            logits,
            output,
        })
    }

    /// Parameter gradients from `∂L/∂logits`, plus `2·wd·θ`.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &[f64], weight_decay: f64) -> Result<Vec<Layer>> {
        check_len("backward logits", self.config.output_dim(), grad_logits.len())?;
        check_len("backward pass", self.layers.len(), pass.activations.len())?;
        let mut grads = self.zeros_like();
        let mut delta = grad_logits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = &pass.activations[l];
            let g = &mut grads[l];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                for (w, x) in g.weights.row_mut(o).iter_mut().zip(input) {
                    *w = d * x;
                }
            }
            if l > 0 {
                let mut back = self.layers[l].weights.tmul_vec(&delta);
                // input[l] = relu(pre), so the mask is input > 0
                for (b, x) in back.iter_mut().zip(input) {
                    if *x <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
        if weight_decay != 0.0 {
            for (g, layer) in grads.iter_mut().zip(&self.layers) {
                for (gv, p) in g.params_mut().zip(layer.params()) {
                    *gv += 2.0 * weight_decay * p;
                }
            }
        }
        Ok(grads)
    }
}
