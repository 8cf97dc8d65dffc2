//! Small fully-connected building blocks on top of the tape.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Parameter, Tape, Tensor};

/// Dense layer `y = x W + b` with `W: [fan_in, fan_out]`, `b: [fan_out]`.
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Uniform init in ±1/sqrt(fan_in) for weights and biases.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = ArrayD::from_shape_fn(IxDyn(&[fan_in, fan_out]), |_| {
            rng.gen_range(-bound..bound)
        });
        let bias = ArrayD::from_shape_fn(IxDyn(&[fan_out]), |_| rng.gen_range(-bound..bound));
        Linear {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), bias),
        }
    }

    pub fn fan_out(&self) -> usize {
        self.bias.shape()[0]
    }

    /// `x: [batch, fan_in] -> [batch, fan_out]`.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        &x.matmul(&w) + &b
    }

    pub fn params(&self) -> Vec<Parameter> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// MLP with ReLU between hidden layers and a linear output layer.
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new(prefix: &str, dims: &[usize], rng: &mut ChaCha12Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}.l{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    /// Zero the output layer's weights and set its bias, so the network
    /// starts as the constant map `x -> bias`.
    pub fn init_output_constant(&self, bias: &[f64]) {
        let last = self.layers.last().expect("non-empty");
        assert_eq!(bias.len(), last.fan_out(), "bias length mismatch");
        last.weight
            .set_value(ArrayD::zeros(IxDyn(&last.weight.shape())));
        last.bias.set_value(
            ArrayD::from_shape_vec(IxDyn(&[bias.len()]), bias.to_vec()).expect("1d"),
        );
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, &h);
            if i + 1 < n {
                h = h.relu();
            }
        }
        h
    }

    pub fn params(&self) -> Vec<Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}
