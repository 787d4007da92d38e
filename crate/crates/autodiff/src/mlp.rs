use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::params::{param_name, Module};
use crate::seed::mix_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Fully connected network. Row-major `[batch, features]` in, `[batch, out]` out.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases, one seeded generator per layer.
    ///
    /// `dims` lists every width from input to output, so `dims.len() - 1`
    /// layers are built. Hidden layers use `hidden`, the last layer `output`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Self {
        assert!(
            dims.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        assert!(dims.iter().all(|&d| d > 0), "MLP widths must be positive");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[i as u64]));
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, w),
                    bias: Tensor::zeros(&[fan_out]),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self { layers, seed }
    }

    /// Hidden layers tanh, output identity.
    pub fn tanh_net(dims: &[usize], seed: u64) -> Self {
        Self::new(dims, Activation::Tanh, Activation::Identity, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    /// Sets every weight to zero, keeping biases.
    pub fn zero_weights(&mut self) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        g.leaf(l.weight.clone()),
                        g.leaf(l.bias.clone()),
                        l.activation,
                    )
                })
                .collect(),
            input_dim: self.input_dim(),
        }
    }

    /// Forward pass on a fresh tape, returning only the output value.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.leaf(input.clone());
        let y = bound.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Checksum over all parameters, used to compare parameter identity.
    pub fn checksum(&self) -> u64 {
        self.layers.iter().fold(0u64, |h, l| {
            h.rotate_left(7) ^ l.weight.checksum() ^ l.bias.checksum().rotate_left(3)
        })
    }
}

impl Module for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            f(param_name(prefix, &format!("{i}.weight")), &l.weight);
            f(param_name(prefix, &format!("{i}.bias")), &l.bias);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(param_name(prefix, &format!("{i}.weight")), &mut l.weight);
            f(param_name(prefix, &format!("{i}.bias")), &mut l.bias);
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(NodeId, NodeId, Activation)>,
    input_dim: usize,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, input: NodeId) -> Result<NodeId> {
        let width = g.value(input).cols();
        if width != self.input_dim {
            return Err(AutodiffError::Shape(format!(
                "MLP expects input width {}, got shape {:?}",
                self.input_dim,
                g.value(input).shape()
            )));
        }
        let mut h = input;
        for &(w, b, act) in &self.layers {
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            h = match act {
                Activation::Relu => g.relu(z),
                Activation::Tanh => g.tanh(z),
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Parameter node ids in [`Module::visit`] order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }

    /// Appends this network's gradients in [`Module::visit`] order.
    pub fn collect_grads(&self, g: &Graph, grads: &Gradients, out: &mut Vec<Tensor>) {
        for id in self.param_ids() {
            out.push(grads.get_or_zeros(id, g.value(id)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_forward(mlp: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        for l in &mlp.layers {
            let (fi, fo) = (l.fan_in(), l.fan_out());
            let w = l.weight.data();
            h = (0..fo)
                .map(|j| {
                    let mut z = 0.0;
                    for i in 0..fi {
                        z += h[i] * w[i * fo + j];
                    }
                    l.activation.apply(z + l.bias.data()[j])
                })
                .collect();
        }
        h
    }

    #[test]
    fn zero_weights_yield_final_bias() {
        let mut net = Mlp::tanh_net(&[4, 6, 3], 11);
        net.zero_weights();
        net.layers[0].bias = Tensor::vector(vec![0.5; 6]);
        net.layers[1].bias = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let y = net.eval(&Tensor::matrix(2, 4, vec![1.0; 8])).unwrap();
        assert_eq!(y.data(), &[1.0, -2.0, 3.0, 1.0, -2.0, 3.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::tanh_net(&[3, 3], 0);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        net.layers[0].weight = Tensor::matrix(3, 3, eye);
        let x = Tensor::matrix(1, 3, vec![0.25, -1.5, 7.0]);
        assert_eq!(net.eval(&x).unwrap(), x);
    }

    #[test]
    fn relu_net_matches_direct_evaluation() {
        let net = Mlp::new(&[5, 8, 2], Activation::Relu, Activation::Identity, 7);
        let x = vec![1.0; 5];
        let y = net.eval(&Tensor::matrix(1, 5, x.clone())).unwrap();
        assert_eq!(y.data(), direct_forward(&net, &x).as_slice());
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = Mlp::tanh_net(&[4, 2], 1);
        let err = net.eval(&Tensor::matrix(1, 3, vec![0.0; 3])).unwrap_err();
        assert!(err.to_string().contains("input width 4"));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Mlp::tanh_net(&[10, 20, 5], 42);
        let b = Mlp::tanh_net(&[10, 20, 5], 42);
        let c = Mlp::tanh_net(&[10, 20, 5], 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(a.layers[0].weight.max_abs() <= limit);
        assert_eq!(a.layers[1].activation, Activation::Identity);
        assert_eq!(a.layers[0].activation, Activation::Tanh);
    }
}
