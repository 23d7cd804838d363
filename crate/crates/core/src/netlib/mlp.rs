use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Graph, Matrix, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    None,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_sizes: &[usize], output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            output_dim,
            activation: Activation::Relu,
            output_activation: OutputActivation::None,
        }
    }

    pub fn with_output(mut self, act: OutputActivation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Invalid(format!("MLP dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut prev = self.input_dim;
        for &h in self
            .hidden_sizes
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

/// Ordered access to trainable matrices.
pub trait Params {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    /// Fan-in scaled uniform init, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = |n: usize| {
            (0..n)
                .map(|_| rng.gen_range(-bound..bound))
                .collect::<Vec<_>>()
        };
        Linear {
            weight: Matrix::from_vec(input, output, draw(input * output)).unwrap(),
            bias: Matrix::from_vec(1, output, draw(output)).unwrap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

/// An [`Mlp`] whose parameters have been placed on a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Tensor, Tensor)>,
    activation: Activation,
    output_activation: OutputActivation,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Linear::new(i, o, rng))
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Linear>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len()
            || dims
                .iter()
                .zip(&layers)
                .any(|(&(i, o), l)| l.weight.shape() != (i, o) || l.bias.shape() != (1, o))
        {
            return Err(Error::SpecMismatch("layer shapes do not match spec".into()));
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn final_layer_mut(&mut self) -> &mut Linear {
        self.layers.last_mut().expect("at least one layer")
    }

    pub fn zero_final_layer(&mut self) {
        let last = self.final_layer_mut();
        last.weight = Matrix::zeros(last.weight.rows(), last.weight.cols());
        last.bias = Matrix::zeros(1, last.bias.cols());
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> BoundMlp {
        self.bind_with(g, true)
    }

    /// Binds parameters as constants: gradients still flow to the input.
    pub fn bind_frozen<'a>(&'a self, g: &mut Graph<'a>) -> BoundMlp {
        self.bind_with(g, false)
    }

    fn bind_with<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (g.param(&l.weight), g.param(&l.bias))
                } else {
                    (g.constant_ref(&l.weight), g.constant_ref(&l.bias))
                }
            })
            .collect();
        BoundMlp {
            layers,
            activation: self.spec.activation,
            output_activation: self.spec.output_activation,
        }
    }

    /// Gradient-free forward pass on plain matrices.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let tx = g.constant_ref(x);
        let y = b.forward(&mut g, tx)?;
        Ok(g.value(y).clone())
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph<'_>, x: Tensor) -> Result<Tensor> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.matmul(h, w)?;
            h = g.add(h, b)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
            }
        }
        Ok(match self.output_activation {
            OutputActivation::None => h,
            OutputActivation::Sigmoid => g.sigmoid(h),
            OutputActivation::Tanh => g.tanh(h),
        })
    }

    /// Gradients in [`Params::params`] order.
    pub fn grads(&self, g: &Graph<'_>) -> Vec<Matrix> {
        self.layers
            .iter()
            .flat_map(|&(w, b)| [g.grad_or_zeros(w), g.grad_or_zeros(b)])
            .collect()
    }
}

impl Params for Mlp {
    fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}
