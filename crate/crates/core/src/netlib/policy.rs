use std::f64::consts::{LN_2, PI};

use rand::Rng;

use super::mlp::{BoundMlp, Mlp, MlpSpec, Params};
use crate::diffmath::{Axis, Graph, Matrix, Tensor};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// tanh output is kept strictly inside (-1, 1) so that actions never touch
/// the bounds, even when the pre-activation saturates in `f64`.
const SQUASH_LIMIT: f64 = 1.0 - f64::EPSILON;

/// Clip used when inverting the squash for likelihoods of given actions.
const ATANH_CLIP: f64 = 1.0 - 1e-6;

/// Tanh-squashed diagonal Gaussian policy.
///
/// One MLP produces `2·d` columns: the first `d` are the Gaussian mean, the
/// last `d` the log standard deviation (clamped to `[-20, 2]`).
#[derive(Clone, Debug, PartialEq)]
pub struct SquashedGaussianPolicy {
    net: Mlp,
    low: Vec<f64>,
    high: Vec<f64>,
}

/// Differentiable sample from [`SquashedGaussianPolicy::sample_on`].
#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    pub action: Tensor,
    /// Per-row log density, batch×1.
    pub log_prob: Tensor,
}

impl SquashedGaussianPolicy {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        low: &[f64],
        high: &[f64],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let net = Mlp::new(MlpSpec::new(obs_dim, hidden, 2 * low.len()), rng)?;
        Self::from_net(net, low, high)
    }

    pub fn from_net(net: Mlp, low: &[f64], high: &[f64]) -> Result<Self> {
        if low.len() != high.len() || low.iter().zip(high).any(|(l, h)| !(l < h)) {
            return Err(Error::Invalid(
                "action bounds must satisfy low < high".into(),
            ));
        }
        if net.spec().output_dim != 2 * low.len() {
            return Err(Error::SpecMismatch(format!(
                "policy net outputs {} columns, expected {}",
                net.spec().output_dim,
                2 * low.len()
            )));
        }
        Ok(SquashedGaussianPolicy {
            net,
            low: low.to_vec(),
            high: high.to_vec(),
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn action_dim(&self) -> usize {
        self.low.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.net.spec().input_dim
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.high)
    }

    fn half_range(&self) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    fn center(&self) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| 0.5 * (h + l))
            .collect()
    }

    fn heads(&self, g: &mut Graph<'_>, net: &BoundMlp, obs: Tensor) -> Result<(Tensor, Tensor)> {
        let d = self.action_dim();
        let out = net.forward(g, obs)?;
        let mu = g.slice_cols(out, 0, d)?;
        let raw = g.slice_cols(out, d, 2 * d)?;
        Ok((mu, g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)))
    }

    fn squash(&self, g: &mut Graph<'_>, u: Tensor) -> Result<Tensor> {
        let t = g.tanh(u);
        let t = g.clamp(t, -SQUASH_LIMIT, SQUASH_LIMIT);
        let scale = g.constant(Matrix::row_vector(&self.half_range()));
        let center = g.constant(Matrix::row_vector(&self.center()));
        let scaled = g.mul(t, scale)?;
        g.add(scaled, center)
    }

    /// Reparameterized sample `a = center + scale·tanh(mu + σ·noise)` and
    /// its log density, including the tanh change-of-variables term.
    pub fn sample_on(
        &self,
        g: &mut Graph<'_>,
        net: &BoundMlp,
        obs: Tensor,
        noise: Tensor,
    ) -> Result<PolicySample> {
        let (mu, log_std) = self.heads(g, net, obs)?;
        let u = g.reparam_gaussian(mu, log_std, noise)?;
        let action = self.squash(g, u)?;

        // log N(u; mu, σ) = -ξ²/2 - log σ - ln(2π)/2, with ξ the noise.
        let nsq = g.square(noise);
        let gauss = g.scale(nsq, -0.5);
        let gauss = g.sub(gauss, log_std)?;
        // log(scale·(1 - tanh²u)) = ln scale + 2(ln 2 - u - softplus(-2u)).
        let m2u = g.scale(u, -2.0);
        let sp = g.softplus(m2u);
        let usp = g.add(u, sp)?;
        let two_usp = g.scale(usp, 2.0);
        let per_dim = g.add(gauss, two_usp)?;
        let consts: Vec<f64> = self
            .half_range()
            .iter()
            .map(|s| 0.5 * (2.0 * PI).ln() + s.ln() + 2.0 * LN_2)
            .collect();
        let c = g.constant(Matrix::row_vector(&consts));
        let per_dim = g.sub(per_dim, c)?;
        let log_prob = g.sum(per_dim, Axis::Cols);
        Ok(PolicySample { action, log_prob })
    }

    pub fn mean_action_on(&self, g: &mut Graph<'_>, net: &BoundMlp, obs: Tensor) -> Result<Tensor> {
        let (mu, _) = self.heads(g, net, obs)?;
        self.squash(g, mu)
    }

    /// Log density of given in-bounds actions (batch×1). Actions on the
    /// boundary are pulled inside by `1e-6` before inverting the squash.
    pub fn log_prob_of_on(
        &self,
        g: &mut Graph<'_>,
        net: &BoundMlp,
        obs: Tensor,
        actions: &Matrix,
    ) -> Result<Tensor> {
        let d = self.action_dim();
        if actions.cols() != d {
            return Err(Error::Shape {
                op: "log_prob_of",
                lhs: actions.shape(),
                rhs: (actions.rows(), d),
            });
        }
        let (scale, center) = (self.half_range(), self.center());
        let mut u = Matrix::zeros(actions.rows(), d);
        let mut corr = Matrix::zeros(actions.rows(), d);
        for r in 0..actions.rows() {
            for c in 0..d {
                let y = ((actions.get(r, c) - center[c]) / scale[c]).clamp(-ATANH_CLIP, ATANH_CLIP);
                u.set(r, c, y.atanh());
                corr.set(
                    r,
                    c,
                    0.5 * (2.0 * PI).ln() + scale[c].ln() + (1.0 - y * y).ln(),
                );
            }
        }
        let (mu, log_std) = self.heads(g, net, obs)?;
        let tu = g.constant(u);
        let diff = g.sub(tu, mu)?;
        let neg_ls = g.neg(log_std);
        let inv_std = g.exp(neg_ls);
        let z = g.mul(diff, inv_std)?;
        let zsq = g.square(z);
        let half = g.scale(zsq, -0.5);
        let per_dim = g.sub(half, log_std)?;
        let tc = g.constant(corr);
        let per_dim = g.sub(per_dim, tc)?;
        Ok(g.sum(per_dim, Axis::Cols))
    }

    /// Gradient-free sample: returns (actions, log_probs as batch×1).
    pub fn sample(&self, obs: &Matrix, noise: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut g = Graph::new();
        let net = self.net.bind_frozen(&mut g);
        let o = g.constant_ref(obs);
        let n = g.constant_ref(noise);
        let s = self.sample_on(&mut g, &net, o, n)?;
        Ok((g.value(s.action).clone(), g.value(s.log_prob).clone()))
    }

    /// Deterministic evaluation action `center + scale·tanh(mu)`.
    pub fn mean_action(&self, obs: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let net = self.net.bind_frozen(&mut g);
        let o = g.constant_ref(obs);
        let a = self.mean_action_on(&mut g, &net, o)?;
        Ok(g.value(a).clone())
    }
}

impl Params for SquashedGaussianPolicy {
    fn params(&self) -> Vec<&Matrix> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.net.params_mut()
    }
}
