use rand::Rng;

use crate::diffmath::Matrix;
use crate::error::Result;
use crate::flowprior::FlowPrior;
use crate::netlib::{Mlp, SquashedGaussianPolicy};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureDraw {
    pub action: [f64; 2],
    pub from_prior: bool,
    pub lambda: f64,
}

/// Bernoulli gate: the prior is used when `u < λ`.
pub fn use_prior(lambda: f64, u: f64) -> bool {
    u < lambda
}

/// One draw from `(1 − λ)·π(·|s) + λ·prior(·|H)`, with `λ` from `mixing`
/// (zero without a mixing network). `state` and `history` feed the prior's
/// conditioning; `history` is the episode's flattened actions, most recent
/// last.
pub fn sample_mixture(
    policy: &SquashedGaussianPolicy,
    prior: &FlowPrior,
    mixing: Option<&Mlp>,
    obs: &[f64; 4],
    state: &[f64],
    history: &[f64],
    rng: &mut impl Rng,
) -> Result<MixtureDraw> {
    let o = Matrix::row_vector(obs);
    let lambda = match mixing {
        Some(m) => m.infer(&o)?.item(),
        None => 0.0,
    };
    let from_prior = use_prior(lambda, rng.gen::<f64>());
    let a = if from_prior {
        let cond = Matrix::row_vector(&prior.cond_spec().encode(state, history));
        prior.sample(&cond, rng)?
    } else {
        let noise = crate::rng::standard_normal(rng, 1, policy.action_dim());
        policy.sample(&o, &noise)?.0
    };
    Ok(MixtureDraw {
        action: [a.get(0, 0), a.get(0, 1)],
        from_prior,
        lambda,
    })
}
