//! Shared fixtures for the criterion benches, sized like the single-CPU
//! preset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use temporl::agent::{AgentBundle, Batch, NetSizes, SacHyper, UpdateNoise, ACTION_DIM, OBS_DIM};
use temporl::diffmath::Matrix;
use temporl::flowprior::{ConditioningSpec, FlowConfig, FlowPrior};
use temporl::rng::uniform;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    uniform(&mut rng(seed), rows, cols, -1.0, 1.0)
}

pub fn desk_sizes() -> NetSizes {
    NetSizes {
        hidden: vec![64, 64],
        mixing_hidden: vec![64, 64],
    }
}

pub fn agent(with_mixing: bool) -> AgentBundle {
    AgentBundle::new(SacHyper::default(), &desk_sizes(), with_mixing, &mut rng(0))
        .expect("valid sizes")
}

pub fn batch(n: usize, seed: u64) -> (Batch, UpdateNoise) {
    let mut r = rng(seed);
    let batch = Batch {
        obs: uniform(&mut r, n, OBS_DIM, -1.0, 1.0),
        actions: uniform(&mut r, n, ACTION_DIM, -1.0, 1.0),
        rewards: Matrix::zeros(n, 1),
        discount: Matrix::filled(n, 1, 0.99f64.powi(10)),
        next_obs: uniform(&mut r, n, OBS_DIM, -1.0, 1.0),
        prior_actions: uniform(&mut r, n, ACTION_DIM, -1.0, 1.0),
        next_prior_actions: uniform(&mut r, n, ACTION_DIM, -1.0, 1.0),
    };
    let noise = UpdateNoise::draw(n, &mut r);
    (batch, noise)
}

/// Four coupling layers of width 64 conditioned on the last action.
pub fn prior() -> FlowPrior {
    let cond = ConditioningSpec::last_actions(1, ACTION_DIM).expect("k >= 1");
    let cfg = FlowConfig {
        n_layers: 4,
        hidden: 64,
        embed_dim: 64,
        ..FlowConfig::new(cond)
    };
    FlowPrior::new(cfg, &mut rng(1)).expect("valid config")
}
