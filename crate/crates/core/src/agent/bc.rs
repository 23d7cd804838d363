use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::obs::ObsEncoder;
use crate::diffmath::{Axis, Graph, Matrix};
use crate::error::{Error, Result};
use crate::mazeworld::OfflineDataset;
use crate::netlib::{AdamConfig, AdamState, Params, SquashedGaussianPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Hindsight goals are the position this many steps ahead, drawn
    /// uniformly from `[min_ahead, max_ahead]`.
    pub min_ahead: usize,
    pub max_ahead: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 10,
            batch_size: 100,
            lr: 1e-3,
            min_ahead: 10,
            max_ahead: 100,
        }
    }
}

/// Goal-augmented `(obs, action)` pairs from goal-free trajectories. Steps
/// with fewer than `min_ahead` steps left are dropped; the offset is
/// truncated at the trajectory end.
pub fn bc_goal_pairs(
    data: &OfflineDataset,
    enc: &ObsEncoder,
    cfg: &BcConfig,
    rng: &mut impl Rng,
) -> Result<(Matrix, Matrix)> {
    if data.state_dim != 2 || data.action_dim != 2 {
        return Err(Error::Invalid(
            "behaviour cloning expects 2-D positions and actions".into(),
        ));
    }
    if cfg.min_ahead == 0 || cfg.min_ahead > cfg.max_ahead {
        return Err(Error::Invalid(format!(
            "bad goal offset range [{}, {}]",
            cfg.min_ahead, cfg.max_ahead
        )));
    }
    let mut rows = Vec::new();
    let mut actions = Vec::new();
    for traj in &data.trajectories {
        let len = traj.len();
        for t in 0..len.saturating_sub(cfg.min_ahead) {
            let k = rng
                .gen_range(cfg.min_ahead..=cfg.max_ahead)
                .min(len - 1 - t);
            let s = traj.states.row(t);
            let g = traj.states.row(t + k);
            rows.push(([s[0], s[1]], [g[0], g[1]]));
            actions.extend_from_slice(traj.actions.row(t));
        }
    }
    if rows.is_empty() {
        return Err(Error::Invalid(
            "no behaviour-cloning pairs in dataset".into(),
        ));
    }
    let n = rows.len();
    Ok((enc.encode_rows(rows), Matrix::from_vec(n, 2, actions)?))
}

/// Mean negative log-likelihood of `actions` under the policy, with
/// gradients in [`Params`] order.
pub fn bc_loss(
    policy: &SquashedGaussianPolicy,
    obs: &Matrix,
    actions: &Matrix,
) -> Result<(f64, Vec<Matrix>)> {
    let mut g = Graph::new();
    let net = policy.net().bind(&mut g);
    let o = g.constant_ref(obs);
    let lp = policy.log_prob_of_on(&mut g, &net, o, actions)?;
    let mean = g.mean(lp, Axis::All);
    let loss = g.neg(mean);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("bc loss = {value}")));
    }
    g.backward(loss)?;
    Ok((value, net.grads(&g)))
}

/// Maximum-likelihood pretraining on hindsight-goal pairs. Returns the mean
/// loss of each epoch.
pub fn bc_pretrain(
    policy: &mut SquashedGaussianPolicy,
    data: &OfflineDataset,
    enc: &ObsEncoder,
    cfg: &BcConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let (obs, actions) = bc_goal_pairs(data, enc, cfg, rng)?;
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("bc batch size must be >= 1".into()));
    }
    let mut adam = AdamState::new(AdamConfig::new(cfg.lr), policy.params());
    let mut order: Vec<usize> = (0..obs.rows()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (l, grads) = bc_loss(policy, &obs.select_rows(chunk), &actions.select_rows(chunk))?;
            adam.step(&mut policy.params_mut(), &grads)?;
            total += l * chunk.len() as f64;
        }
        curve.push(total / obs.rows() as f64);
    }
    Ok(curve)
}
