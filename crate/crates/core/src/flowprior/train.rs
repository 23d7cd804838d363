use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conditioning::ConditioningSpec;
use super::flow::{BatchStats, FlowConfig, FlowPrior};
use crate::diffmath::{Axis, Graph, Matrix};
use crate::error::{Error, Result};
use crate::mazeworld::OfflineDataset;
use crate::netlib::{AdamConfig, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        PriorTrainConfig {
            epochs: 100,
            batch_size: 400,
            adam: AdamConfig::new(1e-4).with_weight_decay(1e-6),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample negative log-likelihood of each epoch.
    pub epoch_nll: Vec<f64>,
}

fn nll_with_stats(
    prior: &FlowPrior,
    a: &Matrix,
    c: &Matrix,
) -> Result<(f64, Option<Vec<Matrix>>, BatchStats)> {
    let mut stats = BatchStats {
        mean: Vec::new(),
        var: Vec::new(),
    };
    let mut g = Graph::new();
    let flow = prior.bind(&mut g, true);
    let ta = g.constant_ref(a);
    let tc = (prior.cond_spec().cond_dim() > 0).then(|| g.constant_ref(c));
    let (z, ld) = prior.inverse_on(&mut g, &flow, ta, tc, Some(&mut stats))?;
    let base = FlowPrior::base_log_prob(&mut g, z);
    let ll = g.add(base, ld)?;
    let mean = g.mean(ll, Axis::All);
    let loss = g.neg(mean);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok((value, None, stats));
    }
    g.backward(loss)?;
    Ok((value, Some(FlowPrior::grads(&flow, &g)), stats))
}

impl FlowPrior {
    /// Training-mode mean NLL of `a` given `c`, normalizing with the batch's
    /// own statistics, and its gradient in [`Params`] order.
    ///
    /// [`Params`]: crate::netlib::Params
    pub fn batch_nll(&self, a: &Matrix, c: &Matrix) -> Result<(f64, Vec<Matrix>)> {
        match nll_with_stats(self, a, c)? {
            (v, Some(g), _) => Ok((v, g)),
            (_, None, _) => Err(Error::NonFinite("flow nll".into())),
        }
    }
}

/// One optimisation step on a batch; returns the mean NLL.
fn train_step(prior: &mut FlowPrior, adam: &mut AdamState, a: &Matrix, c: &Matrix) -> Result<f64> {
    let (loss_value, grads, stats) = nll_with_stats(prior, a, c)?;
    let Some(grads) = grads else {
        return Ok(loss_value);
    };
    adam.step(&mut prior.trainable_params_mut(), &grads)?;
    prior.update_running_stats(&stats);
    Ok(loss_value)
}

/// Maximum-likelihood fit of a prior to pre-built `(action, cond)` pairs.
pub fn train_on_pairs(
    mut prior: FlowPrior,
    actions: &Matrix,
    cond: &Matrix,
    hyper: &PriorTrainConfig,
    rng: &mut impl Rng,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(FlowPrior, TrainReport)> {
    let n = actions.rows();
    if n == 0 {
        return Err(Error::Invalid("empty prior training set".into()));
    }
    if hyper.batch_size < 2 {
        return Err(Error::Invalid("prior batch size must be >= 2".into()));
    }
    let mut adam = AdamState::new(hyper.adam, prior.trainable_params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_nll = Vec::with_capacity(hyper.epochs);
    let mut last_good = prior.clone();
    for epoch in 0..hyper.epochs {
        order.shuffle(rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(hyper.batch_size) {
            // Batch statistics of a single row are degenerate.
            if chunk.len() < 2 {
                continue;
            }
            let a = actions.select_rows(chunk);
            let c = cond.select_rows(chunk);
            let step = train_step(&mut prior, &mut adam, &a, &c);
            let loss = match step {
                Ok(l) => l,
                // Variance or log-det blow-ups surface as domain errors.
                Err(Error::NonFinite(_) | Error::Domain { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::PriorDiverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            total += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let nll = if count > 0 {
            total / count as f64
        } else {
            f64::NAN
        };
        on_epoch(epoch, nll);
        epoch_nll.push(nll);
        last_good = prior.clone();
    }
    Ok((prior, TrainReport { epoch_nll }))
}

/// Builds `(a_t, c_t)` pairs from `data` per `cond` and trains a freshly
/// initialised prior on them.
pub fn train_prior(
    data: &OfflineDataset,
    cond: ConditioningSpec,
    flow: FlowConfig,
    hyper: &PriorTrainConfig,
    rng: &mut impl Rng,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(FlowPrior, TrainReport)> {
    if flow.cond != cond {
        return Err(Error::Invalid(
            "flow config conditioning differs from the requested one".into(),
        ));
    }
    let (actions, c) = cond.pairs(data)?;
    let prior = FlowPrior::new(flow, rng)?;
    train_on_pairs(prior, &actions, &c, hyper, rng, on_epoch)
}
