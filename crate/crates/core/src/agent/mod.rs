//! Goal-conditioned SAC with a prior mixture, plus the SAC and SAC+BC
//! baselines.

mod bc;
mod mixture;
mod obs;
mod replay;
mod sac;
mod train;

pub use bc::{bc_goal_pairs, bc_loss, bc_pretrain, BcConfig};
pub use mixture::{sample_mixture, use_prior, MixtureDraw};
pub use obs::ObsEncoder;
pub use replay::{ReplayBuffer, SampledWindow, Transition};
pub use sac::{
    AgentBundle, Batch, NetSizes, SacHyper, UpdateNoise, UpdateStats, ACTION_DIM, OBS_DIM,
};
pub use train::{
    evaluate, train, Actor, AgentConfig, CurveRow, EvalResult, Greedy, Mode, TrainOutput,
};
