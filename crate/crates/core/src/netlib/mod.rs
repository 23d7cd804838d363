//! Feed-forward networks, the squashed Gaussian policy head, Adam, Polyak
//! averaging and parameter files.

mod checkpoint;
mod mlp;
mod optim;
mod policy;

pub use checkpoint::{ParamFile, MAGIC};
pub use mlp::{Activation, BoundMlp, Linear, Mlp, MlpSpec, OutputActivation, Params};
pub use optim::{polyak_update, AdamConfig, AdamState};
pub use policy::{PolicySample, SquashedGaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
