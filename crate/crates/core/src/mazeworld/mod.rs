//! Goal-conditioned point mazes, the scripted expert and offline datasets.

mod dataset;
mod env;
mod expert;
mod layout;

pub use dataset::{collect_dataset, OfflineDataset, Trajectory};
pub use env::{clip_action, goal_reached, integrate, GcObservation, MazeEnv, StepResult};
pub use expert::scripted_expert;
pub use layout::{GoalRule, Layout, MazeSpec, DEFAULT_HORIZON, SUCCESS_RADIUS};
