use serde::{Deserialize, Serialize};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};
use crate::mazeworld::OfflineDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum Conditioning {
    /// Unconditional prior over single actions.
    None,
    /// The previous `k` actions, oldest first.
    LastActions(usize),
    State,
    StateAndLastAction,
}

/// What a prior conditions on, together with the dimensions needed to lay the
/// conditioning vector out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditioningSpec {
    pub kind: Conditioning,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl ConditioningSpec {
    pub fn new(kind: Conditioning, state_dim: usize, action_dim: usize) -> Result<Self> {
        if action_dim == 0 {
            return Err(Error::Invalid("action_dim must be >= 1".into()));
        }
        match kind {
            Conditioning::LastActions(0) => {
                return Err(Error::Invalid("last-actions window must be >= 1".into()))
            }
            Conditioning::State | Conditioning::StateAndLastAction if state_dim == 0 => {
                return Err(Error::Invalid(
                    "state conditioning needs state_dim >= 1".into(),
                ))
            }
            _ => {}
        }
        Ok(ConditioningSpec {
            kind,
            state_dim,
            action_dim,
        })
    }

    pub fn unconditional(action_dim: usize) -> Self {
        ConditioningSpec {
            kind: Conditioning::None,
            state_dim: 0,
            action_dim,
        }
    }

    pub fn last_actions(k: usize, action_dim: usize) -> Result<Self> {
        Self::new(Conditioning::LastActions(k), 0, action_dim)
    }

    pub fn cond_dim(&self) -> usize {
        match self.kind {
            Conditioning::None => 0,
            Conditioning::LastActions(k) => k * self.action_dim,
            Conditioning::State => self.state_dim,
            Conditioning::StateAndLastAction => self.state_dim + self.action_dim,
        }
    }

    /// Number of past actions the conditioning looks at.
    pub fn window(&self) -> usize {
        match self.kind {
            Conditioning::None | Conditioning::State => 0,
            Conditioning::LastActions(k) => k,
            Conditioning::StateAndLastAction => 1,
        }
    }

    /// Writes the conditioning vector into `out`. `past` holds the actions
    /// taken so far in the episode, flattened, most recent last; missing
    /// history is zero-padded.
    pub fn encode_into(&self, state: &[f64], past: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cond_dim());
        let ad = self.action_dim;
        let mut off = 0;
        if matches!(
            self.kind,
            Conditioning::State | Conditioning::StateAndLastAction
        ) {
            out[..self.state_dim].copy_from_slice(&state[..self.state_dim]);
            off = self.state_dim;
        }
        let w = self.window();
        if w > 0 {
            let slot = &mut out[off..off + w * ad];
            let have = (past.len() / ad).min(w);
            let pad = (w - have) * ad;
            slot[..pad].iter_mut().for_each(|x| *x = 0.0);
            slot[pad..].copy_from_slice(&past[past.len() - have * ad..]);
        }
    }

    pub fn encode(&self, state: &[f64], past: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cond_dim()];
        self.encode_into(state, past, &mut out);
        out
    }

    /// Every `(a_t, c_t)` pair in the dataset, as two aligned matrices.
    pub fn pairs(&self, data: &OfflineDataset) -> Result<(Matrix, Matrix)> {
        if data.action_dim != self.action_dim {
            return Err(Error::Shape {
                op: "conditioning pairs",
                lhs: (0, data.action_dim),
                rhs: (0, self.action_dim),
            });
        }
        if self.cond_dim() > 0 && self.state_dim > 0 && data.state_dim < self.state_dim {
            return Err(Error::Shape {
                op: "conditioning pairs",
                lhs: (0, data.state_dim),
                rhs: (0, self.state_dim),
            });
        }
        let n = data.num_pairs();
        let (ad, cd) = (self.action_dim, self.cond_dim());
        let mut actions = Vec::with_capacity(n * ad);
        let mut cond = vec![0.0; n * cd];
        let mut row = 0;
        for traj in &data.trajectories {
            let flat = traj.actions.data();
            for t in 0..traj.len() {
                actions.extend_from_slice(traj.actions.row(t));
                let start = t.saturating_sub(self.window()) * ad;
                self.encode_into(
                    traj.states.row(t),
                    &flat[start..t * ad],
                    &mut cond[row * cd..(row + 1) * cd],
                );
                row += 1;
            }
        }
        Ok((
            Matrix::from_vec(n, ad, actions)?,
            Matrix::from_vec(n, cd, cond)?,
        ))
    }
}
