use std::sync::Arc;

use rand::Rng;

use super::layout::MazeSpec;
use crate::error::{Error, Result};
use crate::rng::RunRng;

/// Agent position and goal, in maze units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GcObservation {
    pub pos: [f64; 2],
    pub goal: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub obs: GcObservation,
    pub reward: f64,
    /// Episode over, either by reaching the goal or by the horizon.
    pub done: bool,
    /// Goal reached. Unlike a horizon cut-off this ends the MDP.
    pub terminal: bool,
}

pub fn clip_action(a: [f64; 2]) -> [f64; 2] {
    [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]
}

pub fn goal_reached(spec: &MazeSpec, pos: [f64; 2], goal: [f64; 2]) -> bool {
    (pos[0] - goal[0]).hypot(pos[1] - goal[1]) < spec.success_radius
}

/// Moves `pos` by the clipped action, one axis at a time. An axis whose move
/// would end inside a wall is dropped; the other axis still applies.
pub fn integrate(spec: &MazeSpec, pos: [f64; 2], action: [f64; 2]) -> [f64; 2] {
    let a = clip_action(action);
    let mut p = pos;
    let x = [p[0] + a[0], p[1]];
    if spec.is_free(x) {
        p = x;
    }
    let y = [p[0], p[1] + a[1]];
    if spec.is_free(y) {
        p = y;
    }
    p
}

#[derive(Clone, Debug)]
pub struct MazeEnv {
    spec: Arc<MazeSpec>,
    rng: RunRng,
    pos: [f64; 2],
    goal: [f64; 2],
    t: usize,
    done: bool,
}

impl MazeEnv {
    /// The environment starts finished; call [`MazeEnv::reset`] first.
    pub fn new(spec: Arc<MazeSpec>, rng: RunRng) -> Self {
        let pos = spec.start;
        MazeEnv {
            spec,
            rng,
            pos,
            goal: pos,
            t: 0,
            done: true,
        }
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn reset(&mut self) -> GcObservation {
        self.pos = self.spec.start;
        self.goal = self.spec.sample_goal(&mut self.rng);
        self.t = 0;
        self.done = false;
        self.observe()
    }

    /// Resets to an arbitrary state, bypassing the layout's start and goal
    /// rules.
    pub fn reset_to(&mut self, pos: [f64; 2], goal: [f64; 2]) -> Result<GcObservation> {
        if !self.spec.is_free(pos) {
            return Err(Error::Invalid(format!(
                "{pos:?} is not free in `{}`",
                self.spec.name
            )));
        }
        self.pos = pos;
        self.goal = goal;
        self.t = 0;
        self.done = false;
        Ok(self.observe())
    }

    pub fn observe(&self) -> GcObservation {
        GcObservation {
            pos: self.pos,
            goal: self.goal,
        }
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: [f64; 2]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if !action.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("action {action:?}")));
        }
        self.pos = integrate(&self.spec, self.pos, action);
        self.t += 1;
        let terminal = goal_reached(&self.spec, self.pos, self.goal);
        self.done = terminal || self.t >= self.spec.horizon;
        Ok(StepResult {
            obs: self.observe(),
            reward: if terminal { 1.0 } else { 0.0 },
            done: self.done,
            terminal,
        })
    }

    pub fn rng_mut(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}
