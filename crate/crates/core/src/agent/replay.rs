use rand::Rng;

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// One environment step. Positions are in maze units; `pool` and `next_pool`
/// hold prior samples (flattened, `k × action_dim`) drawn with the action
/// history at `s_t` and `s_{t+1}` respectively.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub pos: [f64; 2],
    pub action: [f64; 2],
    pub reward: f64,
    pub next_pos: [f64; 2],
    pub goal: [f64; 2],
    /// The goal was reached on this step.
    pub terminal: bool,
    pub episode: u64,
    pub step: usize,
    pub pool: Vec<f64>,
    pub next_pool: Vec<f64>,
}

impl Transition {
    /// Achieved position, the hindsight goal candidate.
    pub fn achieved(&self) -> [f64; 2] {
        self.next_pos
    }
}

/// A sampled n-step window, after optional goal relabeling.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledWindow {
    /// Absolute index of the first transition.
    pub index: u64,
    pub pos: [f64; 2],
    pub action: [f64; 2],
    pub goal: [f64; 2],
    pub relabeled: bool,
    /// Σ γ^j r_{t+j} over the window.
    pub reward: f64,
    /// Steps in the window.
    pub n: usize,
    /// Window ended on a goal-reaching step.
    pub done: bool,
    pub bootstrap_pos: [f64; 2],
    /// Absolute index of the last transition in the window.
    pub last: u64,
}

/// FIFO ring buffer with per-episode bookkeeping, so that n-step windows and
/// hindsight goals stay inside one episode.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    /// Absolute index of the next write.
    written: u64,
    /// Absolute index of the last transition of each stored transition's
    /// episode, or `None` while the episode is still running.
    episode_last: Vec<Option<u64>>,
    open_episode_start: Option<u64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Invalid("replay capacity must be >= 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            written: 0,
            episode_last: Vec::with_capacity(capacity.min(1 << 16)),
            open_episode_start: None,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Absolute index of the oldest stored transition.
    pub fn oldest(&self) -> u64 {
        self.written - self.slots.len() as u64
    }

    pub fn contains(&self, abs: u64) -> bool {
        abs >= self.oldest() && abs < self.written
    }

    fn slot(&self, abs: u64) -> usize {
        (abs % self.capacity as u64) as usize
    }

    pub fn get(&self, abs: u64) -> Option<&Transition> {
        self.contains(abs).then(|| &self.slots[self.slot(abs)])
    }

    /// Appends a transition, evicting the oldest when full. `episode_end`
    /// marks the last transition of its episode.
    pub fn push(&mut self, t: Transition, episode_end: bool) -> u64 {
        let abs = self.written;
        if self.open_episode_start.is_none() {
            self.open_episode_start = Some(abs);
        }
        if self.slots.len() < self.capacity {
            self.slots.push(t);
            self.episode_last.push(None);
        } else {
            let s = self.slot(abs);
            self.slots[s] = t;
            self.episode_last[s] = None;
        }
        self.written += 1;
        if episode_end {
            let start = self.open_episode_start.take().expect("set above");
            for i in start.max(self.oldest())..self.written {
                let s = self.slot(i);
                self.episode_last[s] = Some(abs);
            }
        }
        abs
    }

    /// Last stored transition of the episode containing `abs`.
    pub fn episode_end(&self, abs: u64) -> u64 {
        self.episode_last[self.slot(abs)].unwrap_or(self.written - 1)
    }

    /// Actions preceding `abs` within its episode, oldest first, at most `k`.
    pub fn history_before(&self, abs: u64, k: usize) -> Vec<f64> {
        let t = &self.slots[self.slot(abs)];
        let mut out = Vec::with_capacity(2 * k);
        let from = abs.saturating_sub(k.min(t.step) as u64);
        for i in from..abs {
            match self.get(i) {
                Some(p) if p.episode == t.episode => out.extend_from_slice(&p.action),
                _ => out.clear(),
            }
        }
        out
    }

    /// Builds the n-step window starting at `abs` for goal `goal`. Rewards
    /// are recomputed against `goal`; the window stops at the episode end or
    /// at the first step that reaches `goal`.
    pub fn window(
        &self,
        abs: u64,
        goal: [f64; 2],
        n: usize,
        gamma: f64,
        radius: f64,
    ) -> SampledWindow {
        let first = &self.slots[self.slot(abs)];
        let end = self.episode_end(abs).min(abs + n as u64 - 1);
        let (mut reward, mut disc, mut done, mut last) = (0.0, 1.0, false, abs);
        for i in abs..=end {
            let t = &self.slots[self.slot(i)];
            last = i;
            let hit = (t.next_pos[0] - goal[0]).hypot(t.next_pos[1] - goal[1]) < radius;
            if hit {
                reward += disc;
                done = true;
                break;
            }
            disc *= gamma;
        }
        SampledWindow {
            index: abs,
            pos: first.pos,
            action: first.action,
            goal,
            relabeled: false,
            reward,
            n: (last - abs + 1) as usize,
            done,
            bootstrap_pos: self.slots[self.slot(last)].next_pos,
            last,
        }
    }

    /// Uniformly sampled windows. Each is relabeled with probability
    /// `ratio / (ratio + 1)` to the achieved position of a uniformly chosen
    /// transition at or after it in the same episode.
    pub fn sample(
        &self,
        batch: usize,
        n: usize,
        gamma: f64,
        radius: f64,
        her_ratio: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<SampledWindow>> {
        if self.is_empty() {
            return Err(Error::Invalid(
                "sampling from an empty replay buffer".into(),
            ));
        }
        if n == 0 {
            return Err(Error::Invalid("n-step horizon must be >= 1".into()));
        }
        let p_relabel = if her_ratio > 0.0 {
            her_ratio / (her_ratio + 1.0)
        } else {
            0.0
        };
        let lo = self.oldest();
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let abs = rng.gen_range(lo..self.written);
            let t = &self.slots[self.slot(abs)];
            let relabel = p_relabel > 0.0 && rng.gen::<f64>() < p_relabel;
            let goal = if relabel {
                let j = rng.gen_range(abs..=self.episode_end(abs));
                self.slots[self.slot(j)].achieved()
            } else {
                t.goal
            };
            let mut w = self.window(abs, goal, n, gamma, radius);
            w.relabeled = relabel;
            out.push(w);
        }
        Ok(out)
    }

    /// Pool entry `which` at the window's first state, as a `1 × d` slice.
    pub fn pool_at(&self, abs: u64, which: usize, d: usize) -> Option<&[f64]> {
        let p = &self.slots[self.slot(abs)].pool;
        (p.len() >= (which + 1) * d).then(|| &p[which * d..(which + 1) * d])
    }

    pub fn next_pool_at(&self, abs: u64, which: usize, d: usize) -> Option<&[f64]> {
        let p = &self.slots[self.slot(abs)].next_pool;
        (p.len() >= (which + 1) * d).then(|| &p[which * d..(which + 1) * d])
    }

    /// Actions of all stored transitions as a matrix, in storage order.
    pub fn actions(&self) -> Matrix {
        let data: Vec<f64> = (self.oldest()..self.written)
            .flat_map(|i| self.slots[self.slot(i)].action)
            .collect();
        Matrix::from_vec(self.len(), 2, data).expect("two columns")
    }
}
