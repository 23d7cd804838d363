use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bc::{bc_pretrain, BcConfig};
use super::mixture::use_prior;
use super::obs::ObsEncoder;
use super::replay::{ReplayBuffer, SampledWindow, Transition};
use super::sac::{AgentBundle, Batch, NetSizes, SacHyper, UpdateNoise, UpdateStats, ACTION_DIM};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};
use crate::flowprior::FlowPrior;
use crate::mazeworld::{GcObservation, MazeEnv, MazeSpec, OfflineDataset};
use crate::netlib::SquashedGaussianPolicy;
use crate::rng::{self, RunRng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sac,
    SacBc,
    Temporl,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sac => "sac",
            Mode::SacBc => "sac_bc",
            Mode::Temporl => "temporl",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "sac" => Ok(Mode::Sac),
            "sac_bc" => Ok(Mode::SacBc),
            "temporl" => Ok(Mode::Temporl),
            _ => Err(Error::Config(format!(
                "unknown mode `{s}` (expected sac, sac_bc or temporl)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub mode: Mode,
    pub hyper: SacHyper,
    pub sizes: NetSizes,
    pub n_step: usize,
    pub batch_size: usize,
    pub her_ratio: f64,
    pub replay_capacity: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub initial_exploration: usize,
    pub steps_before_training: usize,
    pub steps_per_iteration: usize,
    /// Gradient steps run every `steps_per_iteration` env steps.
    pub updates_per_iteration: usize,
    pub eval_episodes: usize,
    /// Prior draws stored per transition for the update; 0 samples afresh.
    pub prior_pool: usize,
    pub probe_states: usize,
    pub bc: BcConfig,
}

impl AgentConfig {
    pub fn new(mode: Mode) -> Self {
        let alpha = if mode == Mode::Temporl { 0.01 } else { 0.02 };
        AgentConfig {
            mode,
            hyper: SacHyper {
                alpha,
                ..SacHyper::default()
            },
            sizes: NetSizes::default(),
            n_step: 10,
            batch_size: 100,
            her_ratio: 4.0,
            replay_capacity: 500_000,
            epochs: 125,
            steps_per_epoch: 4000,
            initial_exploration: 10_000,
            steps_before_training: 1000,
            steps_per_iteration: 50,
            updates_per_iteration: 50,
            eval_episodes: 10,
            prior_pool: 4,
            probe_states: 100,
            bc: BcConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_step", self.n_step),
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("steps_per_epoch", self.steps_per_epoch),
            ("steps_per_iteration", self.steps_per_iteration),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        let h = &self.hyper;
        if !(h.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", h.alpha)));
        }
        if !(0.0..=1.0).contains(&h.gamma) || !(0.0..=1.0).contains(&h.polyak) {
            return Err(Error::Config("gamma and polyak must lie in [0, 1]".into()));
        }
        if !(h.lambda0 > 0.0 && h.lambda0 < 1.0) {
            return Err(Error::Config(format!(
                "lambda0 must lie in (0, 1), got {}",
                h.lambda0
            )));
        }
        if !(self.her_ratio >= 0.0) {
            return Err(Error::Config(format!(
                "her_ratio must be >= 0, got {}",
                self.her_ratio
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

/// One learning-curve row. Losses are means over the updates since the
/// previous row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub env_step: usize,
    pub episode: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_lambda: f64,
    pub q_loss: f64,
    pub policy_loss: f64,
    pub mixing_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub bundle: AgentBundle,
    pub curve: Vec<CurveRow>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Anything that maps an observation to an action.
pub trait Actor {
    fn act(&mut self, obs: &GcObservation) -> Result<[f64; 2]>;
}

impl<F: FnMut(&GcObservation) -> [f64; 2]> Actor for F {
    fn act(&mut self, obs: &GcObservation) -> Result<[f64; 2]> {
        Ok(self(obs))
    }
}

/// Deterministic policy: the mean action.
pub struct Greedy<'a> {
    pub policy: &'a SquashedGaussianPolicy,
    pub enc: ObsEncoder,
}

impl Actor for Greedy<'_> {
    fn act(&mut self, obs: &GcObservation) -> Result<[f64; 2]> {
        let o = Matrix::row_vector(&self.enc.encode(obs.pos, obs.goal));
        let a = self.policy.mean_action(&o)?;
        Ok([a.get(0, 0), a.get(0, 1)])
    }
}

/// Full-horizon rollouts; an episode succeeds when any step earns reward 1.
pub fn evaluate(actor: &mut impl Actor, env: &mut MazeEnv, episodes: usize) -> Result<EvalResult> {
    if episodes == 0 {
        return Ok(EvalResult {
            success_rate: 0.0,
            mean_return: 0.0,
        });
    }
    let (mut successes, mut total) = (0usize, 0.0);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut success = false;
        loop {
            let r = env.step(actor.act(&obs)?)?;
            total += r.reward;
            success |= r.reward >= 1.0;
            obs = r.obs;
            if r.done {
                break;
            }
        }
        successes += success as usize;
    }
    Ok(EvalResult {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total / episodes as f64,
    })
}

/// Prior conditioning for the next action given the episode so far.
fn prior_cond(prior: &FlowPrior, pos: [f64; 2], history: &[f64], rows: usize) -> Result<Matrix> {
    let c = prior.cond_spec().encode(&pos, history);
    let mut data = Vec::with_capacity(rows * c.len());
    for _ in 0..rows {
        data.extend_from_slice(&c);
    }
    Matrix::from_vec(rows, c.len(), data)
}

fn tail(history: &[f64], window: usize) -> &[f64] {
    &history[history.len().saturating_sub(window * ACTION_DIM)..]
}

struct Learner<'p> {
    cfg: AgentConfig,
    spec: Arc<MazeSpec>,
    enc: ObsEncoder,
    prior: Option<&'p FlowPrior>,
    bundle: AgentBundle,
    buffer: ReplayBuffer,
    noise_rng: RunRng,
    prior_rng: RunRng,
    replay_rng: RunRng,
}

impl Learner<'_> {
    /// Prior rows at `pos`: the first `prior_pool` are stored, the last one
    /// is the acting candidate.
    fn draw_pool(&mut self, pos: [f64; 2], history: &[f64]) -> Result<Vec<f64>> {
        match self.prior {
            Some(p) => {
                let c = prior_cond(
                    p,
                    pos,
                    tail(history, p.cond_spec().window()),
                    self.cfg.prior_pool + 1,
                )?;
                Ok(p.sample(&c, &mut self.prior_rng)?.into_vec())
            }
            None => Ok(Vec::new()),
        }
    }

    fn act(&mut self, obs: &GcObservation, pool: &[f64], t: usize) -> Result<[f64; 2]> {
        let explore = t < self.cfg.initial_exploration;
        let candidate = || {
            let k = pool.len() - ACTION_DIM;
            [pool[k], pool[k + 1]]
        };
        match self.cfg.mode {
            Mode::Sac if explore => {
                let r = &mut self.noise_rng;
                return Ok([r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]);
            }
            Mode::Temporl if explore => return Ok(candidate()),
            _ => {}
        }
        let o = Matrix::row_vector(&self.enc.encode(obs.pos, obs.goal));
        if self.cfg.mode == Mode::Temporl {
            let lambda = self.bundle.lambda(&o)?.item();
            if use_prior(lambda, self.noise_rng.gen::<f64>()) {
                return Ok(candidate());
            }
        }
        let noise = rng::standard_normal(&mut self.noise_rng, 1, ACTION_DIM);
        let (a, _) = self.bundle.policy.sample(&o, &noise)?;
        Ok([a.get(0, 0), a.get(0, 1)])
    }

    fn pick(&mut self, pool: &[f64]) -> [f64; 2] {
        let j = self.noise_rng.gen_range(0..pool.len() / ACTION_DIM) * ACTION_DIM;
        [pool[j], pool[j + 1]]
    }

    /// Prior draws for the first state of each window and for its
    /// bootstrap state.
    fn prior_actions(&mut self, windows: &[SampledWindow]) -> Result<(Matrix, Matrix)> {
        let n = windows.len();
        let (mut now, mut next) = (Matrix::zeros(n, ACTION_DIM), Matrix::zeros(n, ACTION_DIM));
        let Some(prior) = self.prior else {
            return Ok((now, next));
        };
        if self.cfg.prior_pool > 0 {
            for (r, w) in windows.iter().enumerate() {
                let first = self
                    .buffer
                    .get(w.index)
                    .expect("sampled index is stored")
                    .pool
                    .clone();
                let last = self
                    .buffer
                    .get(w.last)
                    .expect("sampled index is stored")
                    .next_pool
                    .clone();
                now.row_mut(r).copy_from_slice(&self.pick(&first));
                next.row_mut(r).copy_from_slice(&self.pick(&last));
            }
            return Ok((now, next));
        }
        let window = prior.cond_spec().window();
        let cd = prior.cond_spec().cond_dim();
        let (mut c_now, mut c_next) = (Matrix::zeros(n, cd), Matrix::zeros(n, cd));
        for (r, w) in windows.iter().enumerate() {
            let h = self.buffer.history_before(w.index, window);
            prior.cond_spec().encode_into(&w.pos, &h, c_now.row_mut(r));
            let mut h = self.buffer.history_before(w.last, window);
            h.extend_from_slice(
                &self
                    .buffer
                    .get(w.last)
                    .expect("sampled index is stored")
                    .action,
            );
            prior
                .cond_spec()
                .encode_into(&w.bootstrap_pos, tail(&h, window), c_next.row_mut(r));
        }
        now = prior.sample(&c_now, &mut self.prior_rng)?;
        next = prior.sample(&c_next, &mut self.prior_rng)?;
        Ok((now, next))
    }

    fn batch(&mut self) -> Result<Batch> {
        let h = self.bundle.hyper;
        let windows = self.buffer.sample(
            self.cfg.batch_size,
            self.cfg.n_step,
            h.gamma,
            self.spec.success_radius,
            self.cfg.her_ratio,
            &mut self.replay_rng,
        )?;
        let mut batch = assemble_batch(&windows, &self.enc, h.gamma)?;
        (batch.prior_actions, batch.next_prior_actions) = self.prior_actions(&windows)?;
        Ok(batch)
    }

    fn update(&mut self) -> Result<UpdateStats> {
        let batch = self.batch()?;
        let noise = UpdateNoise::draw(batch.len(), &mut self.noise_rng);
        self.bundle.update(&batch, &noise)
    }
}

/// Network-ready batch from sampled windows; the prior columns are zero.
pub(crate) fn assemble_batch(
    windows: &[SampledWindow],
    enc: &ObsEncoder,
    gamma: f64,
) -> Result<Batch> {
    let n = windows.len();
    let mut actions = Vec::with_capacity(2 * n);
    let (mut rewards, mut discount) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for w in windows {
        actions.extend_from_slice(&w.action);
        rewards.push(w.reward);
        discount.push(if w.done { 0.0 } else { gamma.powi(w.n as i32) });
    }
    Ok(Batch {
        obs: enc.encode_rows(windows.iter().map(|w| (w.pos, w.goal))),
        actions: Matrix::from_vec(n, ACTION_DIM, actions)?,
        rewards: Matrix::from_vec(n, 1, rewards)?,
        discount: Matrix::from_vec(n, 1, discount)?,
        next_obs: enc.encode_rows(windows.iter().map(|w| (w.bootstrap_pos, w.goal))),
        prior_actions: Matrix::zeros(n, ACTION_DIM),
        next_prior_actions: Matrix::zeros(n, ACTION_DIM),
    })
}

fn probe_set(spec: &MazeSpec, enc: &ObsEncoder, n: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, Stream::Probe);
    let rows: Vec<_> = (0..n)
        .map(|_| (spec.sample_free(&mut r), spec.sample_goal(&mut r)))
        .collect();
    enc.encode_rows(rows)
}

fn mean_lambda(bundle: &AgentBundle, probe: &Matrix) -> Result<f64> {
    if !bundle.has_mixing() || probe.rows() == 0 {
        return Ok(0.0);
    }
    Ok(bundle.lambda(probe)?.mean())
}

/// Runs one seed of downstream learning. A curve row is emitted before
/// training and after every epoch.
pub fn train(
    cfg: &AgentConfig,
    spec: Arc<MazeSpec>,
    prior: Option<&FlowPrior>,
    demos: Option<&OfflineDataset>,
    seed: u64,
    mut on_row: impl FnMut(&CurveRow),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let prior = match (cfg.mode, prior) {
        (Mode::Temporl, None) => return Err(Error::Config("temporl mode needs a prior".into())),
        (Mode::Temporl, Some(p)) => {
            if p.action_dim() != ACTION_DIM || p.cond_spec().state_dim > 2 {
                return Err(Error::Config(
                    "prior dimensions do not match the maze".into(),
                ));
            }
            Some(p)
        }
        _ => None,
    };
    let enc = ObsEncoder::new(&spec);
    let mut init = rng::stream(seed, Stream::Init);
    let mut bundle = AgentBundle::new(cfg.hyper, &cfg.sizes, cfg.mode == Mode::Temporl, &mut init)?;
    if cfg.mode == Mode::SacBc {
        let data = demos
            .ok_or_else(|| Error::Config("sac_bc mode needs a demonstration dataset".into()))?;
        let mut policy = bundle.policy.clone();
        bc_pretrain(
            &mut policy,
            data,
            &enc,
            &cfg.bc,
            &mut rng::stream(seed, Stream::Data),
        )?;
        bundle = AgentBundle::from_parts(cfg.hyper, policy, bundle.q1, bundle.q2, None);
    }
    let probe = probe_set(&spec, &enc, cfg.probe_states, seed);
    let mut env = MazeEnv::new(spec.clone(), rng::stream(seed, Stream::Env));
    let mut eval_env = MazeEnv::new(spec.clone(), rng::stream(seed, Stream::Eval));
    let mut l = Learner {
        cfg: cfg.clone(),
        enc,
        prior,
        bundle,
        buffer: ReplayBuffer::new(cfg.replay_capacity)?,
        noise_rng: rng::stream(seed, Stream::PolicyNoise),
        prior_rng: rng::stream(seed, Stream::Prior),
        replay_rng: rng::stream(seed, Stream::Relabel),
        spec,
    };

    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut emit = |l: &Learner,
                    step: usize,
                    episode: u64,
                    eval_env: &mut MazeEnv,
                    sums: [f64; 3],
                    n: usize|
     -> Result<()> {
        let mut greedy = Greedy {
            policy: &l.bundle.policy,
            enc: l.enc,
        };
        let e = evaluate(&mut greedy, eval_env, cfg.eval_episodes)?;
        let avg = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
        let row = CurveRow {
            env_step: step,
            episode,
            success_rate: e.success_rate,
            mean_return: e.mean_return,
            mean_lambda: mean_lambda(&l.bundle, &probe)?,
            q_loss: avg(sums[0]),
            policy_loss: avg(sums[1]),
            mixing_loss: avg(sums[2]),
        };
        on_row(&row);
        curve.push(row);
        Ok(())
    };
    emit(&l, 0, 0, &mut eval_env, [0.0; 3], 0)?;

    let mut episode = 0u64;
    let mut obs = GcObservation {
        pos: [0.0; 2],
        goal: [0.0; 2],
    };
    let mut history: Vec<f64> = Vec::new();
    let mut pool: Vec<f64> = Vec::new();
    let (mut sums, mut n_updates) = ([0.0; 3], 0usize);
    for t in 0..cfg.total_steps() {
        if env.is_done() {
            obs = env.reset();
            history.clear();
            episode += 1;
            pool = l.draw_pool(obs.pos, &history)?;
        }
        let action = l.act(&obs, &pool, t)?;
        let step = env.elapsed();
        let r = env.step(action)?;
        history.extend_from_slice(&action);
        let next_pool = l.draw_pool(r.obs.pos, &history)?;
        let keep = pool.len().saturating_sub(ACTION_DIM);
        let transition = Transition {
            pos: obs.pos,
            action,
            reward: r.reward,
            next_pos: r.obs.pos,
            goal: obs.goal,
            terminal: r.terminal,
            episode,
            step,
            pool: if cfg.prior_pool > 0 {
                pool[..keep].to_vec()
            } else {
                Vec::new()
            },
            next_pool: if cfg.prior_pool > 0 {
                next_pool[..keep].to_vec()
            } else {
                Vec::new()
            },
        };
        l.buffer.push(transition, r.done);
        obs = r.obs;
        pool = next_pool;

        let done_steps = t + 1;
        if done_steps >= cfg.steps_before_training && done_steps % cfg.steps_per_iteration == 0 {
            for _ in 0..cfg.updates_per_iteration {
                let s = l.update()?;
                sums[0] += s.q_loss;
                sums[1] += s.policy_loss;
                sums[2] += s.mixing_loss;
                n_updates += 1;
            }
        }
        if done_steps % cfg.steps_per_epoch == 0 {
            emit(&l, done_steps, episode, &mut eval_env, sums, n_updates)?;
            sums = [0.0; 3];
            n_updates = 0;
        }
    }
    Ok(TrainOutput {
        bundle: l.bundle,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowprior::{ConditioningSpec, FlowConfig};
    use crate::mazeworld::{scripted_expert, Layout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(mode: Mode) -> AgentConfig {
        let mut c = AgentConfig::new(mode);
        c.sizes = NetSizes {
            hidden: vec![16, 16],
            mixing_hidden: vec![8],
        };
        c.epochs = 2;
        c.steps_per_epoch = 200;
        c.initial_exploration = 100;
        c.steps_before_training = 100;
        c.steps_per_iteration = 50;
        c.updates_per_iteration = 2;
        c.batch_size = 16;
        c.replay_capacity = 1000;
        c.eval_episodes = 1;
        c.probe_states = 10;
        c
    }

    fn tiny_prior() -> FlowPrior {
        let mut cfg = FlowConfig::new(ConditioningSpec::last_actions(1, 2).unwrap());
        cfg.n_layers = 2;
        cfg.hidden = 8;
        cfg.embed_dim = 4;
        FlowPrior::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn ten_step_target_discounts_the_bootstrap() {
        let spec = Layout::Room.spec();
        let enc = ObsEncoder::new(&spec);
        let mut buf = ReplayBuffer::new(100).unwrap();
        let goal = [12.0, 12.0];
        for s in 0..15 {
            let x = -10.0 + 0.5 * s as f64;
            let t = Transition {
                pos: [x, 0.0],
                action: [0.5, 0.0],
                reward: 0.0,
                next_pos: [x + 0.5, 0.0],
                goal,
                terminal: false,
                episode: 0,
                step: s,
                pool: vec![],
                next_pool: vec![],
            };
            buf.push(t, s == 14);
        }
        let w = buf.window(2, goal, 10, 0.99, spec.success_radius);
        assert_eq!((w.n, w.reward, w.done), (10, 0.0, false));
        assert_eq!(w.bootstrap_pos, [-4.0, 0.0]);
        let batch = assemble_batch(&[w], &enc, 0.99).unwrap();
        let cfg = tiny(Mode::Sac);
        let bundle = AgentBundle::new(
            cfg.hyper,
            &cfg.sizes,
            false,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let noise = UpdateNoise::draw(1, &mut ChaCha8Rng::seed_from_u64(2));
        let y = bundle.q_target(&batch, &noise).unwrap().item();
        let next = Matrix::row_vector(&enc.encode([-4.0, 0.0], goal));
        let (a, logp) = bundle.policy.sample(&next, &noise.next_policy).unwrap();
        let v = bundle.min_q(&next, &a).unwrap().item();
        let (t1, t2) = {
            let x = Matrix::hstack(&[&next, &a]).unwrap();
            (
                bundle.q1_target.infer(&x).unwrap().item(),
                bundle.q2_target.infer(&x).unwrap().item(),
            )
        };
        assert_eq!(v, t1.min(t2));
        let v = v - bundle.hyper.alpha * logp.item();
        assert!((y - 0.99f64.powi(10) * v).abs() < 1e-12, "{y} vs {v}");
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("sac-bc".parse::<Mode>().unwrap(), Mode::SacBc);
        assert_eq!("temporl".parse::<Mode>().unwrap(), Mode::Temporl);
        assert!("ppo".parse::<Mode>().unwrap_err().is_config());
    }

    #[test]
    fn temporl_without_prior_is_config_error() {
        let spec = Arc::new(Layout::Room.spec());
        let err = train(&tiny(Mode::Temporl), spec, None, None, 0, |_| {}).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn zero_epochs_keep_initial_parameters() {
        let spec = Arc::new(Layout::Room.spec());
        let mut cfg = tiny(Mode::Temporl);
        cfg.epochs = 0;
        let prior = tiny_prior();
        let out = train(&cfg, spec, Some(&prior), None, 5, |_| {}).unwrap();
        let fresh = AgentBundle::new(
            cfg.hyper,
            &cfg.sizes,
            true,
            &mut rng::stream(5, Stream::Init),
        )
        .unwrap();
        assert_eq!(out.bundle.policy.net(), fresh.policy.net());
        assert_eq!(out.bundle.q1, fresh.q1);
        assert_eq!(out.bundle.mixing, fresh.mixing);
        assert_eq!(out.curve.len(), 1);
        assert!((out.curve[0].mean_lambda - 0.95).abs() < 0.01);
    }

    #[test]
    fn runs_are_deterministic_and_rows_well_formed() {
        let spec = Arc::new(Layout::CorridorShort.spec());
        let prior = tiny_prior();
        for pool in [0, 2] {
            let mut cfg = tiny(Mode::Temporl);
            cfg.prior_pool = pool;
            let a = train(&cfg, spec.clone(), Some(&prior), None, 9, |_| {}).unwrap();
            let b = train(&cfg, spec.clone(), Some(&prior), None, 9, |_| {}).unwrap();
            assert_eq!(a.curve, b.curve);
            assert_eq!(a.curve.len(), 3);
            assert_eq!(
                a.curve.iter().map(|r| r.env_step).collect::<Vec<_>>(),
                [0, 200, 400]
            );
            for r in &a.curve {
                assert!((0.0..=1.0).contains(&r.success_rate));
                assert!((0.0..=1.0).contains(&r.mean_lambda));
            }
            assert!(a.curve[2].q_loss > 0.0);
        }
    }

    #[test]
    fn sac_and_bc_modes_run() {
        let spec = Arc::new(Layout::Room.spec());
        let out = train(&tiny(Mode::Sac), spec.clone(), None, None, 1, |_| {}).unwrap();
        assert!(out
            .curve
            .iter()
            .all(|r| r.mean_lambda == 0.0 && r.mixing_loss == 0.0));
        assert!(
            train(&tiny(Mode::SacBc), spec.clone(), None, None, 1, |_| {})
                .unwrap_err()
                .is_config()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let demos = crate::mazeworld::collect_dataset(&spec, 2, 120, 0.25, &mut rng).unwrap();
        let mut cfg = tiny(Mode::SacBc);
        cfg.bc.epochs = 1;
        let out = train(&cfg, spec, None, Some(&demos), 1, |_| {}).unwrap();
        assert!(!out.bundle.has_mixing());
    }

    #[test]
    fn expert_actor_solves_room() {
        let spec = Arc::new(Layout::Room.spec());
        let mut env = MazeEnv::new(spec, rng::stream(0, Stream::Eval));
        let mut noise = ChaCha8Rng::seed_from_u64(0);
        let mut expert = |o: &GcObservation| scripted_expert(o.pos, o.goal, 0.0, &mut noise);
        let e = evaluate(&mut expert, &mut env, 10).unwrap();
        assert_eq!(e.success_rate, 1.0);
        assert_eq!(e.mean_return, 1.0);
    }

    #[test]
    fn untrained_agent_fails_corridor() {
        let spec = Arc::new(Layout::Corridor.spec());
        let cfg = tiny(Mode::Sac);
        let bundle = AgentBundle::new(
            cfg.hyper,
            &cfg.sizes,
            false,
            &mut rng::stream(0, Stream::Init),
        )
        .unwrap();
        let mut env = MazeEnv::new(spec.clone(), rng::stream(0, Stream::Eval));
        let mut greedy = Greedy {
            policy: &bundle.policy,
            enc: ObsEncoder::new(&spec),
        };
        let e = evaluate(&mut greedy, &mut env, 3).unwrap();
        assert_eq!(e.success_rate, 0.0);
    }
}
