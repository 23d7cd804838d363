use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Axis, Graph, Matrix, Tensor};
use crate::error::{Error, Result};
use crate::netlib::{
    polyak_update, AdamConfig, AdamState, BoundMlp, Mlp, MlpSpec, OutputActivation, Params,
    SquashedGaussianPolicy,
};

pub const OBS_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSizes {
    pub hidden: Vec<usize>,
    pub mixing_hidden: Vec<usize>,
}

impl Default for NetSizes {
    fn default() -> Self {
        NetSizes {
            hidden: vec![256, 256],
            mixing_hidden: vec![128, 128],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacHyper {
    pub gamma: f64,
    pub polyak: f64,
    pub alpha: f64,
    pub lr: f64,
    /// Multiplier on mixing-network gradients before its optimizer step.
    pub eps_lambda: f64,
    pub lambda0: f64,
}

impl Default for SacHyper {
    fn default() -> Self {
        SacHyper {
            gamma: 0.99,
            polyak: 0.995,
            alpha: 0.02,
            lr: 1e-3,
            eps_lambda: 1e-9,
            lambda0: 0.95,
        }
    }
}

/// Policy, twin critics with targets and, for the prior mixture, the mixing
/// network, together with their optimizer states.
#[derive(Clone, Debug)]
pub struct AgentBundle {
    pub hyper: SacHyper,
    pub policy: SquashedGaussianPolicy,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub mixing: Option<Mlp>,
    q_opt: AdamState,
    pi_opt: AdamState,
    mix_opt: Option<AdamState>,
}

/// Minibatch in network coordinates. `discount` already folds in `γ^n` and
/// the done flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Matrix,
    pub discount: Matrix,
    pub next_obs: Matrix,
    /// Prior draw at `obs` (used by the mixing loss).
    pub prior_actions: Matrix,
    /// Prior draw at `next_obs` (candidate for the bootstrap action).
    pub next_prior_actions: Matrix,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every random quantity one update consumes, so updates are replayable.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateNoise {
    /// Standard normal, for `a′ ~ π(·|s′)` in the target.
    pub next_policy: Matrix,
    /// Uniform(0,1) per row; the bootstrap action comes from the prior when
    /// below `Λ(s′)`.
    pub gate: Matrix,
    /// Standard normal, for the reparameterized action in the policy loss.
    pub policy: Matrix,
}

impl UpdateNoise {
    pub fn draw(batch: usize, rng: &mut impl Rng) -> Self {
        UpdateNoise {
            next_policy: crate::rng::standard_normal(rng, batch, ACTION_DIM),
            gate: crate::rng::uniform(rng, batch, 1, 0.0, 1.0),
            policy: crate::rng::standard_normal(rng, batch, ACTION_DIM),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub q_loss: f64,
    pub policy_loss: f64,
    pub mixing_loss: f64,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn critic_forward(g: &mut Graph<'_>, q: &BoundMlp, obs: Tensor, act: Tensor) -> Result<Tensor> {
    let x = g.concat_cols(&[obs, act])?;
    q.forward(g, x)
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

impl AgentBundle {
    /// Fresh networks. With `with_mixing`, the mixing network's output bias
    /// starts at `logit(λ₀)` and its output weights are near zero.
    pub fn new(
        hyper: SacHyper,
        sizes: &NetSizes,
        with_mixing: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(hyper.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha must be > 0, got {}",
                hyper.alpha
            )));
        }
        let policy =
            SquashedGaussianPolicy::new(OBS_DIM, &sizes.hidden, &[-1.0; 2], &[1.0; 2], rng)?;
        let qspec = MlpSpec::new(OBS_DIM + ACTION_DIM, &sizes.hidden, 1);
        let q1 = Mlp::new(qspec.clone(), rng)?;
        let q2 = Mlp::new(qspec, rng)?;
        let mixing = if with_mixing {
            let spec = MlpSpec::new(OBS_DIM, &sizes.mixing_hidden, 1)
                .with_output(OutputActivation::Sigmoid);
            let mut m = Mlp::new(spec, rng)?;
            let last = m.final_layer_mut();
            for w in last.weight.data_mut() {
                *w = rng.gen_range(-3e-3..3e-3);
            }
            last.bias.set(0, 0, logit(hyper.lambda0));
            Some(m)
        } else {
            None
        };
        Ok(Self::from_parts(hyper, policy, q1, q2, mixing))
    }

    pub fn from_parts(
        hyper: SacHyper,
        policy: SquashedGaussianPolicy,
        q1: Mlp,
        q2: Mlp,
        mixing: Option<Mlp>,
    ) -> Self {
        let adam = AdamConfig::new(hyper.lr);
        let q_opt = AdamState::new(adam, q1.params().into_iter().chain(q2.params()));
        let pi_opt = AdamState::new(adam, policy.params());
        let mix_opt = mixing.as_ref().map(|m| AdamState::new(adam, m.params()));
        AgentBundle {
            hyper,
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            mixing,
            q_opt,
            pi_opt,
            mix_opt,
        }
    }

    pub fn has_mixing(&self) -> bool {
        self.mixing.is_some()
    }

    /// `Λ_ω(s)` per row; zero when there is no mixing network.
    pub fn lambda(&self, obs: &Matrix) -> Result<Matrix> {
        match &self.mixing {
            Some(m) => m.infer(obs),
            None => Ok(Matrix::zeros(obs.rows(), 1)),
        }
    }

    /// `min(Q1, Q2)` of the online critics.
    pub fn min_q(&self, obs: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let x = Matrix::hstack(&[obs, actions])?;
        let (a, b) = (self.q1.infer(&x)?, self.q2.infer(&x)?);
        Matrix::from_vec(
            a.rows(),
            1,
            a.data()
                .iter()
                .zip(b.data())
                .map(|(p, q)| p.min(*q))
                .collect(),
        )
    }

    /// Bootstrap target
    /// `y = R + γⁿ(1−d)·(min Q_targ(s′, ã′) − α·log π(a′|s′))`, where `ã′` is
    /// the prior draw for rows whose gate falls below `Λ(s′)` and `a′`
    /// otherwise. The entropy term always uses the policy draw `a′`.
    pub fn q_target(&self, batch: &Batch, noise: &UpdateNoise) -> Result<Matrix> {
        let (next_a, next_logp) = self.policy.sample(&batch.next_obs, &noise.next_policy)?;
        let lambda = self.lambda(&batch.next_obs)?;
        let mut boot = next_a.clone();
        for r in 0..batch.len() {
            if noise.gate.get(r, 0) < lambda.get(r, 0) {
                boot.row_mut(r)
                    .copy_from_slice(batch.next_prior_actions.row(r));
            }
        }
        let x = Matrix::hstack(&[&batch.next_obs, &boot])?;
        let (t1, t2) = (self.q1_target.infer(&x)?, self.q2_target.infer(&x)?);
        let alpha = self.hyper.alpha;
        let y = (0..batch.len())
            .map(|r| {
                let v = t1.get(r, 0).min(t2.get(r, 0)) - alpha * next_logp.get(r, 0);
                batch.rewards.get(r, 0) + batch.discount.get(r, 0) * v
            })
            .collect();
        Matrix::from_vec(batch.len(), 1, y)
    }

    /// Mean of the two heads' squared errors against `targets`, with
    /// gradients for `q1` then `q2` (in [`Params`] order).
    pub fn q_loss(&self, batch: &Batch, targets: &Matrix) -> Result<(f64, Vec<Matrix>)> {
        let mut g = Graph::new();
        let (b1, b2) = (self.q1.bind(&mut g), self.q2.bind(&mut g));
        let obs = g.constant_ref(&batch.obs);
        let act = g.constant_ref(&batch.actions);
        let y = g.constant_ref(targets);
        let mut terms = Vec::with_capacity(2);
        for b in [&b1, &b2] {
            let q = critic_forward(&mut g, b, obs, act)?;
            let err = g.sub(q, y)?;
            let sq = g.square(err);
            terms.push(g.mean(sq, Axis::All));
        }
        let total = g.add(terms[0], terms[1])?;
        let loss = g.scale(total, 0.5);
        let value = check_finite("q loss", g.value(loss).item())?;
        g.backward(loss)?;
        let mut grads = b1.grads(&g);
        grads.extend(b2.grads(&g));
        Ok((value, grads))
    }

    /// `−mean[(1 − λ)(min Q(s, a) − α log π(a|s))]` with `a` reparameterized
    /// from `noise` and `λ` treated as a constant. Returns the loss, policy
    /// gradients, the sampled actions and their `min Q`.
    pub fn policy_loss(
        &self,
        obs: &Matrix,
        noise: &Matrix,
        lambda: &Matrix,
    ) -> Result<(f64, Vec<Matrix>, Matrix, Matrix)> {
        let mut g = Graph::new();
        let pnet = self.policy.net().bind(&mut g);
        let (b1, b2) = (self.q1.bind_frozen(&mut g), self.q2.bind_frozen(&mut g));
        let o = g.constant_ref(obs);
        let n = g.constant_ref(noise);
        let s = self.policy.sample_on(&mut g, &pnet, o, n)?;
        let q1 = critic_forward(&mut g, &b1, o, s.action)?;
        let q2 = critic_forward(&mut g, &b2, o, s.action)?;
        let q = g.minimum(q1, q2)?;
        let ent = g.scale(s.log_prob, self.hyper.alpha);
        let obj = g.sub(q, ent)?;
        let w = g.constant(lambda.map(|l| 1.0 - l));
        let weighted = g.mul(obj, w)?;
        let mean = g.mean(weighted, Axis::All);
        let loss = g.neg(mean);
        let value = check_finite("policy loss", g.value(loss).item())?;
        let actions = g.value(s.action).clone();
        let min_q = g.value(q).clone();
        g.backward(loss)?;
        Ok((value, pnet.grads(&g), actions, min_q))
    }

    /// `−mean[Λ(s)·(min Q(s, ā) − min Q(s, a))]` with both Q terms given.
    /// Gradients are with respect to the mixing network, unscaled.
    pub fn mixing_loss(
        &self,
        obs: &Matrix,
        q_prior: &Matrix,
        q_policy: &Matrix,
    ) -> Result<(f64, Vec<Matrix>)> {
        let mixing = self
            .mixing
            .as_ref()
            .ok_or_else(|| Error::Invalid("mixing loss without a mixing network".into()))?;
        let mut g = Graph::new();
        let m = mixing.bind(&mut g);
        let o = g.constant_ref(obs);
        let lam = m.forward(&mut g, o)?;
        let adv = Matrix::from_vec(
            q_prior.rows(),
            1,
            q_prior
                .data()
                .iter()
                .zip(q_policy.data())
                .map(|(a, b)| a - b)
                .collect(),
        )?;
        let adv = g.constant(adv);
        let prod = g.mul(lam, adv)?;
        let mean = g.mean(prod, Axis::All);
        let loss = g.neg(mean);
        let value = check_finite("mixing loss", g.value(loss).item())?;
        g.backward(loss)?;
        Ok((value, m.grads(&g)))
    }

    pub fn step_q(&mut self, grads: &[Matrix]) -> Result<()> {
        let mut params = self.q1.params_mut();
        params.extend(self.q2.params_mut());
        self.q_opt.step(&mut params, grads)
    }

    pub fn step_policy(&mut self, grads: &[Matrix]) -> Result<()> {
        self.pi_opt.step(&mut self.policy.params_mut(), grads)
    }

    /// Scales by `eps_lambda`, then takes an Adam step on the mixing network.
    pub fn step_mixing(&mut self, grads: &[Matrix]) -> Result<()> {
        let eps = self.hyper.eps_lambda;
        let scaled: Vec<Matrix> = grads.iter().map(|g| g.map(|x| x * eps)).collect();
        match (&mut self.mixing, &mut self.mix_opt) {
            (Some(m), Some(opt)) => opt.step(&mut m.params_mut(), &scaled),
            _ => Err(Error::Invalid("no mixing network".into())),
        }
    }

    pub fn update_targets(&mut self) -> Result<()> {
        let rho = self.hyper.polyak;
        polyak_update(&mut self.q1_target.params_mut(), &self.q1.params(), rho)?;
        polyak_update(&mut self.q2_target.params_mut(), &self.q2.params(), rho)
    }

    /// Critic step, actor step against the updated critics, mixing step,
    /// then target averaging.
    pub fn update(&mut self, batch: &Batch, noise: &UpdateNoise) -> Result<UpdateStats> {
        let y = self.q_target(batch, noise)?;
        let (q_loss, q_grads) = self.q_loss(batch, &y)?;
        self.step_q(&q_grads)?;

        let lambda = self.lambda(&batch.obs)?;
        let (policy_loss, pi_grads, _, q_pi) =
            self.policy_loss(&batch.obs, &noise.policy, &lambda)?;
        self.step_policy(&pi_grads)?;

        let mut mixing_loss = 0.0;
        if self.mixing.is_some() {
            let q_prior = self.min_q(&batch.obs, &batch.prior_actions)?;
            let (l, grads) = self.mixing_loss(&batch.obs, &q_prior, &q_pi)?;
            self.step_mixing(&grads)?;
            mixing_loss = l;
        }
        self.update_targets()?;
        Ok(UpdateStats {
            q_loss,
            policy_loss,
            mixing_loss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::check::{max_grad_error, numeric_grad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sizes() -> NetSizes {
        NetSizes {
            hidden: vec![8, 8],
            mixing_hidden: vec![6],
        }
    }

    fn bundle(seed: u64, with_mixing: bool) -> AgentBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AgentBundle::new(SacHyper::default(), &sizes(), with_mixing, &mut rng).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = |rng: &mut ChaCha8Rng, c| crate::rng::uniform(rng, n, c, -1.0, 1.0);
        Batch {
            obs: u(&mut rng, OBS_DIM),
            actions: u(&mut rng, ACTION_DIM),
            rewards: Matrix::from_vec(n, 1, (0..n).map(|i| (i % 2) as f64).collect()).unwrap(),
            discount: Matrix::from_vec(
                n,
                1,
                (0..n)
                    .map(|i| if i % 2 == 1 { 0.0 } else { 0.99 })
                    .collect(),
            )
            .unwrap(),
            next_obs: u(&mut rng, OBS_DIM),
            prior_actions: u(&mut rng, ACTION_DIM),
            next_prior_actions: u(&mut rng, ACTION_DIM),
        }
    }

    fn set_params<P: Params + Clone>(p: &P, values: &[Matrix]) -> P {
        let mut q = p.clone();
        for (dst, src) in q.params_mut().into_iter().zip(values) {
            *dst = src.clone();
        }
        q
    }

    fn owned(p: &impl Params) -> Vec<Matrix> {
        p.params().into_iter().cloned().collect()
    }

    #[test]
    fn mixing_net_starts_near_lambda0() {
        let b = bundle(0, true);
        let obs = batch(20, 1).obs;
        for l in b.lambda(&obs).unwrap().data() {
            assert!((l - 0.95).abs() < 0.01, "{l}");
        }
        assert!(b
            .lambda(&obs)
            .unwrap()
            .data()
            .iter()
            .all(|l| (0.0..=1.0).contains(l)));
        let plain = bundle(0, false);
        assert_eq!(plain.lambda(&obs).unwrap(), Matrix::zeros(20, 1));
        assert_eq!(plain.q1, plain.q1_target);
    }

    #[test]
    fn nonpositive_alpha_is_rejected() {
        let hyper = SacHyper {
            alpha: 0.0,
            ..SacHyper::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AgentBundle::new(hyper, &sizes(), false, &mut rng)
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn terminal_target_is_the_reward() {
        let b = bundle(1, true);
        let mut bt = batch(4, 2);
        bt.rewards = Matrix::filled(4, 1, 1.0);
        bt.discount = Matrix::zeros(4, 1);
        let noise = UpdateNoise::draw(4, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(b.q_target(&bt, &noise).unwrap(), Matrix::filled(4, 1, 1.0));
    }

    /// `min Q_targ(s′, a′) − α log π(a′|s′)`, computed from the parts.
    fn soft_value(b: &AgentBundle, next_obs: &Matrix, boot: &Matrix, noise: &Matrix) -> Vec<f64> {
        let (_, logp) = b.policy.sample(next_obs, noise).unwrap();
        let x = Matrix::hstack(&[next_obs, boot]).unwrap();
        let (t1, t2) = (
            b.q1_target.infer(&x).unwrap(),
            b.q2_target.infer(&x).unwrap(),
        );
        (0..next_obs.rows())
            .map(|r| t1.get(r, 0).min(t2.get(r, 0)) - b.hyper.alpha * logp.get(r, 0))
            .collect()
    }

    #[test]
    fn gate_selects_prior_bootstrap_but_keeps_policy_entropy() {
        let b = bundle(4, true);
        let bt = batch(6, 5);
        let mut noise = UpdateNoise::draw(6, &mut ChaCha8Rng::seed_from_u64(6));
        // Gate below λ ≈ 0.95 on even rows only.
        noise.gate = Matrix::from_vec(
            6,
            1,
            (0..6)
                .map(|i| if i % 2 == 0 { 0.01 } else { 0.999 })
                .collect(),
        )
        .unwrap();
        let y = b.q_target(&bt, &noise).unwrap();
        let (pi_a, _) = b.policy.sample(&bt.next_obs, &noise.next_policy).unwrap();
        let mut boot = pi_a.clone();
        for r in (0..6).step_by(2) {
            boot.row_mut(r)
                .copy_from_slice(bt.next_prior_actions.row(r));
        }
        let v = soft_value(&b, &bt.next_obs, &boot, &noise.next_policy);
        for (r, vr) in v.iter().enumerate() {
            let want = bt.rewards.get(r, 0) + bt.discount.get(r, 0) * vr;
            assert!((y.get(r, 0) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn q_loss_oracles() {
        let b = bundle(7, false);
        let bt = batch(5, 8);
        let x = Matrix::hstack(&[&bt.obs, &bt.actions]).unwrap();
        let (q1, q2) = (b.q1.infer(&x).unwrap(), b.q2.infer(&x).unwrap());
        // Targets equal to head 1: only head 2 contributes.
        let (l, grads) = b.q_loss(&bt, &q1).unwrap();
        let want = 0.5
            * q1.data()
                .iter()
                .zip(q2.data())
                .map(|(a, c)| (a - c).powi(2))
                .sum::<f64>()
            / 5.0;
        assert!((l - want).abs() < 1e-12);
        let n1 = b.q1.params().len();
        assert!(grads[..n1].iter().all(|g| g.max_abs() == 0.0));
        // Constant critics: loss is the mean squared gap.
        let mut c = b.clone();
        for q in [&mut c.q1, &mut c.q2] {
            for m in q.params_mut() {
                m.scale_in_place(0.0);
            }
            q.final_layer_mut().bias.set(0, 0, 0.7);
        }
        let y = Matrix::column_vector(&[0.0, 1.0, 2.0, 0.5, -1.0]);
        let (l, _) = c.q_loss(&bt, &y).unwrap();
        let want = y.data().iter().map(|t| (0.7 - t).powi(2)).sum::<f64>() / 5.0;
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn q_loss_gradient_matches_finite_differences() {
        let b = bundle(9, false);
        let bt = batch(2, 10);
        let y = Matrix::column_vector(&[0.3, -0.8]);
        let (_, grads) = b.q_loss(&bt, &y).unwrap();
        let n1 = b.q1.params().len();
        let mut params = owned(&b.q1);
        params.extend(owned(&b.q2));
        let numeric = numeric_grad(
            |ps| {
                let mut c = b.clone();
                c.q1 = set_params(&b.q1, &ps[..n1]);
                c.q2 = set_params(&b.q2, &ps[n1..]);
                c.q_loss(&bt, &y).unwrap().0
            },
            &params,
            1e-6,
        );
        assert!(max_grad_error(&grads, &numeric) <= 1e-5);
    }

    #[test]
    fn policy_loss_gradient_matches_finite_differences() {
        let b = bundle(11, false);
        let bt = batch(3, 12);
        let noise = crate::rng::standard_normal(&mut ChaCha8Rng::seed_from_u64(13), 3, 2);
        let lambda = Matrix::column_vector(&[0.2, 0.5, 0.9]);
        let (_, grads, _, _) = b.policy_loss(&bt.obs, &noise, &lambda).unwrap();
        assert_eq!(grads.len(), b.policy.params().len());
        let numeric = numeric_grad(
            |ps| {
                let mut c = b.clone();
                c.policy = set_params(&b.policy, ps);
                c.policy_loss(&bt.obs, &noise, &lambda).unwrap().0
            },
            &owned(&b.policy),
            1e-6,
        );
        assert!(max_grad_error(&grads, &numeric) <= 1e-5);
    }

    #[test]
    fn full_lambda_zeroes_the_policy_loss() {
        let b = bundle(14, false);
        let bt = batch(4, 15);
        let noise = crate::rng::standard_normal(&mut ChaCha8Rng::seed_from_u64(16), 4, 2);
        let (l, grads, _, _) = b
            .policy_loss(&bt.obs, &noise, &Matrix::filled(4, 1, 1.0))
            .unwrap();
        assert_eq!(l, 0.0);
        assert!(grads.iter().all(|g| g.max_abs() == 0.0));
    }

    #[test]
    fn mixing_loss_gradient_matches_finite_differences() {
        let b = bundle(17, true);
        let bt = batch(3, 18);
        let qp = Matrix::column_vector(&[1.0, -0.5, 2.0]);
        let qa = Matrix::column_vector(&[0.2, 0.3, -1.0]);
        let (_, grads) = b.mixing_loss(&bt.obs, &qp, &qa).unwrap();
        let m = b.mixing.clone().unwrap();
        let numeric = numeric_grad(
            |ps| {
                let mut c = b.clone();
                c.mixing = Some(set_params(&m, ps));
                c.mixing_loss(&bt.obs, &qp, &qa).unwrap().0
            },
            &owned(&m),
            1e-6,
        );
        assert!(max_grad_error(&grads, &numeric) <= 1e-5);
        // Equal values carry no signal.
        let (_, zero) = b.mixing_loss(&bt.obs, &qa, &qa).unwrap();
        assert!(zero.iter().all(|g| g.max_abs() == 0.0));
    }

    #[test]
    fn each_step_touches_only_its_own_parameters() {
        let b = bundle(19, true);
        let bt = batch(4, 20);
        let noise = UpdateNoise::draw(4, &mut ChaCha8Rng::seed_from_u64(21));
        let lambda = b.lambda(&bt.obs).unwrap();
        let (_, pg, _, q_pi) = b.policy_loss(&bt.obs, &noise.policy, &lambda).unwrap();
        let mut c = b.clone();
        c.step_policy(&pg).unwrap();
        assert_ne!(c.policy.net(), b.policy.net());
        assert_eq!((&c.q1, &c.q2, &c.mixing), (&b.q1, &b.q2, &b.mixing));

        let q_prior = b.min_q(&bt.obs, &bt.prior_actions).unwrap();
        let (_, mg) = b.mixing_loss(&bt.obs, &q_prior, &q_pi).unwrap();
        assert_eq!(mg.len(), b.mixing.as_ref().unwrap().params().len());
        let mut c = b.clone();
        c.step_mixing(&mg).unwrap();
        assert_ne!(c.mixing, b.mixing);
        assert_eq!(
            (c.policy.net(), &c.q1, &c.q2),
            (b.policy.net(), &b.q1, &b.q2)
        );

        let y = b.q_target(&bt, &noise).unwrap();
        let (_, qg) = b.q_loss(&bt, &y).unwrap();
        let mut c = b.clone();
        c.step_q(&qg).unwrap();
        assert_eq!(
            (c.policy.net(), &c.mixing, &c.q1_target),
            (b.policy.net(), &b.mixing, &b.q1_target)
        );
    }

    #[test]
    fn mixing_step_follows_the_advantage_sign() {
        for c in [0.1, 1.0, 10.0] {
            for sign in [1.0, -1.0] {
                let b = bundle(22, true);
                let obs = batch(32, 23).obs;
                let q_policy =
                    crate::rng::uniform(&mut ChaCha8Rng::seed_from_u64(24), 32, 1, -5.0, 5.0);
                let q_prior = q_policy.map(|q| q + sign * c);
                let before = b.lambda(&obs).unwrap();
                let (_, grads) = b.mixing_loss(&obs, &q_prior, &q_policy).unwrap();
                let mut after_b = b.clone();
                after_b.step_mixing(&grads).unwrap();
                let after = after_b.lambda(&obs).unwrap();
                for (x, y) in before.data().iter().zip(after.data()) {
                    assert!(sign * (y - x) > 0.0, "c={c} sign={sign}: {x} -> {y}");
                }
            }
        }
    }

    /// Textbook SAC step: twin-critic regression on a one-step soft target,
    /// then the reparameterized actor step against the updated critics, then
    /// target averaging.
    fn reference_sac_step(
        b: &mut AgentBundle,
        q_opt: &mut AdamState,
        pi_opt: &mut AdamState,
        bt: &Batch,
        noise: &UpdateNoise,
    ) {
        let alpha = b.hyper.alpha;
        let (a2, logp2) = b.policy.sample(&bt.next_obs, &noise.next_policy).unwrap();
        let x2 = Matrix::hstack(&[&bt.next_obs, &a2]).unwrap();
        let (t1, t2) = (
            b.q1_target.infer(&x2).unwrap(),
            b.q2_target.infer(&x2).unwrap(),
        );
        let y: Vec<f64> = (0..bt.len())
            .map(|r| {
                bt.rewards.get(r, 0)
                    + bt.discount.get(r, 0)
                        * (t1.get(r, 0).min(t2.get(r, 0)) - alpha * logp2.get(r, 0))
            })
            .collect();
        let y = Matrix::column_vector(&y);

        let grads = {
            let mut g = Graph::new();
            let x = g.constant(Matrix::hstack(&[&bt.obs, &bt.actions]).unwrap());
            let yt = g.constant(y);
            let (b1, b2) = (b.q1.bind(&mut g), b.q2.bind(&mut g));
            let q1 = b1.forward(&mut g, x).unwrap();
            let q2 = b2.forward(&mut g, x).unwrap();
            let e1 = g.sub(q1, yt).unwrap();
            let e2 = g.sub(q2, yt).unwrap();
            let s1 = g.square(e1);
            let s2 = g.square(e2);
            let m1 = g.mean(s1, Axis::All);
            let m2 = g.mean(s2, Axis::All);
            let m1 = g.scale(m1, 0.5);
            let m2 = g.scale(m2, 0.5);
            let loss = g.add(m1, m2).unwrap();
            g.backward(loss).unwrap();
            let mut out = b1.grads(&g);
            out.extend(b2.grads(&g));
            out
        };
        let mut ps = b.q1.params_mut();
        ps.extend(b.q2.params_mut());
        q_opt.step(&mut ps, &grads).unwrap();

        let grads = {
            let mut g = Graph::new();
            let net = b.policy.net().bind(&mut g);
            let o = g.constant(bt.obs.clone());
            let n = g.constant(noise.policy.clone());
            let s = b.policy.sample_on(&mut g, &net, o, n).unwrap();
            let (f1, f2) = (b.q1.bind_frozen(&mut g), b.q2.bind_frozen(&mut g));
            let x = g.concat_cols(&[o, s.action]).unwrap();
            let q1 = f1.forward(&mut g, x).unwrap();
            let q2 = f2.forward(&mut g, x).unwrap();
            let q = g.minimum(q1, q2).unwrap();
            let ent = g.scale(s.log_prob, alpha);
            let obj = g.sub(ent, q).unwrap();
            let loss = g.mean(obj, Axis::All);
            g.backward(loss).unwrap();
            net.grads(&g)
        };
        pi_opt.step(&mut b.policy.params_mut(), &grads).unwrap();
        let rho = b.hyper.polyak;
        polyak_update(&mut b.q1_target.params_mut(), &b.q1.params(), rho).unwrap();
        polyak_update(&mut b.q2_target.params_mut(), &b.q2.params(), rho).unwrap();
    }

    #[test]
    fn zero_mixing_weight_reduces_to_vanilla_sac() {
        let mut t = bundle(25, true);
        t.mixing
            .as_mut()
            .unwrap()
            .final_layer_mut()
            .bias
            .set(0, 0, -1e4);
        let mut r = t.clone();
        r.mixing = None;
        let adam = AdamConfig::new(r.hyper.lr);
        let mut q_opt = AdamState::new(adam, r.q1.params().into_iter().chain(r.q2.params()));
        let mut pi_opt = AdamState::new(adam, r.policy.params());
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for step in 0..3 {
            let bt = batch(16, 27 + step);
            let noise = UpdateNoise::draw(16, &mut rng);
            assert!(t.lambda(&bt.obs).unwrap().data().iter().all(|&l| l == 0.0));
            t.update(&bt, &noise).unwrap();
            reference_sac_step(&mut r, &mut q_opt, &mut pi_opt, &bt, &noise);
            let pairs = [
                (owned(&t.policy), owned(&r.policy)),
                (owned(&t.q1), owned(&r.q1)),
                (owned(&t.q2), owned(&r.q2)),
                (owned(&t.q1_target), owned(&r.q1_target)),
                (owned(&t.q2_target), owned(&r.q2_target)),
            ];
            for (a, b) in pairs {
                for (x, y) in a.iter().zip(&b) {
                    assert!(x.max_abs_diff(y) <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn non_finite_batch_aborts() {
        let mut b = bundle(28, true);
        let mut bt = batch(4, 29);
        bt.rewards.set(0, 0, f64::NAN);
        let noise = UpdateNoise::draw(4, &mut ChaCha8Rng::seed_from_u64(30));
        let before = b.clone();
        assert!(matches!(b.update(&bt, &noise), Err(Error::NonFinite(_))));
        assert_eq!(b.q1, before.q1);
    }
}
