//! Latent imagination and the actor-critic learner shared by the explorer
//! and the achiever.
//!
//! Policies act on model features (optionally concatenated with a goal
//! embedding) and roll forward through the world model's prior. Rewards
//! come from a caller-supplied function over the imagined trajectory. The
//! actor maximizes λ-returns by backpropagating through the frozen dynamics;
//! the critic regresses detached λ-returns computed with a target copy.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{
    gaussian_entropy, gaussian_sample, Activation, Adam, AdamOutcome, Binding, Mlp, ParamSet, Real,
    Tape, Tensor, Var,
};
use crate::worldmodel::{LatentVars, ModelState, RssmNet, WorldModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImaginationConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_coef: f64,
    pub target_interval: u64,
    pub hidden: usize,
    pub min_std: f64,
    pub max_std: f64,
    pub clip_norm: f64,
}

impl Default for ImaginationConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            gamma: 0.99,
            lambda: 0.95,
            actor_lr: 8e-5,
            critic_lr: 8e-5,
            entropy_coef: 1e-4,
            target_interval: 100,
            hidden: 128,
            min_std: 0.01,
            max_std: 1.0,
            clip_norm: 100.0,
        }
    }
}

impl ImaginationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(Error::Config {
                field,
                reason: reason.into(),
            })
        };
        if self.horizon == 0 {
            return bad("imagination.horizon", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("imagination.gamma", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("imagination.lambda", "must lie in [0, 1]");
        }
        if !(self.min_std > 0.0 && self.min_std < self.max_std) {
            return bad("imagination.min_std", "need 0 < min_std < max_std");
        }
        if self.target_interval == 0 {
            return bad("imagination.target_interval", "must be at least 1");
        }
        Ok(())
    }
}

/// λ-returns by backward recursion.
///
/// `rewards` is `[H, S]`, `values` is `[H + 1, S]`; the result is `[H, S]`
/// with `R_t = r_t + γ((1 − λ)·v_{t+1} + λ·R_{t+1})` and `R_H = v_H`.
pub fn lambda_return<T: Real>(
    rewards: &Tensor<T>,
    values: &Tensor<T>,
    gamma: f64,
    lambda: f64,
) -> Result<Tensor<T>> {
    let (rs, vs) = (rewards.shape(), values.shape());
    if rs.len() != 2 || vs.len() != 2 || vs[0] != rs[0] + 1 || vs[1] != rs[1] {
        return Err(Error::ShapeMismatch {
            op: "lambda_return",
            lhs: rs.to_vec(),
            rhs: vs.to_vec(),
        });
    }
    let (h, s) = (rs[0], rs[1]);
    let (g, l) = (T::from_f64(gamma), T::from_f64(lambda));
    let (r, v) = (rewards.data(), values.data());
    let mut out = alloc::vec![T::zero(); h * s];
    for j in 0..s {
        let mut next = v[h * s + j];
        for t in (0..h).rev() {
            let bootstrap = (T::one() - l) * v[(t + 1) * s + j] + l * next;
            next = r[t * s + j] + g * bootstrap;
            out[t * s + j] = next;
        }
    }
    Tensor::new(&[h, s], out)
}

/// [`lambda_return`] recorded on a tape over time-major stacks:
/// `rewards` is `[H·S, 1]`, `values` is `[(H + 1)·S, 1]`.
pub fn lambda_return_graph<T: Real>(
    tape: &mut Tape<T>,
    rewards: Var,
    values: Var,
    horizon: usize,
    gamma: f64,
    lambda: f64,
) -> Result<Var> {
    let rows = tape.shape(rewards)[0];
    if rows % horizon != 0 || tape.shape(values)[0] != rows + rows / horizon {
        return Err(Error::ShapeMismatch {
            op: "lambda_return",
            lhs: tape.shape(rewards).to_vec(),
            rhs: tape.shape(values).to_vec(),
        });
    }
    let s = rows / horizon;
    let mut next = tape.slice(values, 0, horizon * s, s)?;
    let mut out = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let v_next = tape.slice(values, 0, (t + 1) * s, s)?;
        let a = tape.mul_scalar(v_next, T::from_f64(1.0 - lambda));
        let b = tape.mul_scalar(next, T::from_f64(lambda));
        let mix = tape.add(a, b)?;
        let disc = tape.mul_scalar(mix, T::from_f64(gamma));
        let r = tape.slice(rewards, 0, t * s, s)?;
        next = tape.add(r, disc)?;
        out.push(next);
    }
    out.reverse();
    tape.concat(&out, 0)
}

/// Tanh-squashed diagonal Gaussian policy.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    net: Mlp,
    action_dim: usize,
    min_std: f64,
    max_std: f64,
}

impl PolicyHead {
    pub fn new<R: Rng + ?Sized>(
        set: &mut ParamSet,
        inputs: usize,
        action_dim: usize,
        cfg: &ImaginationConfig,
        rng: &mut R,
    ) -> Self {
        let net = Mlp::new(
            set,
            "policy",
            &[inputs, cfg.hidden, cfg.hidden, 2 * action_dim],
            Activation::Elu,
            rng,
        );
        Self {
            net,
            action_dim,
            min_std: cfg.min_std,
            max_std: cfg.max_std,
        }
    }

    pub fn inputs(&self) -> usize {
        self.net.inputs()
    }

    /// Pre-squash mean and standard deviation in `[min_std, max_std]`.
    pub fn distribution<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<(Var, Var)> {
        let out = self.net.forward(tape, p, x)?;
        let mean = tape.slice(out, 1, 0, self.action_dim)?;
        let raw = tape.slice(out, 1, self.action_dim, self.action_dim)?;
        let gate = tape.sigmoid(raw);
        let scaled = tape.mul_scalar(gate, T::from_f64(self.max_std - self.min_std));
        let std = tape.add_scalar(scaled, T::from_f64(self.min_std));
        Ok((mean, std))
    }

    /// Reparameterized action and the pre-squash entropy per row.
    pub fn sample<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        x: Var,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let (mean, std) = self.distribution(tape, p, x)?;
        let raw = gaussian_sample(tape, mean, std, rng)?;
        let entropy = gaussian_entropy(tape, std)?;
        Ok((tape.tanh(raw), entropy))
    }

    pub fn mode<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let (mean, _) = self.distribution(tape, p, x)?;
        Ok(tape.tanh(mean))
    }
}

/// Scalar state-value network.
#[derive(Debug, Clone)]
pub struct ValueHead {
    net: Mlp,
}

impl ValueHead {
    pub fn new<R: Rng + ?Sized>(set: &mut ParamSet, inputs: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(set, "value", &[inputs, hidden, hidden, 1], Activation::Elu, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        self.net.forward(tape, p, x)
    }
}

/// An imagined trajectory recorded on a tape. Stacks are time-major: row
/// `t·S + i` belongs to start `i` at step `t`.
#[derive(Debug, Clone)]
pub struct ImaginedRollout {
    pub horizon: usize,
    pub batch: usize,
    /// `H + 1` states; the first is the detached start.
    pub states: Vec<LatentVars>,
    /// `[(H + 1)·S, feature_dim]`.
    pub features: Var,
    /// `[H·S, action_dim]`; action `t` leads from state `t` to `t + 1`.
    pub actions: Var,
    /// `[H·S]` pre-squash policy entropy.
    pub entropy: Var,
    /// `[S, goal_dim]` when goal-conditioned.
    pub goal: Option<Var>,
}

/// Detached copy of a rollout for consumers outside the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutData {
    pub horizon: usize,
    pub batch: usize,
    /// One entry per step `0..=H`, each with `S` rows.
    pub states: Vec<ModelState>,
    /// Policy and value inputs, `[(H + 1)·S, feature_dim + goal_dim]`.
    pub inputs: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub values: Tensor,
    pub lambda_returns: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorCriticMetrics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub reward_mean: f64,
    pub return_mean: f64,
    pub entropy: f64,
    pub actor_skipped: bool,
    pub critic_skipped: bool,
}

/// Policy, value function, target value copy and their optimizers.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    cfg: ImaginationConfig,
    policy: PolicyHead,
    value: ValueHead,
    feature_dim: usize,
    goal_dim: usize,
    actor: ParamSet,
    critic: ParamSet,
    target: ParamSet,
    actor_opt: Adam,
    critic_opt: Adam,
    critic_steps: u64,
}

impl ActorCritic {
    /// Parameters land under `<prefix>actor/`, `<prefix>critic/` and
    /// `<prefix>target/`.
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        feature_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        cfg: &ImaginationConfig,
        rng: &mut R,
    ) -> Self {
        let inputs = feature_dim + goal_dim;
        let mut actor = ParamSet::new(&format!("{prefix}actor/"));
        let policy = PolicyHead::new(&mut actor, inputs, action_dim, cfg, rng);
        let mut critic = ParamSet::new(&format!("{prefix}critic/"));
        let value = ValueHead::new(&mut critic, inputs, cfg.hidden, rng);
        let target = critic.renamed(&format!("{prefix}target/"));
        let opt = |lr| {
            let mut o = Adam::new(lr);
            o.clip_norm = Some(cfg.clip_norm);
            o
        };
        Self {
            cfg: cfg.clone(),
            policy,
            value,
            feature_dim,
            goal_dim,
            actor,
            critic,
            target,
            actor_opt: opt(cfg.actor_lr),
            critic_opt: opt(cfg.critic_lr),
            critic_steps: 0,
        }
    }

    pub fn config(&self) -> &ImaginationConfig {
        &self.cfg
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    pub fn actor_params(&self) -> &ParamSet {
        &self.actor
    }

    pub fn critic_params(&self) -> &ParamSet {
        &self.critic
    }

    pub fn target_params(&self) -> &ParamSet {
        &self.target
    }

    pub fn param_sets_mut(&mut self) -> [&mut ParamSet; 3] {
        [&mut self.actor, &mut self.critic, &mut self.target]
    }

    pub fn param_sets(&self) -> [&ParamSet; 3] {
        [&self.actor, &self.critic, &self.target]
    }

    pub fn critic_steps(&self) -> u64 {
        self.critic_steps
    }

    pub fn set_critic_steps(&mut self, steps: u64) {
        self.critic_steps = steps;
    }

    fn check_goal(&self, rows: usize, goal: Option<&Tensor>) -> Result<()> {
        match goal {
            None if self.goal_dim == 0 => Ok(()),
            Some(g) if g.shape() == [rows, self.goal_dim] => Ok(()),
            other => Err(Error::ShapeMismatch {
                op: "goal input",
                lhs: alloc::vec![rows, self.goal_dim],
                rhs: other.map(|g| g.shape().to_vec()).unwrap_or_default(),
            }),
        }
    }

    fn head_input(tape: &mut Tape<f32>, features: Var, goal: Option<Var>) -> Result<Var> {
        match goal {
            Some(g) => tape.concat(&[features, g], 1),
            None => Ok(features),
        }
    }

    /// Action for real-environment execution: sampled when `rng` is given,
    /// otherwise the squashed mean.
    pub fn act<R: Rng + ?Sized>(
        &self,
        features: &Tensor,
        goal: Option<&Tensor>,
        rng: Option<&mut R>,
    ) -> Result<Tensor> {
        self.check_goal(features.shape()[0], goal)?;
        let mut tape = Tape::new();
        let p = self.actor.bind(&mut tape, false);
        let f = tape.input(features);
        let g = goal.map(|g| tape.input(g));
        let x = Self::head_input(&mut tape, f, g)?;
        let a = match rng {
            Some(rng) => self.policy.sample(&mut tape, &p, x, rng)?.0,
            None => self.policy.mode(&mut tape, &p, x)?,
        };
        Ok(tape.tensor(a))
    }

    /// Online value estimate per row.
    pub fn value(&self, features: &Tensor, goal: Option<&Tensor>) -> Result<Tensor> {
        self.check_goal(features.shape()[0], goal)?;
        let mut tape = Tape::new();
        let p = self.critic.bind(&mut tape, false);
        let f = tape.input(features);
        let g = goal.map(|g| tape.input(g));
        let x = Self::head_input(&mut tape, f, g)?;
        let v = self.value.forward(&mut tape, &p, x)?;
        Ok(tape.tensor(v))
    }

    /// Records an `H`-step rollout of the policy through the prior.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f32>,
        wm: &RssmNet,
        wm_params: &Binding,
        actor_params: &Binding,
        starts: &ModelState,
        goal: Option<&Tensor>,
        horizon: usize,
        rng: &mut R,
    ) -> Result<ImaginedRollout> {
        if horizon == 0 {
            return Err(Error::Config {
                field: "imagination.horizon",
                reason: "must be at least 1".into(),
            });
        }
        let batch = starts.batch();
        self.check_goal(batch, goal)?;
        if starts.features().shape()[1] != self.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "rollout",
                lhs: alloc::vec![batch, self.feature_dim],
                rhs: starts.features().shape().to_vec(),
            });
        }
        let goal = goal.map(|g| tape.input(g));
        let mut state = starts.record(tape);
        let mut states = Vec::with_capacity(horizon + 1);
        let mut feats = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut entropies = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let f = RssmNet::features(tape, &state)?;
            let x = Self::head_input(tape, f, goal)?;
            let (a, ent) = self.policy.sample(tape, actor_params, x, rng)?;
            states.push(state);
            feats.push(f);
            actions.push(a);
            entropies.push(ent);
            state = wm.prior_step(tape, wm_params, &state, a, Some(&mut *rng))?;
        }
        feats.push(RssmNet::features(tape, &state)?);
        states.push(state);
        Ok(ImaginedRollout {
            horizon,
            batch,
            states,
            features: tape.concat(&feats, 0)?,
            actions: tape.concat(&actions, 0)?,
            entropy: tape.concat(&entropies, 0)?,
            goal,
        })
    }

    /// Detached rollout without any learning, for inspection and tests.
    pub fn imagine<R: Rng + ?Sized>(
        &self,
        wm: &WorldModel,
        starts: &ModelState,
        goal: Option<&Tensor>,
        rng: &mut R,
    ) -> Result<RolloutData> {
        let mut tape = Tape::new();
        let wp = wm.params().bind(&mut tape, false);
        let ap = self.actor.bind(&mut tape, false);
        let r = self.rollout(&mut tape, wm.net(), &wp, &ap, starts, goal, self.cfg.horizon, rng)?;
        let (h, s) = (r.horizon, r.batch);
        Ok(RolloutData {
            horizon: h,
            batch: s,
            states: r.states.iter().map(|v| ModelState::read(&tape, v)).collect(),
            inputs: Tensor::zeros(&[0, self.feature_dim + self.goal_dim]),
            actions: tape.tensor(r.actions),
            rewards: Tensor::zeros(&[h * s, 1]),
            values: Tensor::zeros(&[(h + 1) * s, 1]),
            lambda_returns: Tensor::zeros(&[h * s, 1]),
        })
    }

    /// Rolls out from `starts`, takes one actor step on `−mean(λ-return) −
    /// entropy bonus` and one critic step toward the detached returns.
    ///
    /// `reward_fn` must return a `[H·S, 1]` (or `[H·S]`) stack of rewards,
    /// one per transition, built on the same tape so the actor gradient
    /// passes through it.
    pub fn update<R, F>(
        &mut self,
        wm: &WorldModel,
        starts: &ModelState,
        goal: Option<&Tensor>,
        rng: &mut R,
        reward_fn: F,
    ) -> Result<(ActorCriticMetrics, RolloutData)>
    where
        R: Rng + ?Sized,
        F: FnMut(&mut Tape<f32>, &ImaginedRollout) -> Result<Var>,
    {
        let (mut metrics, data) = self.actor_step(wm, starts, goal, rng, reward_fn)?;
        let rows = data.horizon * data.batch;
        let (loss, skipped) = self.critic_step(&data.inputs.rows(0, rows)?, &data.lambda_returns)?;
        metrics.critic_loss = loss;
        metrics.critic_skipped = skipped;
        Ok((metrics, data))
    }

    /// The actor half of [`ActorCritic::update`]. Values come from the
    /// frozen target copy, so no gradient reaches either value network.
    pub fn actor_step<R, F>(
        &mut self,
        wm: &WorldModel,
        starts: &ModelState,
        goal: Option<&Tensor>,
        rng: &mut R,
        mut reward_fn: F,
    ) -> Result<(ActorCriticMetrics, RolloutData)>
    where
        R: Rng + ?Sized,
        F: FnMut(&mut Tape<f32>, &ImaginedRollout) -> Result<Var>,
    {
        let (h, s) = (self.cfg.horizon, starts.batch());
        let mut tape = Tape::new();
        let wp = wm.params().bind(&mut tape, false);
        let ap = self.actor.bind(&mut tape, true);
        let tp = self.target.bind(&mut tape, false);
        let rollout = self.rollout(&mut tape, wm.net(), &wp, &ap, starts, goal, h, rng)?;

        let rewards = reward_fn(&mut tape, &rollout)?;
        let rewards = if tape.shape(rewards) == [h * s] {
            tape.reshape(rewards, &[h * s, 1])?
        } else {
            rewards
        };
        if tape.shape(rewards) != [h * s, 1] {
            return Err(Error::ShapeMismatch {
                op: "reward_fn",
                lhs: alloc::vec![h * s, 1],
                rhs: tape.shape(rewards).to_vec(),
            });
        }
        let value_in = match rollout.goal {
            Some(g) => {
                let tiled = tape.concat(&alloc::vec![g; h + 1], 0)?;
                tape.concat(&[rollout.features, tiled], 1)?
            }
            None => rollout.features,
        };
        let values = self.value.forward(&mut tape, &tp, value_in)?;
        let returns = lambda_return_graph(&mut tape, rewards, values, h, self.cfg.gamma, self.cfg.lambda)?;
        let mean_return = tape.mean(returns);
        let mean_entropy = tape.mean(rollout.entropy);
        let bonus = tape.mul_scalar(mean_entropy, self.cfg.entropy_coef as f32);
        let neg = tape.neg(mean_return);
        let actor_loss = tape.sub(neg, bonus)?;

        let data = RolloutData {
            horizon: h,
            batch: s,
            states: rollout.states.iter().map(|v| ModelState::read(&tape, v)).collect(),
            inputs: tape.tensor(value_in),
            actions: tape.tensor(rollout.actions),
            rewards: tape.tensor(rewards),
            values: tape.tensor(values),
            lambda_returns: tape.tensor(returns),
        };
        let mut metrics = ActorCriticMetrics {
            actor_loss: tape.item(actor_loss) as f64,
            reward_mean: mean_of(data.rewards.data()),
            return_mean: tape.item(mean_return) as f64,
            entropy: tape.item(mean_entropy) as f64,
            ..ActorCriticMetrics::default()
        };

        metrics.actor_skipped = if metrics.actor_loss.is_finite() {
            let grads = tape.backward(actor_loss)?;
            self.actor.accumulate(&grads, &ap);
            matches!(self.actor_opt.step(&mut self.actor), AdamOutcome::Skipped)
        } else {
            log::warn!("{}: actor loss is not finite; skipping", self.actor.prefix());
            true
        };
        Ok((metrics, data))
    }

    /// One regression step of the online value toward fixed `targets`.
    /// Refreshes the target copy every `target_interval` steps.
    pub fn critic_step(&mut self, inputs: &Tensor, targets: &Tensor) -> Result<(f64, bool)> {
        let mut tape = Tape::new();
        let cp = self.critic.bind(&mut tape, true);
        let x = tape.input(inputs);
        let y = tape.input(targets);
        let v = self.value.forward(&mut tape, &cp, x)?;
        let err = tape.sub(v, y)?;
        let sq = tape.square(err);
        let loss = tape.mean(sq);
        let value = tape.item(loss) as f64;
        let skipped = if value.is_finite() {
            let grads = tape.backward(loss)?;
            self.critic.accumulate(&grads, &cp);
            matches!(self.critic_opt.step(&mut self.critic), AdamOutcome::Skipped)
        } else {
            log::warn!("{}: critic loss is not finite; skipping", self.critic.prefix());
            true
        };
        if !skipped {
            self.critic_steps += 1;
            if self.critic_steps % self.cfg.target_interval == 0 {
                self.target.copy_values_from(&self.critic)?;
            }
        }
        Ok((value, skipped))
    }
}

fn mean_of(v: &[f32]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64
    }
}
