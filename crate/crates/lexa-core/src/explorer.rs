//! Disagreement-driven explorer.
//!
//! An ensemble of one-step predictors maps `(features(s_t), a_t)` to the
//! next stochastic latent. Where the heads disagree the model has seen little
//! data, so the population variance across heads, averaged over output
//! dimensions, serves as the explorer's imagined reward.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagination::{ActorCritic, ActorCriticMetrics, ImaginationConfig};
use crate::ndgrad::{Activation, Adam, AdamOutcome, Mlp, ParamSet, Real, Tape, Tensor, Var};
use crate::worldmodel::{ModelState, SequenceBatch, WorldModel, WorldModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub heads: usize,
    pub hidden: usize,
    pub lr: f64,
    pub clip_norm: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            heads: 8,
            hidden: 200,
            lr: 3e-4,
            clip_norm: 100.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Head {
    net: Mlp,
    params: ParamSet,
    opt: Adam,
}

/// `K` independently initialized and optimized prediction heads.
#[derive(Debug, Clone)]
pub struct Ensemble {
    heads: Vec<Head>,
    inputs: usize,
    outputs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnsembleMetrics {
    /// Mean over heads of each head's MSE.
    pub loss: f64,
    pub skipped_heads: usize,
}

impl Ensemble {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, cfg: &EnsembleConfig, rng: &mut R) -> Self {
        let heads = (0..cfg.heads)
            .map(|k| {
                let mut params = ParamSet::new(&format!("ens/k{k}/"));
                let net = Mlp::new(
                    &mut params,
                    "mlp",
                    &[inputs, cfg.hidden, cfg.hidden, outputs],
                    Activation::Elu,
                    rng,
                );
                let mut opt = Adam::new(cfg.lr);
                opt.clip_norm = Some(cfg.clip_norm);
                Head { net, params, opt }
            })
            .collect();
        Self {
            heads,
            inputs,
            outputs,
        }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn param_sets(&self) -> impl Iterator<Item = &ParamSet> {
        self.heads.iter().map(|h| &h.params)
    }

    pub fn param_sets_mut(&mut self) -> impl Iterator<Item = &mut ParamSet> {
        self.heads.iter_mut().map(|h| &mut h.params)
    }

    fn check_inputs(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.inputs {
            return Err(Error::ShapeMismatch {
                op: "ensemble input",
                lhs: alloc::vec![0, self.inputs],
                rhs: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Each head's prediction for `[N, inputs]`, with frozen parameters.
    pub fn predictions(&self, tape: &mut Tape<f32>, x: Var) -> Result<Vec<Var>> {
        self.check_inputs(tape.shape(x))?;
        self.heads
            .iter()
            .map(|h| {
                let p = h.params.bind(tape, false);
                h.net.forward(tape, &p, x)
            })
            .collect()
    }

    /// Disagreement reward `[N, 1]` recorded on the tape, so gradients reach
    /// the inputs but never the heads.
    pub fn reward_graph(&self, tape: &mut Tape<f32>, x: Var) -> Result<Var> {
        let preds = self.predictions(tape, x)?;
        disagreement_graph(tape, &preds)
    }

    pub fn reward(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(inputs);
        let r = self.reward_graph(&mut tape, x)?;
        Ok(tape.tensor(r))
    }

    /// One Adam step per head on the MSE to `targets`.
    pub fn train(&mut self, inputs: &Tensor, targets: &Tensor) -> Result<EnsembleMetrics> {
        self.check_inputs(inputs.shape())?;
        if targets.shape() != [inputs.shape()[0], self.outputs] {
            return Err(Error::ShapeMismatch {
                op: "ensemble target",
                lhs: alloc::vec![inputs.shape()[0], self.outputs],
                rhs: targets.shape().to_vec(),
            });
        }
        let mut metrics = EnsembleMetrics::default();
        let count = self.heads.len() as f64;
        for (k, head) in self.heads.iter_mut().enumerate() {
            let mut tape = Tape::new();
            let p = head.params.bind(&mut tape, true);
            let x = tape.input(inputs);
            let y = tape.input(targets);
            let pred = head.net.forward(&mut tape, &p, x)?;
            let err = tape.sub(pred, y)?;
            let sq = tape.square(err);
            let loss = tape.mean(sq);
            let value = f64::from(tape.item(loss));
            metrics.loss += value / count;
            let skipped = if value.is_finite() {
                let grads = tape.backward(loss)?;
                head.params.accumulate(&grads, &p);
                matches!(head.opt.step(&mut head.params), AdamOutcome::Skipped)
            } else {
                log::warn!("ensemble head {k}: loss is not finite; skipping");
                true
            };
            metrics.skipped_heads += usize::from(skipped);
        }
        Ok(metrics)
    }
}

/// Population variance across predictions, averaged over the last axis.
/// Each prediction is `[N, D]`; the result is `[N, 1]`.
pub fn disagreement_graph<T: Real>(tape: &mut Tape<T>, preds: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = preds.split_first() else {
        return Err(Error::Invalid("disagreement needs at least one prediction".into()));
    };
    // Centre on the first prediction before averaging, so identical heads
    // give a mean that equals them bit for bit.
    let k = T::from_f64(preds.len() as f64);
    let mut offset_sum = None;
    for &p in rest {
        let d = tape.sub(p, first)?;
        offset_sum = Some(match offset_sum {
            Some(acc) => tape.add(acc, d)?,
            None => d,
        });
    }
    let mean = match offset_sum {
        Some(s) => {
            let shift = tape.mul_scalar(s, T::one() / k);
            tape.add(first, shift)?
        }
        None => first,
    };
    let mut sq_sum = None;
    for &p in preds {
        let d = tape.sub(p, mean)?;
        let sq = tape.square(d);
        sq_sum = Some(match sq_sum {
            Some(acc) => tape.add(acc, sq)?,
            None => sq,
        });
    }
    let var = tape.mul_scalar(sq_sum.expect("nonempty"), T::one() / k);
    let per_row = tape.mean_axis(var, 1)?;
    let n = tape.shape(per_row)[0];
    tape.reshape(per_row, &[n, 1])
}

/// Inputs `(features(s_t), a_t)` and targets `z_{t+1}` for every consecutive
/// pair of posterior states. `states` holds `len·batch` rows ordered
/// time-major; `batch.actions[t]` is the action that led to frame `t`.
pub fn transitions(states: &ModelState, batch: &SequenceBatch) -> Result<(Tensor, Tensor)> {
    let (b, len, a) = (batch.batch, batch.len, batch.action_dim);
    if states.batch() != b * len {
        return Err(Error::ShapeMismatch {
            op: "transitions",
            lhs: alloc::vec![b * len],
            rhs: alloc::vec![states.batch()],
        });
    }
    let feats = states.features();
    let f = feats.shape()[1];
    let dz = states.z.shape()[1];
    let rows = b * len.saturating_sub(1);
    let mut inputs = Vec::with_capacity(rows * (f + a));
    let mut targets = Vec::with_capacity(rows * dz);
    for t in 0..len.saturating_sub(1) {
        for i in 0..b {
            let now = t * b + i;
            let next = (t + 1) * b + i;
            inputs.extend_from_slice(&feats.data()[now * f..(now + 1) * f]);
            let act = (i * len + t + 1) * a;
            inputs.extend_from_slice(&batch.actions[act..act + a]);
            targets.extend_from_slice(&states.z.data()[next * dz..(next + 1) * dz]);
        }
    }
    Ok((Tensor::new(&[rows, f + a], inputs)?, Tensor::new(&[rows, dz], targets)?))
}

/// Ensemble plus the exploration policy and value.
#[derive(Debug, Clone)]
pub struct Explorer {
    pub ensemble: Ensemble,
    pub actor_critic: ActorCritic,
}

impl Explorer {
    pub fn new<R: Rng + ?Sized>(
        wm: &WorldModelConfig,
        ensemble: &EnsembleConfig,
        imagination: &ImaginationConfig,
        rng: &mut R,
    ) -> Self {
        let f = wm.feature_dim();
        Self {
            ensemble: Ensemble::new(f + wm.action_dim, wm.stoch_dim, ensemble, rng),
            actor_critic: ActorCritic::new("expl/", f, 0, wm.action_dim, imagination, rng),
        }
    }

    pub fn train_ensemble(&mut self, states: &ModelState, batch: &SequenceBatch) -> Result<EnsembleMetrics> {
        let (inputs, targets) = transitions(states, batch)?;
        self.ensemble.train(&inputs, &targets)
    }

    /// One imagination update of the explorer from detached `starts`,
    /// rewarding each imagined `(s_t, a_t)` by ensemble disagreement.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        wm: &WorldModel,
        starts: &ModelState,
        rng: &mut R,
    ) -> Result<ActorCriticMetrics> {
        let ensemble = &self.ensemble;
        let (metrics, _) = self.actor_critic.update(wm, starts, None, rng, |tape, r| {
            let rows = r.horizon * r.batch;
            let feats = tape.slice(r.features, 0, 0, rows)?;
            let x = tape.concat(&[feats, r.actions], 1)?;
            ensemble.reward_graph(tape, x)
        })?;
        Ok(metrics)
    }

    /// Exploration action for real episodes (sampled when `rng` is given).
    pub fn act<R: Rng + ?Sized>(&self, features: &Tensor, rng: Option<&mut R>) -> Result<Tensor> {
        self.actor_critic.act(features, None, rng)
    }
}
