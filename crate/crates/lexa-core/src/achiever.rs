//! Goal-image achiever: goal-conditioned policy and value, the latent cosine
//! and learned temporal-distance rewards, and the embedding predictor.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagination::{ActorCritic, ActorCriticMetrics, ImaginationConfig, ImaginedRollout, RolloutData};
use crate::ndgrad::{Activation, Adam, AdamOutcome, Binding, Mlp, ParamSet, Tape, Tensor, Var};
use crate::worldmodel::{ModelState, WorldModel, WorldModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Cosine,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AchieverConfig {
    pub reward: RewardMode,
    /// Fraction of distance pairs replaced by cross-trajectory negatives.
    pub neg_prob: f64,
    /// Distance pairs drawn per imagined trajectory.
    pub anchors: usize,
    pub distance_hidden: usize,
    pub distance_lr: f64,
    pub predictor_hidden: usize,
    /// Train the distance network even when the cosine reward drives the
    /// policy.
    pub train_distance: bool,
    pub clip_norm: f64,
}

impl Default for AchieverConfig {
    fn default() -> Self {
        Self {
            reward: RewardMode::Cosine,
            neg_prob: 0.1,
            anchors: 4,
            distance_hidden: 200,
            distance_lr: 3e-4,
            predictor_hidden: 200,
            train_distance: false,
            clip_norm: 100.0,
        }
    }
}

impl AchieverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.neg_prob) {
            return Err(Error::Config {
                field: "achiever.neg_prob",
                reason: "must lie in [0, 1]".into(),
            });
        }
        if self.anchors == 0 {
            return Err(Error::Config {
                field: "achiever.anchors",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn trains_distance(&self) -> bool {
        self.reward == RewardMode::Temporal || self.train_distance
    }
}

/// A goal image with its embedding and inferred latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalContext {
    pub image: Vec<f32>,
    /// `[1, embed_dim]`.
    pub embedding: Tensor,
    pub state: ModelState,
}

/// One posterior step from the zero state with a zero action, taking `z` at
/// its mean. `embeddings` is `[N, embed_dim]`.
pub fn infer_goal_state(wm: &WorldModel, embeddings: &Tensor) -> Result<ModelState> {
    let n = embeddings.shape()[0];
    let cfg = wm.config();
    let zero = ModelState::initial(n, cfg);
    let action = Tensor::zeros(&[n, cfg.action_dim]);
    wm.posterior::<rand_chacha::ChaCha8Rng>(&zero, &action, embeddings, None)
}

impl GoalContext {
    pub fn new(wm: &WorldModel, image: &[f32]) -> Result<Self> {
        let x = Tensor::new(&[1, image.len()], image.to_vec())?;
        let embedding = wm.encode(&x)?;
        let state = infer_goal_state(wm, &embedding)?;
        Ok(Self {
            image: image.to_vec(),
            embedding,
            state,
        })
    }
}

/// Row-wise cosine of `concat(h, z)` between two state batches. Rows with a
/// zero-norm feature vector score 0.
pub fn cosine_reward(s: &ModelState, goal: &ModelState) -> Result<Vec<f32>> {
    let (a, b) = (s.features(), goal.features());
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "cosine_reward",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let width = a.shape()[1];
    Ok(a.data()
        .chunks(width)
        .zip(b.data().chunks(width))
        .map(|(x, y)| {
            let dot: f64 = x.iter().zip(y).map(|(&p, &q)| f64::from(p) * f64::from(q)).sum();
            let nx: f64 = x.iter().map(|&p| f64::from(p) * f64::from(p)).sum();
            let ny: f64 = y.iter().map(|&q| f64::from(q) * f64::from(q)).sum();
            if nx == 0.0 || ny == 0.0 {
                log::warn!("cosine reward of a zero feature vector; returning 0");
                0.0
            } else {
                (dot / num_traits::Float::sqrt(nx * ny)) as f32
            }
        })
        .collect())
}

/// Cosine similarity of each row of `x` with the matching row of `goal`,
/// recorded on the tape. Returns `[N, 1]`.
pub fn cosine_graph(tape: &mut Tape<f32>, x: Var, goal: Var) -> Result<Var> {
    let unit = |tape: &mut Tape<f32>, v: Var| -> Result<Var> {
        let sq = tape.square(v);
        let n2 = tape.sum_axis(sq, 1)?;
        let rows = tape.shape(n2)[0];
        let n2 = tape.reshape(n2, &[rows, 1])?;
        let n2 = tape.add_scalar(n2, 1e-12);
        let norm = tape.sqrt(n2)?;
        tape.div(v, norm)
    };
    let (ux, ug) = (unit(tape, x)?, unit(tape, goal)?);
    let prod = tape.mul(ux, ug)?;
    let dot = tape.sum_axis(prod, 1)?;
    let rows = tape.shape(dot)[0];
    tape.reshape(dot, &[rows, 1])
}

/// One sampled pair for distance training: rows index the time-major stack
/// of imagined states, `target` is the normalized step distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistancePair {
    pub first: usize,
    pub second: usize,
    pub target: f32,
    pub negative: bool,
}

/// Samples `anchors` pairs per trajectory from a `(H + 1) × S` stack.
/// Positives pair step `t` with `t + k`, `k ~ U{0..H−t}`, target `k / H`.
/// With probability `neg_prob` the second element comes from another
/// trajectory and the target is 1.
pub fn sample_distance_pairs<R: Rng + ?Sized>(
    horizon: usize,
    batch: usize,
    anchors: usize,
    neg_prob: f64,
    rng: &mut R,
) -> Vec<DistancePair> {
    let negatives = neg_prob > 0.0 && batch > 1;
    if neg_prob > 0.0 && batch <= 1 {
        log::warn!("distance training on a single trajectory; negatives skipped");
    }
    let mut pairs = Vec::with_capacity(batch * anchors);
    for i in 0..batch {
        for _ in 0..anchors {
            let t = rng.random_range(0..=horizon);
            let k = rng.random_range(0..=horizon - t);
            let first = t * batch + i;
            if negatives && rng.random_bool(neg_prob) {
                let mut j = rng.random_range(0..batch - 1);
                if j >= i {
                    j += 1;
                }
                let u = rng.random_range(0..=horizon);
                pairs.push(DistancePair {
                    first,
                    second: u * batch + j,
                    target: 1.0,
                    negative: true,
                });
            } else {
                pairs.push(DistancePair {
                    first,
                    second: (t + k) * batch + i,
                    target: k as f32 / horizon as f32,
                    negative: false,
                });
            }
        }
    }
    pairs
}

/// Uniform indices into a batch of `frames` replayed frames.
pub fn sample_goal_indices<R: Rng + ?Sized>(frames: usize, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::EmptyReplay);
    }
    Ok((0..count).map(|_| rng.random_range(0..frames)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistanceMetrics {
    pub distance_loss: f64,
    pub predictor_loss: f64,
    pub pairs: usize,
    pub negatives: usize,
    pub skipped: bool,
}

/// Learned temporal distance over predicted embeddings.
#[derive(Debug, Clone)]
struct GoalDistance {
    distance: Mlp,
    predictor: Mlp,
    dist_params: ParamSet,
    emb_params: ParamSet,
}

impl GoalDistance {
    fn distance_graph(&self, tape: &mut Tape<f32>, dp: &Binding, a: Var, b: Var) -> Result<Var> {
        let x = tape.concat(&[a, b], 1)?;
        let logit = self.distance.forward(tape, dp, x)?;
        Ok(tape.sigmoid(logit))
    }

    /// `−d(emb(s), g)` with both networks frozen.
    fn reward_graph(&self, tape: &mut Tape<f32>, features: Var, goal: Var) -> Result<Var> {
        let ep = self.emb_params.bind(tape, false);
        let dp = self.dist_params.bind(tape, false);
        let e_hat = self.predictor.forward(tape, &ep, features)?;
        let d = self.distance_graph(tape, &dp, e_hat, goal)?;
        Ok(tape.neg(d))
    }
}

/// Distance network, embedding predictor and goal-conditioned actor-critic.
#[derive(Debug, Clone)]
pub struct Achiever {
    cfg: AchieverConfig,
    pub actor_critic: ActorCritic,
    metric: GoalDistance,
    dist_opt: Adam,
    emb_opt: Adam,
}

impl Achiever {
    pub fn new<R: Rng + ?Sized>(
        wm: &WorldModelConfig,
        cfg: &AchieverConfig,
        imagination: &ImaginationConfig,
        rng: &mut R,
    ) -> Self {
        let (f, e) = (wm.feature_dim(), wm.embed_dim);
        let actor_critic = ActorCritic::new("achv/", f, e, wm.action_dim, imagination, rng);
        let mut dist_params = ParamSet::new("dist/");
        let h = cfg.distance_hidden;
        let distance = Mlp::new(&mut dist_params, "mlp", &[2 * e, h, h, 1], Activation::Elu, rng);
        let mut emb_params = ParamSet::new("emb/");
        let p = cfg.predictor_hidden;
        let predictor = Mlp::new(&mut emb_params, "mlp", &[f, p, p, e], Activation::Elu, rng);
        let opt = || {
            let mut o = Adam::new(cfg.distance_lr);
            o.clip_norm = Some(cfg.clip_norm);
            o
        };
        Self {
            cfg: cfg.clone(),
            actor_critic,
            metric: GoalDistance {
                distance,
                predictor,
                dist_params,
                emb_params,
            },
            dist_opt: opt(),
            emb_opt: opt(),
        }
    }

    pub fn config(&self) -> &AchieverConfig {
        &self.cfg
    }

    pub fn distance_params(&self) -> &ParamSet {
        &self.metric.dist_params
    }

    pub fn predictor_params(&self) -> &ParamSet {
        &self.metric.emb_params
    }

    pub fn param_sets(&self) -> Vec<&ParamSet> {
        let mut v: Vec<&ParamSet> = self.actor_critic.param_sets().into();
        v.push(&self.metric.dist_params);
        v.push(&self.metric.emb_params);
        v
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut v: Vec<&mut ParamSet> = self.actor_critic.param_sets_mut().into();
        v.push(&mut self.metric.dist_params);
        v.push(&mut self.metric.emb_params);
        v
    }

    /// `d(a, b) ∈ [0, 1]` for row-aligned embedding batches.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let dp = self.metric.dist_params.bind(&mut tape, false);
        let (a, b) = (tape.input(a), tape.input(b));
        let d = self.metric.distance_graph(&mut tape, &dp, a, b)?;
        Ok(tape.tensor(d))
    }

    /// Predicted embeddings `ê` of model states.
    pub fn predict_embedding(&self, states: &ModelState) -> Result<Tensor> {
        let mut tape = Tape::new();
        let ep = self.metric.emb_params.bind(&mut tape, false);
        let f = tape.input(&states.features());
        let e = self.metric.predictor.forward(&mut tape, &ep, f)?;
        Ok(tape.tensor(e))
    }

    /// `−d(emb(s), e_g)` per row, in `[−1, 0]`.
    pub fn temporal_reward(&self, states: &ModelState, goal_embeddings: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = tape.input(&states.features());
        let g = tape.input(goal_embeddings);
        let r = self.metric.reward_graph(&mut tape, f, g)?;
        Ok(tape.tensor(r))
    }

    /// Goal-conditioned action for real episodes.
    pub fn act<R: Rng + ?Sized>(&self, features: &Tensor, goal_embeddings: &Tensor, rng: Option<&mut R>) -> Result<Tensor> {
        self.actor_critic.act(features, Some(goal_embeddings), rng)
    }

    /// One imagination update toward the goals: row `i` of `starts` pursues
    /// row `i` of `goal_embeddings`. The reward of transition `t` scores the
    /// state it leads to.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        wm: &WorldModel,
        starts: &ModelState,
        goal_embeddings: &Tensor,
        rng: &mut R,
    ) -> Result<(ActorCriticMetrics, RolloutData)> {
        let goal_states = match self.cfg.reward {
            RewardMode::Cosine => Some(infer_goal_state(wm, goal_embeddings)?.features()),
            RewardMode::Temporal => None,
        };
        let (h, s) = (self.actor_critic.config().horizon, starts.batch());
        let metric = &self.metric;
        let reward_fn = |tape: &mut Tape<f32>, r: &ImaginedRollout| -> Result<Var> {
            let next = tape.slice(r.features, 0, s, h * s)?;
            match &goal_states {
                Some(goal) => {
                    let g = tape.input(goal);
                    let tiled = tape.concat(&alloc::vec![g; h], 0)?;
                    cosine_graph(tape, next, tiled)
                }
                None => {
                    let g = r.goal.expect("goal-conditioned rollout");
                    let tiled = tape.concat(&alloc::vec![g; h], 0)?;
                    metric.reward_graph(tape, next, tiled)
                }
            }
        };
        self.actor_critic.update(wm, starts, Some(goal_embeddings), rng, reward_fn)
    }

    /// One joint step of the distance network and embedding predictor.
    ///
    /// Pairs come from the imagined `rollout`; the predictor additionally
    /// regresses `emb(s)` toward the detached encoder embeddings of the
    /// replayed posterior `states`.
    pub fn distance_train<R: Rng + ?Sized>(
        &mut self,
        rollout: &RolloutData,
        states: &ModelState,
        embeddings: &Tensor,
        rng: &mut R,
    ) -> Result<DistanceMetrics> {
        let (h, s) = (rollout.horizon, rollout.batch);
        let pairs = sample_distance_pairs(h, s, self.cfg.anchors, self.cfg.neg_prob, rng);
        let mut tape = Tape::new();
        let m = &self.metric;
        let ep = m.emb_params.bind(&mut tape, true);
        let dp = m.dist_params.bind(&mut tape, true);

        let imagined = ModelState::concat(&rollout.states)?;
        let f = tape.input(&imagined.features());
        let e_hat = m.predictor.forward(&mut tape, &ep, f)?;
        let firsts: Vec<usize> = pairs.iter().map(|p| p.first).collect();
        let seconds: Vec<usize> = pairs.iter().map(|p| p.second).collect();
        let a = tape.gather_rows(e_hat, &firsts)?;
        let b = tape.gather_rows(e_hat, &seconds)?;
        let d = m.distance_graph(&mut tape, &dp, a, b)?;
        let targets = Tensor::new(&[pairs.len(), 1], pairs.iter().map(|p| p.target).collect())?;
        let y = tape.input(&targets);
        let err = tape.sub(d, y)?;
        let sq = tape.square(err);
        let dist_loss = tape.mean(sq);

        let rf = tape.input(&states.features());
        let pred = m.predictor.forward(&mut tape, &ep, rf)?;
        let target = tape.input(embeddings);
        let diff = tape.sub(pred, target)?;
        let sq = tape.square(diff);
        let emb_loss = tape.mean(sq);
        let total = tape.add(dist_loss, emb_loss)?;

        let mut metrics = DistanceMetrics {
            distance_loss: f64::from(tape.item(dist_loss)),
            predictor_loss: f64::from(tape.item(emb_loss)),
            pairs: pairs.len(),
            negatives: pairs.iter().filter(|p| p.negative).count(),
            skipped: false,
        };
        if !(metrics.distance_loss + metrics.predictor_loss).is_finite() {
            log::warn!("distance loss is not finite; skipping");
            metrics.skipped = true;
            return Ok(metrics);
        }
        let grads = tape.backward(total)?;
        self.metric.dist_params.accumulate(&grads, &dp);
        self.metric.emb_params.accumulate(&grads, &ep);
        let a = self.dist_opt.step(&mut self.metric.dist_params);
        let b = self.emb_opt.step(&mut self.metric.emb_params);
        metrics.skipped = matches!(a, AdamOutcome::Skipped) || matches!(b, AdamOutcome::Skipped);
        Ok(metrics)
    }
}
