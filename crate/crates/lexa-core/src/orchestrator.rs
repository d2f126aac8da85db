//! The unsupervised training loop: replay, update cycles, data collection
//! with the explorer and achiever, evaluation on goal images.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::achiever::{sample_goal_indices, Achiever, AchieverConfig, DistanceMetrics};
use crate::envs::{random_action, Env, EnvKind, EnvState, GoalSpec, ACTION_DIM, EPISODE_STEPS, IMAGE_SHAPE};
use crate::error::{Error, Result};
use crate::explorer::{EnsembleConfig, EnsembleMetrics, Explorer};
use crate::imagination::{ActorCriticMetrics, ImaginationConfig};
use crate::ndgrad::{ParamSet, Tensor};
use crate::worldmodel::{ModelState, SequenceBatch, WorldModel, WorldModelConfig, WorldModelLosses};

/// Frames per stored episode: the reset observation plus one per step.
pub const EPISODE_FRAMES: usize = EPISODE_STEPS + 1;

/// Edge length of the cells used to count visited positions.
pub const VISIT_PITCH: f64 = 0.1;

const EVAL_SEED: u64 = 0x5eed_e7a1;

/// Which policy fills the replay buffer after prefill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    /// Explorer and achiever practice episodes in turn.
    Alternate,
    Explorer,
    /// Uniform random actions and no learning; a coverage baseline.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: Option<EnvKind>,
    pub seed: u64,
    pub total_env_steps: u64,
    /// Environment steps per update cycle.
    pub train_every: u64,
    pub batch: usize,
    pub seq_len: usize,
    /// Posterior states, sampled from each training batch, that seed the
    /// explorer's and the achiever's imagination.
    pub imagination_starts: usize,
    pub prefill_episodes: usize,
    pub collection: Collection,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub checkpoint_every: u64,
    pub world_model: WorldModelConfig,
    pub ensemble: EnsembleConfig,
    pub imagination: ImaginationConfig,
    pub achiever: AchieverConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: None,
            seed: 0,
            total_env_steps: 200_000,
            train_every: 5,
            batch: 16,
            seq_len: 32,
            imagination_starts: 16,
            prefill_episodes: 10,
            collection: Collection::Alternate,
            eval_every: 5_000,
            eval_episodes: 10,
            checkpoint_every: 10_000,
            world_model: WorldModelConfig::default(),
            ensemble: EnsembleConfig::default(),
            imagination: ImaginationConfig::default(),
            achiever: AchieverConfig::default(),
        }
    }
}

fn config_error(field: &'static str, reason: &str) -> Error {
    Error::Config {
        field,
        reason: reason.into(),
    }
}

impl TrainConfig {
    pub fn env_kind(&self) -> Result<EnvKind> {
        self.env.ok_or_else(|| config_error("env", "missing environment name"))
    }

    pub fn validate(&self) -> Result<()> {
        self.env_kind()?;
        let positive = [
            ("total_env_steps", self.total_env_steps),
            ("train_every", self.train_every),
            ("batch", self.batch as u64),
            ("imagination_starts", self.imagination_starts as u64),
            ("eval_every", self.eval_every),
            ("checkpoint_every", self.checkpoint_every),
            ("ensemble.heads", self.ensemble.heads as u64),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(config_error(field, "must be positive"));
            }
        }
        if self.seq_len < 2 || self.seq_len > EPISODE_FRAMES {
            return Err(config_error("seq_len", "must lie in [2, 101]"));
        }
        if self.prefill_episodes == 0 {
            return Err(config_error("prefill_episodes", "training needs at least one prefill episode"));
        }
        let wm = &self.world_model;
        if wm.image != IMAGE_SHAPE {
            return Err(config_error("world_model.image", "must be [16, 16, 3]"));
        }
        if wm.action_dim != ACTION_DIM {
            return Err(config_error("world_model.action_dim", "must be 2"));
        }
        if wm.embed_dim == 0 || wm.deter_dim == 0 || wm.stoch_dim == 0 {
            return Err(config_error("world_model", "layer sizes must be positive"));
        }
        self.imagination.validate()?;
        self.achiever.validate()
    }

    /// Update cycles after each collected episode.
    pub fn cycles_per_episode(&self) -> u64 {
        (EPISODE_STEPS as u64 / self.train_every).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Random,
    Explorer,
    Practice,
}

impl EpisodeKind {
    pub fn code(self) -> u8 {
        match self {
            Self::Random => 0,
            Self::Explorer => 1,
            Self::Practice => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::Random),
            1 => Ok(Self::Explorer),
            2 => Ok(Self::Practice),
            _ => Err(Error::Invalid(alloc::format!("unknown episode kind {code}"))),
        }
    }
}

/// One stored episode. `images` is `len × pixels`, `actions` is
/// `len × action_dim` with `actions[t]` the action that produced frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: u64,
    pub kind: EpisodeKind,
    pub seed: u64,
    pub len: usize,
    pub images: Vec<f32>,
    pub actions: Vec<f32>,
    /// True environment states; empty for episodes read back from disk.
    pub states: Vec<EnvState>,
}

impl EpisodeRecord {
    pub fn frame(&self, t: usize, pixels: usize) -> &[f32] {
        &self.images[t * pixels..(t + 1) * pixels]
    }
}

/// Append-only episode store.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    episodes: Vec<EpisodeRecord>,
    pixels: usize,
    action_dim: usize,
}

impl ReplayBuffer {
    pub fn new(pixels: usize, action_dim: usize) -> Self {
        Self {
            episodes: Vec::new(),
            pixels,
            action_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn push(&mut self, record: EpisodeRecord) -> Result<()> {
        if record.images.len() != record.len * self.pixels || record.actions.len() != record.len * self.action_dim {
            return Err(Error::ShapeMismatch {
                op: "ReplayBuffer::push",
                lhs: vec![record.len, self.pixels, self.action_dim],
                rhs: vec![record.images.len(), record.actions.len()],
            });
        }
        self.episodes.push(record);
        Ok(())
    }

    /// `batch` contiguous windows of `len` frames, each from a uniformly
    /// chosen episode at a uniform offset.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> Result<SequenceBatch> {
        if self.episodes.is_empty() {
            return Err(Error::EmptyReplay);
        }
        let (p, a) = (self.pixels, self.action_dim);
        let mut images = Vec::with_capacity(batch * len * p);
        let mut actions = Vec::with_capacity(batch * len * a);
        for _ in 0..batch {
            let ep = &self.episodes[rng.random_range(0..self.episodes.len())];
            if ep.len < len {
                return Err(Error::Invalid(alloc::format!(
                    "episode {} has {} frames, fewer than the sequence length {len}",
                    ep.index, ep.len
                )));
            }
            let start = rng.random_range(0..=ep.len - len);
            images.extend_from_slice(&ep.images[start * p..(start + len) * p]);
            actions.extend_from_slice(&ep.actions[start * a..(start + len) * a]);
        }
        SequenceBatch::new(batch, len, p, a, images, actions)
    }

    /// A frame drawn uniformly from every stored frame.
    pub fn random_frame<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&[f32]> {
        let total: usize = self.episodes.iter().map(|e| e.len).sum();
        if total == 0 {
            return Err(Error::EmptyReplay);
        }
        let mut k = rng.random_range(0..total);
        for ep in &self.episodes {
            if k < ep.len {
                return Ok(ep.frame(k, self.pixels));
            }
            k -= ep.len;
        }
        unreachable!("index within total frame count")
    }
}

/// Flags, per goal, whether any state of the episode satisfies it.
pub fn coincidental_hits(env: &Env, states: &[EnvState], goals: &[GoalSpec]) -> Result<Vec<bool>> {
    goals
        .iter()
        .map(|g| {
            for s in states {
                if env.success(s, g)? {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect()
}

/// Index of the `VISIT_PITCH` cell holding `p`.
pub fn visit_cell(p: [f64; 2]) -> u32 {
    let per_axis = num_traits::Float::ceil(1.0 / VISIT_PITCH) as u32;
    let idx = |v: f64| ((v / VISIT_PITCH) as u32).min(per_axis - 1);
    idx(p[1]) * per_axis + idx(p[0])
}

/// Seed of the `index`-th item of a numbered stream (splitmix64 mix).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Reset seed of an evaluation episode.
pub fn eval_seed(goal: usize, episode: usize) -> u64 {
    derive_seed(EVAL_SEED, goal as u64, episode as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CycleMetrics {
    pub world_model: WorldModelLosses,
    pub world_model_skipped: bool,
    pub ensemble: EnsembleMetrics,
    pub explorer: ActorCriticMetrics,
    pub achiever: ActorCriticMetrics,
    pub distance: Option<DistanceMetrics>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeSummary {
    pub index: u64,
    pub kind: Option<EpisodeKind>,
    /// Per benchmark goal, set for exploration episodes only.
    pub coincidental: Vec<bool>,
}

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as `[high, low]` halves.
    pub word_pos: [u64; 2],
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: [(pos >> 64) as u64, pos as u64],
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos((u128::from(self.word_pos[0]) << 64) | u128::from(self.word_pos[1]));
        rng
    }
}

/// Counters and random state that, with the parameters, determine all
/// further training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProgress {
    pub env_steps: u64,
    pub episodes: u64,
    pub cycles: u64,
    pub explorer_critic_steps: u64,
    pub achiever_critic_steps: u64,
    pub coincidental: Vec<u64>,
    pub visited: Vec<u32>,
    pub rng: RngState,
}

/// One evaluation rollout: a goal index and the reset seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalTask {
    pub goal: usize,
    pub seed: u64,
}

/// The full agent with its replay buffer.
#[derive(Debug, Clone)]
pub struct Agent {
    cfg: TrainConfig,
    env: Env,
    goals: Vec<GoalSpec>,
    pub world_model: WorldModel,
    pub explorer: Explorer,
    pub achiever: Achiever,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    env_steps: u64,
    episodes: u64,
    cycles: u64,
    coincidental: Vec<u64>,
    visited: BTreeSet<u32>,
}

impl Agent {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let kind = cfg.env_kind()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let world_model = WorldModel::new(&cfg.world_model, &mut rng);
        let explorer = Explorer::new(&cfg.world_model, &cfg.ensemble, &cfg.imagination, &mut rng);
        let achiever = Achiever::new(&cfg.world_model, &cfg.achiever, &cfg.imagination, &mut rng);
        let goals = crate::envs::benchmark_goals(kind);
        Ok(Self {
            env: Env::new(kind),
            coincidental: vec![0; goals.len()],
            goals,
            replay: ReplayBuffer::new(cfg.world_model.pixels(), cfg.world_model.action_dim),
            world_model,
            explorer,
            achiever,
            rng,
            env_steps: 0,
            episodes: 0,
            cycles: 0,
            visited: BTreeSet::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// The environment's benchmark goals, used for coincidental counts.
    pub fn benchmark(&self) -> &[GoalSpec] {
        &self.goals
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// Cumulative per-goal coincidental successes of exploration episodes.
    pub fn coincidental_counts(&self) -> &[u64] {
        &self.coincidental
    }

    /// Distinct `VISIT_PITCH` cells the agent has occupied in exploration
    /// and random episodes.
    pub fn visited_cells(&self) -> usize {
        self.visited.len()
    }

    /// Every parameter section in a fixed order.
    pub fn param_sets(&self) -> Vec<&ParamSet> {
        let mut v = vec![self.world_model.params()];
        v.extend(self.explorer.ensemble.param_sets());
        v.extend(self.explorer.actor_critic.param_sets());
        v.extend(self.achiever.param_sets());
        v
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut v = vec![self.world_model.params_mut()];
        v.extend(self.explorer.ensemble.param_sets_mut());
        v.extend(self.explorer.actor_critic.param_sets_mut());
        v.extend(self.achiever.param_sets_mut());
        v
    }

    pub fn progress(&self) -> AgentProgress {
        AgentProgress {
            env_steps: self.env_steps,
            episodes: self.episodes,
            cycles: self.cycles,
            explorer_critic_steps: self.explorer.actor_critic.critic_steps(),
            achiever_critic_steps: self.achiever.actor_critic.critic_steps(),
            coincidental: self.coincidental.clone(),
            visited: self.visited.iter().copied().collect(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// Restores counters and random state. Parameters are restored
    /// separately through [`Agent::param_sets_mut`] and episodes through
    /// [`Agent::restore_episode`].
    pub fn restore_progress(&mut self, p: &AgentProgress) -> Result<()> {
        if p.coincidental.len() != self.goals.len() {
            return Err(Error::Invalid("coincidental counters do not match the benchmark".into()));
        }
        self.env_steps = p.env_steps;
        self.episodes = p.episodes;
        self.cycles = p.cycles;
        self.explorer.actor_critic.set_critic_steps(p.explorer_critic_steps);
        self.achiever.actor_critic.set_critic_steps(p.achiever_critic_steps);
        self.coincidental = p.coincidental.clone();
        self.visited = p.visited.iter().copied().collect();
        self.rng = p.rng.restore();
        Ok(())
    }

    /// Re-adds an episode read back from disk.
    pub fn restore_episode(&mut self, record: EpisodeRecord) -> Result<()> {
        self.replay.push(record)
    }

    /// Kind of the next episode to collect.
    pub fn next_kind(&self) -> EpisodeKind {
        let prefill = self.cfg.prefill_episodes as u64;
        if self.episodes < prefill {
            return EpisodeKind::Random;
        }
        match self.cfg.collection {
            Collection::Random => EpisodeKind::Random,
            Collection::Explorer => EpisodeKind::Explorer,
            Collection::Alternate if (self.episodes - prefill) % 2 == 0 => EpisodeKind::Explorer,
            Collection::Alternate => EpisodeKind::Practice,
        }
    }

    /// Whether update cycles run in this configuration.
    pub fn learns(&self) -> bool {
        self.cfg.collection != Collection::Random
    }

    /// Collects the prefill episodes that are still missing.
    pub fn prefill(&mut self) -> Result<Vec<EpisodeSummary>> {
        let mut out = Vec::new();
        while self.episodes < self.cfg.prefill_episodes as u64 {
            out.push(self.collect_episode()?);
        }
        Ok(out)
    }

    /// Runs one full episode with the policy due next and stores it.
    pub fn collect_episode(&mut self) -> Result<EpisodeSummary> {
        let kind = self.next_kind();
        let index = self.episodes;
        let seed = derive_seed(self.cfg.seed, 1, index);
        let (mut state, obs) = self.env.reset(seed);
        let pixels = self.cfg.world_model.pixels();
        let a_dim = self.cfg.world_model.action_dim;

        let goal = match kind {
            EpisodeKind::Practice => {
                let frame = self.replay.random_frame(&mut self.rng)?.to_vec();
                Some(self.world_model.encode(&Tensor::new(&[1, pixels], frame)?)?)
            }
            _ => None,
        };

        let mut images = Vec::with_capacity(EPISODE_FRAMES * pixels);
        let mut actions = vec![0.0; a_dim];
        let mut states = Vec::with_capacity(EPISODE_FRAMES);
        images.extend_from_slice(&obs);
        states.push(state.clone());
        let mut post = if kind == EpisodeKind::Random {
            None
        } else {
            let first = self.filter(&ModelState::initial(1, &self.cfg.world_model), &[0.0; ACTION_DIM], &obs)?;
            Some(first)
        };
        for _ in 0..EPISODE_STEPS {
            let action = match (kind, &post) {
                (EpisodeKind::Random, _) | (_, None) => random_action(&mut self.rng),
                (EpisodeKind::Explorer, Some(s)) => {
                    let a = self.explorer.act(&s.features(), Some(&mut self.rng))?;
                    [a.data()[0], a.data()[1]]
                }
                (EpisodeKind::Practice, Some(s)) => {
                    let g = goal.as_ref().expect("practice goal");
                    let a = self.achiever.act(&s.features(), g, Some(&mut self.rng))?;
                    [a.data()[0], a.data()[1]]
                }
            };
            let (next, obs) = self.env.step(&state, action);
            state = next;
            if let Some(prev) = &post {
                post = Some(self.filter(prev, &action, &obs)?);
            }
            images.extend_from_slice(&obs);
            actions.extend_from_slice(&action);
            states.push(state.clone());
        }

        let mut summary = EpisodeSummary {
            index,
            kind: Some(kind),
            coincidental: Vec::new(),
        };
        if kind != EpisodeKind::Practice {
            summary.coincidental = coincidental_hits(&self.env, &states, &self.goals)?;
            for (c, &hit) in self.coincidental.iter_mut().zip(&summary.coincidental) {
                *c += u64::from(hit);
            }
            self.visited.extend(states.iter().map(|s| visit_cell(s.agent)));
        }
        self.replay.push(EpisodeRecord {
            index,
            kind,
            seed,
            len: EPISODE_FRAMES,
            images,
            actions,
            states,
        })?;
        self.episodes += 1;
        self.env_steps += EPISODE_STEPS as u64;
        Ok(summary)
    }

    /// Posterior update with a new observation, taking `z` at its mean.
    fn filter(&self, prev: &ModelState, action: &[f32], obs: &[f32]) -> Result<ModelState> {
        let e = self.world_model.encode(&Tensor::new(&[1, obs.len()], obs.to_vec())?)?;
        let a = Tensor::new(&[1, action.len()], action.to_vec())?;
        self.world_model.posterior::<ChaCha8Rng>(prev, &a, &e, None)
    }

    /// World model, ensemble, explorer, achiever and (when enabled) the
    /// temporal distance, in that order, all on one replay batch.
    pub fn update_cycle(&mut self) -> Result<CycleMetrics> {
        let cfg = &self.cfg;
        let batch = self.replay.sample(cfg.batch, cfg.seq_len, &mut self.rng)?;
        let out = self.world_model.observe_and_train(&batch, &mut self.rng)?;
        if out.skipped {
            log::warn!("cycle {}: world-model step skipped", self.cycles);
        }
        let ensemble = self.explorer.train_ensemble(&out.states, &batch)?;
        if ensemble.skipped_heads > 0 {
            log::warn!("cycle {}: {} ensemble heads skipped", self.cycles, ensemble.skipped_heads);
        }

        let rows = out.states.batch();
        let starts: Vec<usize> = (0..cfg.imagination_starts)
            .map(|_| self.rng.random_range(0..rows))
            .collect();
        let starts = out.states.select(&starts)?;
        let explorer = self.explorer.update(&self.world_model, &starts, &mut self.rng)?;

        let picks = sample_goal_indices(rows, cfg.imagination_starts, &mut self.rng)?;
        let pixels = cfg.world_model.pixels();
        let images = batch.images_time_major();
        let mut goal_images = Vec::with_capacity(picks.len() * pixels);
        for &r in &picks {
            goal_images.extend_from_slice(&images.data()[r * pixels..(r + 1) * pixels]);
        }
        let goals = self
            .world_model
            .encode(&Tensor::new(&[picks.len(), pixels], goal_images)?)?;
        let (achiever, rollout) = self.achiever.update(&self.world_model, &starts, &goals, &mut self.rng)?;
        let distance = if self.achiever.config().trains_distance() {
            Some(
                self.achiever
                    .distance_train(&rollout, &out.states, &out.embeddings, &mut self.rng)?,
            )
        } else {
            None
        };
        for (name, m) in [("explorer", &explorer), ("achiever", &achiever)] {
            if m.actor_skipped || m.critic_skipped {
                log::warn!("cycle {}: {name} step skipped", self.cycles);
            }
        }
        self.cycles += 1;
        Ok(CycleMetrics {
            world_model: out.losses,
            world_model_skipped: out.skipped,
            ensemble,
            explorer,
            achiever,
            distance,
        })
    }

    /// Runs the achiever with mean actions on every task in one batch and
    /// reports final-step success per task.
    pub fn evaluate(&self, goals: &[GoalSpec], tasks: &[EvalTask]) -> Result<Vec<bool>> {
        for g in goals {
            if g.env != self.env.kind() {
                return Err(Error::EnvMismatch {
                    expected: String::from(self.env.kind().name()),
                    found: String::from(g.env.name()),
                });
            }
        }
        let n = tasks.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let pixels = self.cfg.world_model.pixels();
        let mut goal_images = Vec::with_capacity(n * pixels);
        for t in tasks {
            let g = goals
                .get(t.goal)
                .ok_or_else(|| Error::UnknownGoal(alloc::format!("#{}", t.goal)))?;
            goal_images.extend_from_slice(&g.image);
        }
        let goal_emb = self.world_model.encode(&Tensor::new(&[n, pixels], goal_images)?)?;

        let mut states = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n * pixels);
        for t in tasks {
            let (s, o) = self.env.reset(t.seed);
            states.push(s);
            obs.extend_from_slice(&o);
        }
        let a_dim = self.cfg.world_model.action_dim;
        let mut post = self.world_model.posterior::<ChaCha8Rng>(
            &ModelState::initial(n, &self.cfg.world_model),
            &Tensor::zeros(&[n, a_dim]),
            &self.world_model.encode(&Tensor::new(&[n, pixels], obs)?)?,
            None,
        )?;
        for _ in 0..EPISODE_STEPS {
            let actions = self.achiever.act::<ChaCha8Rng>(&post.features(), &goal_emb, None)?;
            let mut obs = Vec::with_capacity(n * pixels);
            for (i, s) in states.iter_mut().enumerate() {
                let a = &actions.data()[i * a_dim..(i + 1) * a_dim];
                let (next, o) = self.env.step(s, [a[0], a[1]]);
                *s = next;
                obs.extend_from_slice(&o);
            }
            let e = self.world_model.encode(&Tensor::new(&[n, pixels], obs)?)?;
            post = self.world_model.posterior::<ChaCha8Rng>(&post, &actions, &e, None)?;
        }
        states
            .iter()
            .zip(tasks)
            .map(|(s, t)| self.env.success(s, &goals[t.goal]))
            .collect()
    }
}

/// The standard evaluation tasks: `episodes` seeded resets per goal.
pub fn eval_tasks(goals: usize, episodes: usize) -> Vec<EvalTask> {
    (0..goals)
        .flat_map(|g| (0..episodes).map(move |e| EvalTask { goal: g, seed: eval_seed(g, e) }))
        .collect()
}

/// Per-goal success rates from task outcomes.
pub fn success_rates(goals: usize, tasks: &[EvalTask], outcomes: &[bool]) -> Vec<f64> {
    let mut hits = vec![0u32; goals];
    let mut runs = vec![0u32; goals];
    for (t, &ok) in tasks.iter().zip(outcomes) {
        runs[t.goal] += 1;
        hits[t.goal] += u32::from(ok);
    }
    hits.iter()
        .zip(&runs)
        .map(|(&h, &r)| if r == 0 { 0.0 } else { f64::from(h) / f64::from(r) })
        .collect()
}
