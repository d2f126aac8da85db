//! Training runs on disk: layout, the collect/update loop, periodic
//! evaluation and checkpoints, and resumption after an interruption.
//!
//! ```text
//! <outdir>/config.json
//! <outdir>/metrics.jsonl
//! <outdir>/checkpoints/step_<N>.ckpt
//! <outdir>/episodes/ep_<N>.bin
//! ```
//!
//! Each collected episode of 100 steps is followed by `100 / train_every`
//! update cycles. Cycle records are stamped with interpolated steps
//! (`train_every` apart) so `env_step` increases strictly; evaluation
//! results and exploration counters join the record that closes the episode.

use std::fs;
use std::path::{Path, PathBuf};

use lexa_core::envs::IMAGE_SHAPE;
use lexa_core::orchestrator::{Agent, CycleMetrics, TrainConfig};

use crate::checkpoint;
use crate::episode_file;
use crate::error::{IoContext, LexaError, Result};
use crate::eval::{evaluate, EvalReport};
use crate::metrics::{MetricsRecord, MetricsWriter};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub checkpoints: PathBuf,
    pub episodes: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            config: root.join("config.json"),
            metrics: root.join("metrics.jsonl"),
            checkpoints: root.join("checkpoints"),
            episodes: root.join("episodes"),
        }
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints.join(format!("step_{step}.ckpt"))
    }

    /// Checkpoint steps present on disk, ascending.
    pub fn checkpoint_steps(&self) -> Result<Vec<u64>> {
        if !self.checkpoints.exists() {
            return Ok(Vec::new());
        }
        let mut steps = Vec::new();
        for entry in fs::read_dir(&self.checkpoints).at(&self.checkpoints)? {
            let name = entry.at(&self.checkpoints)?.file_name();
            let name = name.to_string_lossy();
            if let Some(step) = name
                .strip_prefix("step_")
                .and_then(|s| s.strip_suffix(".ckpt"))
                .and_then(|s| s.parse().ok())
            {
                steps.push(step);
            }
        }
        steps.sort_unstable();
        Ok(steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub threads: usize,
    /// Stop after the first episode that reaches this step, as if
    /// interrupted there.
    pub stop_at: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            stop_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub env_steps: u64,
    pub cycles: u64,
    pub resumed_from: Option<u64>,
    pub last_eval: Option<EvalReport>,
}

fn crossed(before: u64, after: u64, every: u64) -> bool {
    after / every > before / every
}

fn cycle_record(step: u64, cycle: u64, m: &CycleMetrics) -> MetricsRecord {
    let mut r = MetricsRecord::new(step);
    r.set("cycle", cycle as f64);
    r.set("wm_loss", m.world_model.total);
    r.set("wm_nll", m.world_model.reconstruction_nll);
    r.set("kl", m.world_model.kl);
    r.set("raw_kl", m.world_model.raw_kl);
    r.set("ens_loss", m.ensemble.loss);
    for (prefix, ac) in [("expl", &m.explorer), ("achv", &m.achiever)] {
        r.set(format!("{prefix}_actor_loss"), ac.actor_loss);
        r.set(format!("{prefix}_critic_loss"), ac.critic_loss);
        r.set(format!("{prefix}_reward_mean"), ac.reward_mean);
        r.set(format!("{prefix}_return_mean"), ac.return_mean);
        r.set(format!("{prefix}_entropy"), ac.entropy);
    }
    if let Some(d) = &m.distance {
        r.set("dist_loss", d.distance_loss);
        r.set("emb_loss", d.predictor_loss);
    }
    let skipped = [
        m.world_model_skipped,
        m.explorer.actor_skipped,
        m.explorer.critic_skipped,
        m.achiever.actor_skipped,
        m.achiever.critic_skipped,
        m.distance.is_some_and(|d| d.skipped),
    ];
    let skipped = skipped.iter().filter(|&&s| s).count() + m.ensemble.skipped_heads;
    if skipped > 0 {
        r.set("skipped_steps", skipped as f64);
    }
    r
}

fn add_exploration(r: &mut MetricsRecord, agent: &Agent) {
    for (g, &c) in agent.benchmark().iter().zip(agent.coincidental_counts()) {
        r.set(format!("explore/coincidental_{}_count", g.id), c as f64);
    }
    r.set("explore/visited_cells", agent.visited_cells() as f64);
    r.set("episodes", agent.episodes() as f64);
}

fn add_eval(r: &mut MetricsRecord, report: &EvalReport) {
    for (id, rate) in report.goal_ids.iter().zip(&report.rates) {
        r.set(format!("eval/{id}_success"), *rate);
    }
    r.set("eval/mean_success", report.mean());
}

fn write_new_episodes(paths: &RunPaths, agent: &Agent, from: u64) -> Result<()> {
    let a_dim = agent.config().world_model.action_dim;
    for ep in &agent.replay().episodes()[from as usize..] {
        episode_file::write(&paths.episodes, ep, IMAGE_SHAPE, a_dim)?;
    }
    Ok(())
}

/// Loads the newest checkpoint and the episodes it covers.
fn resume(paths: &RunPaths, cfg: &TrainConfig) -> Result<Option<Agent>> {
    let Some(&step) = paths.checkpoint_steps()?.last() else {
        return Ok(None);
    };
    let path = paths.checkpoint(step);
    let mut agent = checkpoint::load_agent(&path)?;
    if agent.config() != cfg {
        return Err(LexaError::format(&path, "checkpoint config differs from the run config"));
    }
    for index in 0..agent.episodes() {
        agent.restore_episode(episode_file::read(&paths.episodes, index, cfg.seed)?)?;
    }
    log::info!("resuming from {} at env step {}", path.display(), agent.env_steps());
    Ok(Some(agent))
}

/// Trains to `cfg.total_env_steps`, resuming if `outdir` holds an
/// interrupted run of the same configuration.
pub fn train(cfg: &TrainConfig, outdir: &Path, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let paths = RunPaths::new(outdir);
    let config_json = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    let existing = if paths.config.exists() {
        let stored = fs::read_to_string(&paths.config).at(&paths.config)?;
        if stored != config_json {
            return Err(LexaError::Usage(format!(
                "{} holds a run with a different configuration",
                outdir.display()
            )));
        }
        resume(&paths, cfg)?
    } else {
        None
    };
    for dir in [&paths.root, &paths.checkpoints, &paths.episodes] {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(&paths.config, &config_json).at(&paths.config)?;

    let resumed_from = existing.as_ref().map(Agent::env_steps);
    let mut metrics = MetricsWriter::open(&paths.metrics, Some(resumed_from.unwrap_or(0)))?;
    let mut agent = match existing {
        Some(a) => a,
        None => Agent::new(cfg.clone())?,
    };

    if agent.episodes() < cfg.prefill_episodes as u64 {
        let before = agent.episodes();
        agent.prefill()?;
        write_new_episodes(&paths, &agent, before)?;
        let mut r = MetricsRecord::new(agent.env_steps());
        add_exploration(&mut r, &agent);
        metrics.append(&r)?;
    }

    let mut last_eval = None;
    let mut last_ckpt = resumed_from;
    let goals = agent.benchmark().to_vec();
    while agent.env_steps() < cfg.total_env_steps {
        let start = agent.env_steps();
        let index = agent.episodes();
        agent.collect_episode()?;
        write_new_episodes(&paths, &agent, index)?;
        let end = agent.env_steps();

        let mut closing = MetricsRecord::new(end);
        if agent.learns() {
            let n = cfg.cycles_per_episode();
            for i in 0..n {
                let m = agent.update_cycle()?;
                let step = if i + 1 == n { end } else { start + (i + 1) * cfg.train_every };
                let r = cycle_record(step, agent.cycles(), &m);
                if i + 1 == n {
                    closing = r;
                } else {
                    metrics.append(&r)?;
                }
            }
        }
        add_exploration(&mut closing, &agent);
        let finished = end >= cfg.total_env_steps;
        if crossed(start, end, cfg.eval_every) || finished {
            let report = evaluate(&agent, &goals, cfg.eval_episodes, opts.threads)?;
            log::info!("step {end}: mean success {:.3}", report.mean());
            add_eval(&mut closing, &report);
            last_eval = Some(report);
        }
        metrics.append(&closing)?;

        let stopping = opts.stop_at.is_some_and(|s| end >= s);
        if crossed(start, end, cfg.checkpoint_every) || finished || stopping {
            checkpoint::save(&paths.checkpoint(end), &agent)?;
            last_ckpt = Some(end);
        }
        if stopping {
            break;
        }
    }
    if last_ckpt != Some(agent.env_steps()) {
        checkpoint::save(&paths.checkpoint(agent.env_steps()), &agent)?;
    }
    Ok(RunOutcome {
        env_steps: agent.env_steps(),
        cycles: agent.cycles(),
        resumed_from,
        last_eval,
    })
}
