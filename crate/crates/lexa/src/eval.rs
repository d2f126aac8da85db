//! Goal-image evaluation on a frozen agent, fanned out over threads.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use lexa_core::envs::GoalSpec;
use lexa_core::orchestrator::{eval_seed, Agent, EvalTask};

use crate::error::{IoContext, LexaError, Result};

/// Thread cap from `LEXA_THREADS`, else the available parallelism.
pub fn thread_limit() -> Result<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("LEXA_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(LexaError::Usage(format!("LEXA_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(available),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub goal_ids: Vec<String>,
    pub rates: Vec<f64>,
    pub episodes_per_goal: usize,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        if self.rates.is_empty() {
            0.0
        } else {
            self.rates.iter().sum::<f64>() / self.rates.len() as f64
        }
    }

    pub fn table(&self) -> String {
        let width = self.goal_ids.iter().map(String::len).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  success  episodes\n", "goal");
        for (id, r) in self.goal_ids.iter().zip(&self.rates) {
            out.push_str(&format!("{id:<width$}  {:>7.3}  {:>8}\n", r, self.episodes_per_goal));
        }
        out.push_str(&format!("{:<width$}  {:>7.3}\n", "mean", self.mean()));
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("goal_id,success_rate,episodes\n");
        for (id, r) in self.goal_ids.iter().zip(&self.rates) {
            out.push_str(&format!("{id},{r},{}\n", self.episodes_per_goal));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.csv()).at(path)
    }
}

/// Runs `episodes_per_goal` seeded episodes per goal with mean actions.
///
/// Work is split per goal, so outcomes do not depend on the thread count.
pub fn evaluate(agent: &Agent, goals: &[GoalSpec], episodes_per_goal: usize, threads: usize) -> Result<EvalReport> {
    let chunks: Vec<Vec<EvalTask>> = (0..goals.len())
        .map(|g| {
            (0..episodes_per_goal)
                .map(|e| EvalTask { goal: g, seed: eval_seed(g, e) })
                .collect()
        })
        .collect();
    let results: Mutex<Vec<Option<lexa_core::Result<Vec<bool>>>>> = Mutex::new(vec![None; chunks.len()]);
    let workers = threads.clamp(1, chunks.len().max(1));
    std::thread::scope(|scope| {
        for w in 0..workers {
            let (chunks, results) = (&chunks, &results);
            scope.spawn(move || {
                for i in (w..chunks.len()).step_by(workers) {
                    let out = agent.evaluate(goals, &chunks[i]);
                    results.lock().expect("no worker panicked")[i] = Some(out);
                }
            });
        }
    });
    let mut rates = Vec::with_capacity(goals.len());
    for r in results.into_inner().expect("no worker panicked") {
        let hits = r.expect("every chunk evaluated")?;
        let n = hits.len().max(1);
        rates.push(hits.iter().filter(|&&h| h).count() as f64 / n as f64);
    }
    Ok(EvalReport {
        goal_ids: goals.iter().map(|g| g.id.clone()).collect(),
        rates,
        episodes_per_goal,
    })
}
