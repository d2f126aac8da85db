//! Breadth-first search for the minimum number of agent steps to a goal.
//!
//! The search simulates the true dynamics from the given state under the
//! nine full-speed actions and merges states that fall in the same grid
//! cell, so its answer can be off by at most about one step.

use alloc::collections::VecDeque;
use alloc::vec;

use super::{Env, EnvState, GoalSpec};
use crate::error::Result;

pub const ORACLE_PITCH: f64 = 0.04;

const CELLS: usize = 26;

fn cell(c: f64) -> usize {
    (num_traits::Float::round(c / ORACLE_PITCH) as usize).min(CELLS - 1)
}

fn key(state: &EnvState) -> usize {
    let agent = cell(state.agent[0]) * CELLS + cell(state.agent[1]);
    match state.block {
        Some(b) => (agent * CELLS + cell(b[0])) * CELLS + cell(b[1]),
        None => agent,
    }
}

/// Minimum agent steps from `state` until `goal` holds, or `None` when the
/// goal cannot be reached.
pub fn oracle_steps(env: &Env, state: &EnvState, goal: &GoalSpec) -> Result<Option<u32>> {
    if env.success(state, goal)? {
        return Ok(Some(0));
    }
    let space = if state.block.is_some() {
        CELLS.pow(4)
    } else {
        CELLS * CELLS
    };
    let mut seen = vec![false; space];
    seen[key(state)] = true;
    let mut queue = VecDeque::from([(*state, 0u32)]);
    while let Some((s, depth)) = queue.pop_front() {
        for ax in [-1.0f32, 0.0, 1.0] {
            for ay in [-1.0f32, 0.0, 1.0] {
                let next = env.advance(&s, [ax, ay]);
                let k = key(&next);
                if seen[k] {
                    continue;
                }
                if goal.satisfied(&next) {
                    return Ok(Some(depth + 1));
                }
                seen[k] = true;
                queue.push_back((next, depth + 1));
            }
        }
    }
    Ok(None)
}
