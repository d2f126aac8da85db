//! Evaluation goals and the built-in benchmark sets.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{render, Env, EnvKind, EnvState, HALF_SIZE};
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 0.08;

/// Which entities a goal constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalEntities {
    Agent,
    Block,
    Both,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

/// Serializable part of a goal; the image is always re-rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalDef {
    pub id: String,
    pub env: EnvKind,
    pub agent: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<[f64; 2]>,
    pub entities: GoalEntities,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

/// A goal with its rendered goal image.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub id: String,
    pub env: EnvKind,
    pub target: EnvState,
    pub entities: GoalEntities,
    pub tolerance: f64,
    pub image: Vec<f32>,
}

impl GoalSpec {
    pub fn from_def(def: &GoalDef) -> Result<Self> {
        let target = EnvState {
            agent: def.agent,
            block: def.block,
        };
        let invalid = |reason: String| Error::Invalid(format!("goal `{}`: {reason}", def.id));
        if !Env::new(def.env).is_valid(&target) {
            return Err(invalid(format!("target {target:?} is not a valid {} state", def.env)));
        }
        if !def.env.has_block() && def.entities != GoalEntities::Agent {
            return Err(invalid("only agent goals exist without a block".into()));
        }
        if !(def.tolerance > 0.0 && def.tolerance.is_finite()) {
            return Err(invalid(format!("tolerance {} must be positive", def.tolerance)));
        }
        Ok(Self {
            id: def.id.clone(),
            env: def.env,
            target,
            entities: def.entities,
            tolerance: def.tolerance,
            image: render(def.env, &target),
        })
    }

    pub fn def(&self) -> GoalDef {
        GoalDef {
            id: self.id.clone(),
            env: self.env,
            agent: self.target.agent,
            block: self.target.block,
            entities: self.entities,
            tolerance: self.tolerance,
        }
    }

    /// Success predicate without the environment check.
    pub(crate) fn satisfied(&self, state: &EnvState) -> bool {
        let near = |a: [f64; 2], b: [f64; 2]| {
            (a[0] - b[0]).abs() <= self.tolerance && (a[1] - b[1]).abs() <= self.tolerance
        };
        let agent = || near(state.agent, self.target.agent);
        let block = || match (state.block, self.target.block) {
            (Some(a), Some(b)) => near(a, b),
            _ => false,
        };
        match self.entities {
            GoalEntities::Agent => agent(),
            GoalEntities::Block => block(),
            GoalEntities::Both => agent() && block(),
        }
    }
}

impl Env {
    /// Whether every constrained entity is within tolerance of its target.
    pub fn success(&self, state: &EnvState, goal: &GoalSpec) -> Result<bool> {
        if goal.env != self.kind() {
            return Err(Error::EnvMismatch {
                expected: self.kind().name().to_string(),
                found: goal.env.name().to_string(),
            });
        }
        Ok(goal.satisfied(state))
    }
}

/// The fixed 8-goal benchmark of each environment.
pub fn benchmark_goals(kind: EnvKind) -> Vec<GoalSpec> {
    let def = |id: String, agent: [f64; 2], block: Option<[f64; 2]>, entities| GoalDef {
        id,
        env: kind,
        agent,
        block,
        entities,
        tolerance: DEFAULT_TOLERANCE,
    };
    let defs: Vec<GoalDef> = match kind {
        EnvKind::PointRooms => {
            let origins = [[0.0, 0.0], [9.0 / 16.0, 0.0], [0.0, 9.0 / 16.0], [9.0 / 16.0, 9.0 / 16.0]];
            origins
                .iter()
                .enumerate()
                .flat_map(|(room, o)| {
                    [
                        def(format!("room{room}_a"), [o[0] + 0.1, o[1] + 0.32], None, GoalEntities::Agent),
                        def(format!("room{room}_b"), [o[0] + 0.32, o[1] + 0.1], None, GoalEntities::Agent),
                    ]
                })
                .collect()
        }
        EnvKind::PushBlock => {
            let mut defs = Vec::new();
            for (i, b) in [[0.3, 0.3], [0.7, 0.3], [0.3, 0.7], [0.7, 0.7]].into_iter().enumerate() {
                let agent = [b[0] - 2.0 * HALF_SIZE, b[1]];
                defs.push(def(format!("block_{i}"), agent, Some(b), GoalEntities::Block));
            }
            for (i, a) in [[0.15, 0.85], [0.85, 0.15]].into_iter().enumerate() {
                defs.push(def(format!("agent_{i}"), a, Some([0.5, 0.5]), GoalEntities::Agent));
            }
            for (i, (a, b)) in [([0.2, 0.5], [0.5, 0.2]), ([0.8, 0.5], [0.5, 0.8])]
                .into_iter()
                .enumerate()
            {
                defs.push(def(format!("joint_{i}"), a, Some(b), GoalEntities::Both));
            }
            defs
        }
    };
    defs.iter()
        .map(|d| GoalSpec::from_def(d).expect("benchmark goals are valid"))
        .collect()
}
