//! JSON inputs: the training configuration and goal benchmark files.
//!
//! A goal file names one environment and lists its goals by target
//! coordinates; goal images are rendered from the targets on load.
//!
//! ```json
//! {
//!   "env": "push_block",
//!   "goals": [
//!     { "id": "block_0", "agent": [0.175, 0.3], "block": [0.3, 0.3], "entities": "block" }
//!   ]
//! }
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use lexa_core::envs::{benchmark_goals, EnvKind, GoalDef, GoalEntities, GoalSpec, DEFAULT_TOLERANCE};
use lexa_core::orchestrator::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, LexaError, Result};

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|source| LexaError::Document {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and validates a training configuration.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let cfg: TrainConfig = parse(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalEntry {
    pub id: String,
    pub agent: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<[f64; 2]>,
    pub entities: GoalEntities,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalFile {
    pub env: EnvKind,
    pub goals: Vec<GoalEntry>,
}

impl GoalFile {
    pub fn benchmark(env: EnvKind) -> Self {
        Self {
            env,
            goals: benchmark_goals(env)
                .iter()
                .map(|g| {
                    let d = g.def();
                    GoalEntry {
                        id: d.id,
                        agent: d.agent,
                        block: d.block,
                        entities: d.entities,
                        tolerance: d.tolerance,
                    }
                })
                .collect(),
        }
    }

    /// Renders every goal; ids must be unique.
    pub fn specs(&self) -> Result<Vec<GoalSpec>> {
        let mut seen = HashSet::new();
        self.goals
            .iter()
            .map(|g| {
                if !seen.insert(g.id.as_str()) {
                    return Err(LexaError::Usage(format!("duplicate goal id `{}`", g.id)));
                }
                let def = GoalDef {
                    id: g.id.clone(),
                    env: self.env,
                    agent: g.agent,
                    block: g.block,
                    entities: g.entities,
                    tolerance: g.tolerance,
                };
                Ok(GoalSpec::from_def(&def).map_err(|e| LexaError::Usage(e.to_string()))?)
            })
            .collect()
    }
}

pub fn load_goals(path: &Path) -> Result<GoalFile> {
    parse(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_file_round_trips_to_identical_goals() {
        for env in [EnvKind::PointRooms, EnvKind::PushBlock] {
            let file = GoalFile::benchmark(env);
            let json = serde_json::to_string_pretty(&file).unwrap();
            let back: GoalFile = serde_json::from_str(&json).unwrap();
            assert_eq!(back.specs().unwrap(), benchmark_goals(env));
        }
    }

    #[test]
    fn unknown_fields_and_duplicates_are_rejected() {
        let extra = r#"{"env":"point_rooms","goals":[],"colour":1}"#;
        assert!(serde_json::from_str::<GoalFile>(extra).is_err());
        let dup = r#"{"env":"point_rooms","goals":[
            {"id":"a","agent":[0.2,0.2],"entities":"agent"},
            {"id":"a","agent":[0.3,0.2],"entities":"agent"}]}"#;
        let file: GoalFile = serde_json::from_str(dup).unwrap();
        assert!(matches!(file.specs(), Err(LexaError::Usage(_))));
    }

    #[test]
    fn missing_env_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 3}"#).unwrap();
        let err = load_config(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("env"), "{err}");
        fs::write(&path, r#"{"env": "point_rooms", "batch_size": 3}"#).unwrap();
        let err = load_config(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("batch_size"), "{err}");
    }
}
