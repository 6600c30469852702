//! JSON run configuration for `simulate` and `replay`.

use crate::mechanisms::{MechanismKind, MechanismParams};
use crate::model::{Key, Tick, WriterId};
use crate::runner::Workload;
use crate::simnet::SimConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA: &str = "syncframe/run-config/v1";
pub const SEED_ENV: &str = "SYNCFRAME_SEED";
pub const CHECKERS: [&str; 5] = ["agreement", "linearizable", "progress", "sec", "split-brain"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("field `{field}`: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), msg: msg.to_string() }
}

/// One client request; a missing `value` makes it a read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadItem {
    pub writer: WriterId,
    pub key: Key,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
    pub issue_tick: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub mechanism: MechanismKind,
    #[serde(default)]
    pub params: MechanismParams,
    pub sim: SimConfig,
    pub workload: Vec<WorkloadItem>,
    #[serde(default)]
    pub checkers: BTreeSet<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("syncframe-out")
}

impl RunConfig {
    pub fn new(mechanism: MechanismKind, sim: SimConfig) -> Self {
        RunConfig {
            schema: SCHEMA.into(),
            mechanism,
            params: MechanismParams::default(),
            sim,
            workload: Vec::new(),
            checkers: BTreeSet::new(),
            output_dir: default_output_dir(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| ConfigError::Parse { line: e.line(), column: e.column(), msg: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, applies the seed override from the environment, and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        let mut cfg = Self::parse(&text)?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.sim.seed = seed.trim().parse().map_err(|_| invalid(SEED_ENV, format!("not an unsigned integer: {seed:?}")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA {
            return Err(invalid("schema", format!("expected {SCHEMA:?}, got {:?}", self.schema)));
        }
        self.sim.validate().map_err(|e| invalid("sim", e))?;
        self.params.validate(self.mechanism, self.sim.n).map_err(|e| invalid("params", e))?;
        for (i, item) in self.workload.iter().enumerate() {
            if item.writer >= self.sim.n {
                return Err(invalid(format!("workload[{i}].writer"), format!("{} is not below n={}", item.writer, self.sim.n)));
            }
            if item.issue_tick >= self.sim.max_ticks {
                return Err(invalid(
                    format!("workload[{i}].issue_tick"),
                    format!("{} is not below max_ticks={}", item.issue_tick, self.sim.max_ticks),
                ));
            }
        }
        if let Some(c) = self.checkers.iter().find(|c| !CHECKERS.contains(&c.as_str())) {
            return Err(invalid("checkers", format!("unknown checker {c:?}; known: {}", CHECKERS.join(", "))));
        }
        Ok(())
    }

    pub fn to_workload(&self) -> Workload {
        self.workload.iter().fold(Workload::new(), |w, item| match item.value {
            Some(v) => w.write(item.writer, item.key, v, item.issue_tick),
            None => w.read(item.writer, item.key, item.issue_tick),
        })
    }

    pub fn with_workload(mut self, workload: &Workload) -> Self {
        self.workload = workload
            .requests
            .iter()
            .map(|r| WorkloadItem {
                writer: r.writer,
                key: r.key,
                value: match &r.op {
                    crate::model::OpKind::Write(v) => v.as_int(),
                    crate::model::OpKind::Read => None,
                },
                issue_tick: r.issue_tick,
            })
            .collect();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> String {
        let cfg = RunConfig::new(MechanismKind::Paxos, SimConfig::new(3, 7));
        cfg.with_workload(&Workload::new().write(0, 0, 1, 0).read(1, 0, 5)).to_json()
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::parse(&sample()).unwrap();
        assert_eq!(cfg.workload.len(), 2);
        assert_eq!(cfg.to_workload().len(), 2);
        assert_eq!(RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn writer_out_of_range() {
        let text = sample().replace("\"writer\":1", "\"writer\":3");
        match RunConfig::parse(&text) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "workload[1].writer"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        assert!(matches!(RunConfig::parse("{\n  \"schema\": \n}"), Err(ConfigError::Parse { line: 3, .. })));
    }

    #[test]
    fn unknown_checker() {
        let text = sample().replace("\"checkers\":[]", "\"checkers\":[\"magic\"]");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Invalid { .. })));
    }
}
