//! Engine settings, shared by the command line and the bench harness.
//!
//! A config file holds `key = value` lines; `#` starts a comment. Keys are
//! the long flag names without dashes, with `-` or `_` accepted.

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::inverter::{BranchPolicy, CampaignConfig};
use crate::jumptab::DEFAULT_MAX_TABLE_SIZE;
use crate::mvm::{RunConfig, DEFAULT_BUDGET, DEFAULT_QUANTUM};
use crate::solver::SolverOptions;
use crate::symex::SymexConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown setting `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Toggles {
    pub slicing: bool,
    pub skip: bool,
    pub jumptables: bool,
    pub simplify: bool,
    pub context_switch: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            slicing: true,
            skip: true,
            jumptables: true,
            simplify: true,
            context_switch: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Paths {
    pub program: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub debug_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    pub jobs: usize,
    pub solver_timeout_ms: u64,
    pub solver_seed: u64,
    pub max_table_size: usize,
    pub quantum: u32,
    /// Invert branches in a shuffled order instead of trace order.
    pub random_order: bool,
    pub random_seed: u64,
    pub instruction_budget: u64,
    pub max_predicate_time: Option<Duration>,
    pub max_campaign_time: Option<Duration>,
    pub verify: bool,
    pub toggles: Toggles,
    pub paths: Paths,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            jobs: 1,
            solver_timeout_ms: 5000,
            solver_seed: 0,
            max_table_size: DEFAULT_MAX_TABLE_SIZE,
            quantum: DEFAULT_QUANTUM,
            random_order: false,
            random_seed: 0,
            instruction_budget: DEFAULT_BUDGET,
            max_predicate_time: None,
            max_campaign_time: None,
            verify: true,
            toggles: Toggles::default(),
            paths: Paths::default(),
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl Config {
    pub fn branch_policy(&self) -> BranchPolicy {
        if self.random_order {
            BranchPolicy::Random(self.random_seed)
        } else {
            BranchPolicy::Sequential
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            quantum: self.quantum,
            instruction_budget: self.instruction_budget,
        }
    }

    pub fn symex_config(&self) -> SymexConfig {
        SymexConfig {
            skip: self.toggles.skip,
            jumptables: self.toggles.jumptables,
            context_switch: self.toggles.context_switch,
            simplify: self.toggles.simplify,
            max_table_size: self.max_table_size,
            max_time: self.max_predicate_time,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            timeout: (self.solver_timeout_ms > 0).then(|| Duration::from_millis(self.solver_timeout_ms)),
            seed: self.solver_seed,
        }
    }

    pub fn campaign_config(&self) -> CampaignConfig {
        CampaignConfig {
            jobs: self.jobs.max(1),
            slicing: self.toggles.slicing,
            solver: self.solver_options(),
            verify: self.verify,
            run: self.run_config(),
            max_time: self.max_campaign_time,
            dump_queries: self.paths.debug_dir.is_some(),
        }
    }

    /// Applies one setting. Toggles take a boolean, or are named with a
    /// `no-` prefix to turn them off.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let bad = || ConfigError::BadValue {
            key: key.clone(),
            value: value.to_string(),
        };
        let num = |v: &str| v.parse::<u64>().map_err(|_| bad());
        let secs = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|s| *s >= 0.0)
                .map(|s| (s > 0.0).then(|| Duration::from_secs_f64(s)))
                .ok_or_else(bad)
        };
        let flag = |v: &str| parse_bool(v).ok_or_else(bad);
        match key.as_str() {
            "jobs" => match num(value)? {
                0 => return Err(bad()),
                n => self.jobs = n as usize,
            },
            "solver-timeout" => self.solver_timeout_ms = num(value)?,
            "solver-seed" => self.solver_seed = num(value)?,
            "max-table-size" => self.max_table_size = num(value)? as usize,
            "quantum" => self.quantum = num(value)?.clamp(1, u32::MAX as u64) as u32,
            "instruction-budget" => self.instruction_budget = num(value)?,
            "branch-policy" => {
                self.random_order = match value {
                    "seq" | "sequential" => false,
                    "random" => true,
                    _ => return Err(bad()),
                }
            }
            "random-seed" => self.random_seed = num(value)?,
            "max-predicate-time" => self.max_predicate_time = secs(value)?,
            "max-campaign-time" => self.max_campaign_time = secs(value)?,
            "verify" => self.verify = flag(value)?,
            "slicing" => self.toggles.slicing = flag(value)?,
            "skip" => self.toggles.skip = flag(value)?,
            "jumptables" => self.toggles.jumptables = flag(value)?,
            "simplify" => self.toggles.simplify = flag(value)?,
            "context-switch" => self.toggles.context_switch = flag(value)?,
            "program" => self.paths.program = Some(value.into()),
            "input" => self.paths.input = Some(value.into()),
            "output-dir" => self.paths.output_dir = Some(value.into()),
            "debug-dir" => self.paths.debug_dir = Some(value.into()),
            k => {
                if let Some(t) = k.strip_prefix("no-") {
                    if matches!(t, "slicing" | "skip" | "jumptables" | "simplify" | "context-switch") {
                        let on = !flag(value)?;
                        return self.set(t, if on { "true" } else { "false" });
                    }
                }
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
        }
        Ok(())
    }

    pub fn parse_into(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_files_and_toggles() {
        let mut c = Config::default();
        c.parse_into("# campaign\njobs = 4\nsolver_timeout=250\nno-slicing = true\nbranch-policy = random\nrandom-seed = 9\nmax-campaign-time = 1.5\n")
            .unwrap();
        assert_eq!(c.jobs, 4);
        assert_eq!(c.solver_timeout_ms, 250);
        assert!(!c.toggles.slicing);
        assert_eq!(c.branch_policy(), BranchPolicy::Random(9));
        assert_eq!(c.max_campaign_time, Some(Duration::from_millis(1500)));
        assert_eq!(c.campaign_config().solver.timeout, Some(Duration::from_millis(250)));
        c.set("slicing", "on").unwrap();
        assert!(c.toggles.slicing);
    }

    #[test]
    fn rejects_bad_settings() {
        let mut c = Config::default();
        assert_eq!(c.parse_into("jobs 4"), Err(ConfigError::Syntax { line: 1 }));
        assert_eq!(c.set("colour", "red"), Err(ConfigError::UnknownKey("colour".into())));
        assert!(matches!(c.set("jobs", "0"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.set("skip", "maybe"), Err(ConfigError::BadValue { .. })));
        assert_eq!(c, Config::default());
    }
}
