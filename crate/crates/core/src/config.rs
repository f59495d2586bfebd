//! Layered run configuration: built-in defaults, then a TOML file, then
//! `block.key=value` overrides, then `AUTOALIGN_CFG__BLOCK__KEY` environment
//! variables. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::env::{CouplingModel, EnvConfig, MdpConfig, RewardConfig};
use crate::error::{Error, Result};
use crate::heuristic::HeuristicConfig;
use crate::metrics::EVAL_WINDOW_S;
use crate::rl::SacConfig;
use crate::spdc::CrystalConfig;

pub const ENV_PREFIX: &str = "AUTOALIGN_CFG__";

/// Paired-evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub trials: u64,
    /// Calibration-time budget per trial, s.
    pub budget_s: f64,
    pub n_thresholds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            budget_s: EVAL_WINDOW_S,
            n_thresholds: 361,
        }
    }
}

/// Temperature-sweep settings of `spdc-scan`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub t_min_c: f64,
    pub t_max_c: f64,
    pub steps: usize,
    pub grid_points: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            t_min_c: 0.0,
            t_max_c: 80.0,
            steps: 81,
            grid_points: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub crystal: CrystalConfig,
    pub coupling: CouplingModel,
    pub reward: RewardConfig,
    pub mdp: MdpConfig,
    pub heuristic: HeuristicConfig,
    pub sac: SacConfig,
    pub eval: EvalConfig,
    pub scan: ScanConfig,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses a scalar or array literal; bare words become strings.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    doc.parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(base: &mut Table, overlay: Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(root: &mut Table, dotted: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(cfg_err(format!("malformed key `{dotted}`")));
    }
    let (last, blocks) = parts.split_last().expect("non-empty split");
    let mut table = root;
    for b in blocks {
        table = match table
            .entry(b.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
        {
            Value::Table(t) => t,
            _ => return Err(cfg_err(format!("`{b}` in `{dotted}` is not a block"))),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            coupling: self.coupling,
            reward: self.reward,
            mdp: self.mdp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| cfg_err(e.to_string());
        self.crystal.validate().map_err(wrap)?;
        self.env_config().validate().map_err(wrap)?;
        self.heuristic.validate().map_err(wrap)?;
        self.sac.validate().map_err(wrap)?;
        if self.eval.trials == 0 || !(self.eval.budget_s > 0.0) || self.eval.n_thresholds < 2 {
            return Err(cfg_err(
                "eval: trials >= 1, budget_s > 0 and n_thresholds >= 2 required",
            ));
        }
        if !(self.scan.t_min_c < self.scan.t_max_c) || self.scan.steps == 0 {
            return Err(cfg_err("scan: t_min_c < t_max_c and steps >= 1 required"));
        }
        Ok(())
    }

    /// Strict parse of a complete or partial TOML document over the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::resolve(Some(text), &[], std::iter::empty())
    }

    /// Applies every layer in precedence order and validates the result.
    ///
    /// `overrides` are `block.key=value` strings; `env_vars` are scanned for
    /// `AUTOALIGN_CFG__BLOCK__KEY` names.
    pub fn resolve<I>(file: Option<&str>, overrides: &[String], env_vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table =
            Table::try_from(RunConfig::default()).map_err(|e| cfg_err(e.to_string()))?;
        if let Some(text) = file {
            let file_table: Table = text
                .parse()
                .map_err(|e| cfg_err(format!("config file: {e}")))?;
            merge(&mut table, file_table);
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, key, parse_value(value.trim()))?;
        }
        let mut env: Vec<(String, String)> = env_vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(ENV_PREFIX)
                    .map(|rest| (rest.to_lowercase().replace("__", "."), v))
            })
            .collect();
        env.sort();
        for (key, value) in env {
            set_path(&mut table, &key, parse_value(value.trim()))?;
        }
        let config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| cfg_err(e.to_string()))
    }
}
