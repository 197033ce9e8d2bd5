//! TOML configuration files.
//!
//! A pipeline config file starts from a named preset (`outdoor` unless
//! `preset` says otherwise) and overrides individual keys. The GNC
//! parameters may be written at the top level (`cbar = 0.15`) or inside a
//! `[gnc]` table.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;

const GNC_KEYS: [&str; 5] = ["cbar", "kappa", "max_iters", "cost_tol", "sigma_normalized"];

fn merge(base: &mut Table, overrides: Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

pub fn parse_pipeline_config(text: &str) -> Result<PipelineConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    pipeline_config_from_table(table)
}

/// Same as [`parse_pipeline_config`] for an already parsed table.
pub fn pipeline_config_from_table(mut table: Table) -> Result<PipelineConfig> {
    let preset = match table.remove("preset") {
        None => "outdoor".to_string(),
        Some(Value::String(s)) => s,
        Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
    };
    let base = PipelineConfig::preset(&preset).ok_or_else(|| Error::Config(format!("unknown preset '{preset}'")))?;

    let mut gnc = match table.remove("gnc") {
        None => Table::new(),
        Some(Value::Table(t)) => t,
        Some(_) => return Err(Error::Config("gnc must be a table".into())),
    };
    for key in GNC_KEYS {
        if let Some(v) = table.remove(key) {
            gnc.insert(key.to_string(), v);
        }
    }
    table.insert("gnc".into(), Value::Table(gnc));

    let mut merged = Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut merged, table);
    let config: PipelineConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_pipeline_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    parse_pipeline_config(&read(path.as_ref())?)
}

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))
}
