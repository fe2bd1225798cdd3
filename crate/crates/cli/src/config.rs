//! Flat TOML run configuration.
//!
//! A config file holds every training key plus the run options below, one
//! `key = value` per line. Unknown keys are errors. Later sources win:
//! defaults, then the file, then `--set key=value`, then dedicated flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nrkg::eval::SweepAxis;
use nrkg::training::TrainConfig;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use toml::{Table, Value};

/// Options that are not part of the training config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub records: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub folds: usize,
    /// Fold trained by `train`.
    pub fold: usize,
    /// Relation scored by link prediction during `cv`.
    pub link_relation: Option<String>,
    /// Relation scored by `linkpred`.
    pub relation: Option<String>,
    pub baseline_trials: usize,
    pub threads: usize,
    pub axis: Option<SweepAxis>,
    pub values: Option<Vec<f64>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            records: None,
            graph: None,
            checkpoint: None,
            out: None,
            folds: 6,
            fold: 0,
            link_relation: None,
            relation: None,
            baseline_trials: 100,
            threads: 0,
            axis: None,
            values: None,
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "records",
    "graph",
    "checkpoint",
    "out",
    "folds",
    "fold",
    "link_relation",
    "relation",
    "baseline_trials",
    "threads",
    "axis",
    "values",
];

/// Reads a TOML or JSON file into a table; no file gives an empty table.
pub fn read_table(path: Option<&Path>) -> Result<Table> {
    let Some(path) = path else { return Ok(Table::new()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        return Table::try_from(value).with_context(|| format!("config {} is not an object", path.display()));
    }
    text.parse()
        .with_context(|| format!("parsing config {}", path.display()))
}

/// Applies `key=value` overrides. Values are read as TOML, falling back to
/// a bare string.
pub fn apply_sets(table: &mut Table, sets: &[String]) -> Result<()> {
    for set in sets {
        let Some((key, raw)) = set.split_once('=') else {
            bail!("--set expects key=value, got {set:?}");
        };
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        table.insert(key.to_string(), value);
    }
    Ok(())
}

fn typed<T: DeserializeOwned>(table: Table, what: &str) -> Result<T> {
    table
        .try_into()
        .map_err(|e: toml::de::Error| anyhow::anyhow!("{what}: {}", e.message()))
}

/// Splits a flat table into the training config and the run options.
pub fn split(table: Table) -> Result<(TrainConfig, RunOptions)> {
    let (mut run, mut train) = (Table::new(), Table::new());
    for (key, value) in table {
        if value.is_table() || (value.is_array() && key != "values") {
            bail!("config key {key:?} must hold a single value");
        }
        if RUN_KEYS.contains(&key.as_str()) {
            run.insert(key, value);
        } else {
            train.insert(key, value);
        }
    }
    let train: TrainConfig = typed(train, "config")?;
    train.validate()?;
    Ok((train, typed(run, "config")?))
}

/// Any serializable config, for structured files such as synthetic specs.
pub fn parse<T: DeserializeOwned>(table: Table, what: &str) -> Result<T> {
    typed(table, what)
}

/// The effective configuration as a flat TOML document.
pub fn render(train: &TrainConfig, run: &RunOptions) -> Result<String> {
    let mut table = Table::try_from(train)?;
    table.extend(Table::try_from(run)?);
    Ok(toml::to_string(&table)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        text.parse().unwrap()
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = split(table("hiden = 3")).unwrap_err().to_string();
        assert!(err.contains("hiden"), "{err}");
    }

    #[test]
    fn keys_route_to_their_struct() {
        let (train, run) = split(table("hidden = 12\nfolds = 4\nvariant = \"mlp\"\nvalues = [0.0, 1.0]")).unwrap();
        assert_eq!(train.hidden, 12);
        assert_eq!(train.variant, nrkg::training::Variant::Mlp);
        assert_eq!(run.folds, 4);
        assert_eq!(run.values, Some(vec![0.0, 1.0]));
        assert_eq!(train.lr, TrainConfig::default().lr);
    }

    #[test]
    fn nested_tables_are_rejected() {
        assert!(split(table("[extra]\nhidden = 3")).is_err());
        assert!(split(table("hidden = [1, 2]")).is_err());
    }

    #[test]
    fn sets_override_and_fall_back_to_strings() {
        let mut t = table("hidden = 12");
        apply_sets(
            &mut t,
            &["hidden=20".into(), "link_relation=hasCrystalStructure".into()],
        )
        .unwrap();
        let (train, run) = split(t).unwrap();
        assert_eq!(train.hidden, 20);
        assert_eq!(run.link_relation.as_deref(), Some("hasCrystalStructure"));
        assert!(apply_sets(&mut Table::new(), &["novalue".into()]).is_err());
    }

    #[test]
    fn rendered_config_reads_back() {
        let train = TrainConfig {
            gamma_a: 0.5,
            ..Default::default()
        };
        let run = RunOptions {
            axis: Some(SweepAxis::MaskFraction),
            ..Default::default()
        };
        let (t2, r2) = split(render(&train, &run).unwrap().parse().unwrap()).unwrap();
        assert_eq!((t2, r2), (train, run));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(split(table("dropout = 1.5")).is_err());
    }
}
