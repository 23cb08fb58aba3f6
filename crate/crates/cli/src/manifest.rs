//! Run manifests and the comparison of two runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, Pipeline};
use crate::error::{CliError, Result};

/// A headline number. Monte Carlo numbers carry their standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

impl Headline {
    pub fn exact(value: f64) -> Self {
        Headline { value, std_error: None }
    }

    pub fn estimate(value: f64, std_error: f64) -> Self {
        Headline {
            value,
            std_error: Some(std_error),
        }
    }
}

pub type Headlines = BTreeMap<String, Headline>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pipeline: Pipeline,
    pub version: String,
    /// Fully resolved config, sufficient to repeat the run.
    pub config: ExperimentConfig,
    pub headline: Headlines,
    pub artifacts: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    /// Reads a manifest file, or `manifest.json` inside a run directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file: PathBuf = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let file = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&file, text + "\n").map_err(|e| CliError::io(&file, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Identical,
    /// Monte Carlo values within three combined standard errors.
    Consistent,
    Inconsistent,
    /// Deterministic values that differ.
    Changed,
    /// Present in only one of the runs.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineDiff {
    pub key: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigChange {
    /// Dotted path into the config, e.g. `domain.n`.
    pub path: String,
    pub a: Value,
    pub b: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub pipeline: Pipeline,
    pub config_changes: Vec<ConfigChange>,
    pub headline: Vec<HeadlineDiff>,
    /// No headline differs beyond its statistical tolerance.
    pub consistent: bool,
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&path, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn compare(a: &Headline, b: &Headline) -> Verdict {
    if a.value.to_bits() == b.value.to_bits() && a.std_error.map(f64::to_bits) == b.std_error.map(f64::to_bits) {
        return Verdict::Identical;
    }
    match (a.std_error, b.std_error) {
        (Some(sa), Some(sb)) => {
            if (a.value - b.value).abs() <= 3.0 * sa.hypot(sb) {
                Verdict::Consistent
            } else {
                Verdict::Inconsistent
            }
        }
        _ => Verdict::Changed,
    }
}

/// Structural diff of configs and headline numbers. Runs of different
/// pipelines cannot be compared.
pub fn diff_runs(a: &Manifest, b: &Manifest) -> Result<DiffReport> {
    if a.pipeline != b.pipeline {
        return Err(CliError::Usage(format!(
            "cannot compare a {} run with a {} run",
            a.pipeline.name(),
            b.pipeline.name()
        )));
    }
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    flatten("", &serde_json::to_value(&a.config)?, &mut fa);
    flatten("", &serde_json::to_value(&b.config)?, &mut fb);
    let paths: BTreeSet<&String> = fa.keys().chain(fb.keys()).collect();
    let config_changes = paths
        .into_iter()
        .filter_map(|p| {
            let (va, vb) = (fa.get(p).cloned().unwrap_or(Value::Null), fb.get(p).cloned().unwrap_or(Value::Null));
            (va != vb).then(|| ConfigChange { path: p.clone(), a: va, b: vb })
        })
        .collect();

    let keys: BTreeSet<&String> = a.headline.keys().chain(b.headline.keys()).collect();
    let headline: Vec<HeadlineDiff> = keys
        .into_iter()
        .map(|k| {
            let (ha, hb) = (a.headline.get(k), b.headline.get(k));
            let verdict = match (ha, hb) {
                (Some(x), Some(y)) => compare(x, y),
                _ => Verdict::Missing,
            };
            HeadlineDiff {
                key: k.clone(),
                a: ha.map(|h| h.value),
                b: hb.map(|h| h.value),
                delta: ha.zip(hb).map(|(x, y)| y.value - x.value),
                verdict,
            }
        })
        .collect();
    let consistent = headline
        .iter()
        .all(|d| matches!(d.verdict, Verdict::Identical | Verdict::Consistent));
    Ok(DiffReport {
        pipeline: a.pipeline,
        config_changes,
        headline,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistical_rule() {
        let a = Headline::estimate(1.0, 0.01);
        assert_eq!(compare(&a, &Headline::estimate(1.04, 0.01)), Verdict::Consistent);
        assert_eq!(compare(&a, &Headline::estimate(1.05, 0.01)), Verdict::Inconsistent);
        assert_eq!(compare(&a, &a), Verdict::Identical);
        assert_eq!(compare(&Headline::exact(1.0), &Headline::exact(1.5)), Verdict::Changed);
    }

    #[test]
    fn flatten_nested_objects() {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::json!({"a": {"b": 1, "c": [1, 2]}, "d": "x"}), &mut out);
        assert_eq!(out.len(), 3);
        assert_eq!(out["a.b"], serde_json::json!(1));
    }
}
