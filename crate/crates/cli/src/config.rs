//! Flat `key = value` run configuration.
//!
//! Training keys are written bare (`tau = 80`); the other sections use a
//! prefix (`grid.tau = 1,10,20`, `eval.length = 40000`,
//! `attractors.init_points = 100`). Lists are comma-separated.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dsr_core::attractor::AttractorOptions;
use dsr_core::evaluation::EvalOptions;
use dsr_core::models::Variant;
use dsr_core::training::{SweepGrid, TrainingConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// File name of the resolved configuration inside a run directory.
pub const RESOLVED_FILE: &str = "run_config.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Benchmark name; data files are `<data>/<dataset>_{train,test}`.
    pub dataset: String,
    pub data: PathBuf,
    /// Multiplies the training schedule.
    pub scale: f64,
    pub workers: usize,
    /// Checkpoint directory for `eval` and `attractors`.
    pub checkpoint: Option<PathBuf>,
    /// Finished sweep directory for `tauopt`.
    pub sweep: Option<PathBuf>,
    /// Steps of the forced trajectory used by `tauopt`.
    pub tauopt_steps: usize,
    pub train: TrainingConfig,
    pub grid: SweepGrid,
    pub eval: EvalOptions,
    pub attractors: AttractorOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainingConfig::default();
        Self {
            dataset: "doublewell".into(),
            data: PathBuf::from("data"),
            scale: 1.0,
            workers: 1,
            checkpoint: None,
            sweep: None,
            tauopt_steps: 1000,
            grid: SweepGrid::default_for(train.variant),
            train,
            eval: EvalOptions::default(),
            attractors: AttractorOptions::default(),
        }
    }
}

const SECTIONS: [&str; 4] = ["train", "grid", "eval", "attractors"];

fn json_path(key: &str) -> Vec<String> {
    let parts: Vec<String> = key.split('.').map(str::to_string).collect();
    let top = ["dataset", "data", "scale", "workers", "checkpoint", "sweep", "tauopt_steps"];
    if SECTIONS[1..].contains(&parts[0].as_str()) || (parts.len() == 1 && top.contains(&key)) {
        parts
    } else {
        std::iter::once("train".to_string()).chain(parts).collect()
    }
}

fn lookup<'a>(root: &'a mut Value, path: &[String]) -> Option<&'a mut Value> {
    path.iter().try_fold(root, |v, k| v.as_object_mut()?.get_mut(k))
}

/// Parses one raw value against the shape of the default it replaces.
fn parse_value(raw: &str, like: &Value) -> Value {
    let one = |s: &str| serde_json::from_str::<Value>(s).unwrap_or_else(|_| Value::String(s.to_string()));
    match like {
        Value::Array(_) if raw.trim().is_empty() => Value::Array(vec![]),
        Value::Array(_) => Value::Array(raw.split(',').map(|s| one(s.trim())).collect()),
        Value::String(_) => Value::String(raw.to_string()),
        // optional paths and strings default to null
        Value::Null if serde_json::from_str::<Value>(raw).is_err() => Value::String(raw.to_string()),
        _ => one(raw),
    }
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_flat(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string())),
            _ => bad.push(format!("line {}: expected key = value", i + 1)),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Usage(bad.join("; ")))
    }
}

impl RunConfig {
    /// Applies `entries` over the defaults. Every unknown key and every
    /// unparsable value is reported in one message.
    pub fn resolve(entries: &[(String, String)]) -> Result<Self, CliError> {
        let mut base = Self::default();
        // the grid defaults depend on the variant
        if let Some((_, v)) = entries.iter().rev().find(|(k, _)| k == "variant" || k == "train.variant") {
            let variant: Variant = serde_json::from_value(Value::String(v.clone()))
                .map_err(|_| CliError::Usage(format!("variant: unknown value '{v}'")))?;
            base.grid = SweepGrid::default_for(variant);
        }
        let defaults = serde_json::to_value(&base).expect("config serializes");
        let mut tree = defaults.clone();
        let mut problems = Vec::new();
        for (key, raw) in entries {
            let path = json_path(key);
            let Some(like) = lookup(&mut defaults.clone(), &path).cloned() else {
                problems.push(format!("unknown key '{key}'"));
                continue;
            };
            if like.is_object() {
                problems.push(format!("'{key}' is a section, not a key"));
                continue;
            }
            let value = parse_value(raw, &like);
            // check the key on its own so that every bad value is reported
            let mut probe = defaults.clone();
            *lookup(&mut probe, &path).expect("path exists") = value.clone();
            if let Err(e) = serde_json::from_value::<RunConfig>(probe) {
                problems.push(format!("{key} = {raw}: {e}"));
                continue;
            }
            *lookup(&mut tree, &path).expect("path exists") = value;
        }
        if !problems.is_empty() {
            return Err(CliError::Usage(problems.join("; ")));
        }
        serde_json::from_value(tree).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Every key of the resolved configuration, in the file syntax.
    pub fn to_flat(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut lines = BTreeMap::new();
        flatten(&tree, &mut Vec::new(), &mut lines);
        let mut s = String::new();
        for (k, v) in lines {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn train_path(&self) -> PathBuf {
        self.data.join(format!("{}_train", self.dataset))
    }

    pub fn test_path(&self) -> PathBuf {
        self.data.join(format!("{}_test", self.dataset))
    }

    /// Training configuration with the schedule scaled.
    pub fn scaled_training(&self) -> Result<TrainingConfig, CliError> {
        let cfg = self
            .train
            .clone()
            .scaled(self.scale)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(scalar).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn flatten(v: &Value, path: &mut Vec<String>, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(map) => flatten_map(map, path, out),
        Value::Null => {}
        other => {
            let key = if path[0] == "train" { path[1..].join(".") } else { path.join(".") };
            out.insert(key, scalar(other));
        }
    }
}

fn flatten_map(map: &Map<String, Value>, path: &mut Vec<String>, out: &mut BTreeMap<String, String>) {
    for (k, v) in map {
        path.push(k.clone());
        flatten(v, path, out);
        path.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(text: &str) -> Vec<(String, String)> {
        parse_flat(text).unwrap()
    }

    #[test]
    fn keys_map_onto_sections() {
        let c = RunConfig::resolve(&entries(
            "tau = 80\nencoder.dilations = 1,2\ngrid.seeds = 5\neval.prediction.k = 64\n# note\nworkers = 3\ndataset = lorenz",
        ))
        .unwrap();
        assert_eq!(c.train.tau, 80);
        assert_eq!(c.train.encoder.dilations, vec![1, 2]);
        assert_eq!(c.grid.seeds, vec![5]);
        assert_eq!(c.eval.prediction.k, 64);
        assert_eq!(c.workers, 3);
        assert_eq!(c.dataset, "lorenz");
    }

    #[test]
    fn all_problems_are_listed() {
        let err = RunConfig::resolve(&entries("bogus = 1\ntau = many\ngrid.nope = 2\nlr = 0.1")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("tau = many") && msg.contains("grid.nope"));
        assert!(!msg.contains("lr"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::resolve(&entries(
            "variant = arlstm\ngamma = 0.4\nd_zhat = 3\ncheckpoint = runs/x/ckpt_5\nlog_sigma_eta2 = -2.5",
        ))
        .unwrap();
        assert_eq!(c.grid.gamma.len(), 6);
        let again = RunConfig::resolve(&parse_flat(&c.to_flat()).unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_flat(), c.to_flat());
    }

    #[test]
    fn malformed_lines_are_usage_errors() {
        assert!(parse_flat("just words").is_err());
        assert!(parse_flat("= 3").is_err());
        assert!(RunConfig::resolve(&entries("variant = nope")).is_err());
        assert!(RunConfig::resolve(&entries("eval = 3")).is_err());
    }
}
