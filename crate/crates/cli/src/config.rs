//! Run configuration: a system file, optionally wrapped with probe and solver settings.

use std::path::Path;

use serde_json::{Map, Value};

use semiprop::{Error, PotentialSpec, Result};

/// Settings read from `--config`; every field except the system may be overridden by flags.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub system: Option<PotentialSpec>,
    pub t: Option<f64>,
    pub q0: Option<Vec<f64>>,
    pub q1: Option<Vec<f64>>,
    pub loops: Option<usize>,
    pub tol: Option<f64>,
    pub quad_tol: Option<f64>,
    pub fd_step: Option<f64>,
    pub seed: Option<u64>,
}

const RUN_FIELDS: [&str; 9] = ["system", "t", "q0", "q1", "loops", "tol", "quad_tol", "fd_step", "seed"];

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("$", format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| config_err("$", e.to_string()))?;
        Self::from_value(&value)
    }

    /// Accepts either a bare system (`{"n": …, "C": …, "B": …}`) or `{"system": {…}, "t": …, …}`.
    pub fn from_value(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| config_err("$", "expected an object"))?;
        if !obj.contains_key("system") {
            return Ok(Self {
                system: Some(PotentialSpec::from_json_value(value)?),
                ..Self::default()
            });
        }
        if let Some(key) = obj.keys().find(|k| !RUN_FIELDS.contains(&k.as_str())) {
            return Err(config_err(key, "unknown field"));
        }
        let system = PotentialSpec::from_json_value(&obj["system"]).map_err(|e| match e {
            Error::Config { path, message } => config_err(&format!("system.{path}"), message),
            other => other,
        })?;
        Ok(Self {
            system: Some(system),
            t: positive(obj, "t")?,
            q0: vector(obj, "q0")?,
            q1: vector(obj, "q1")?,
            loops: unsigned(obj, "loops")?.map(|v| v as usize),
            tol: positive(obj, "tol")?,
            quad_tol: positive(obj, "quad_tol")?,
            fd_step: positive(obj, "fd_step")?,
            seed: unsigned(obj, "seed")?,
        })
    }
}

fn positive(obj: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => match v.as_f64() {
            Some(x) if x > 0.0 && x.is_finite() => Ok(Some(x)),
            _ => Err(config_err(key, "expected a positive number")),
        },
    }
}

fn unsigned(obj: &Map<String, Value>, key: &str) -> Result<Option<u64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| config_err(key, "expected a non-negative integer")),
    }
}

fn vector(obj: &Map<String, Value>, key: &str) -> Result<Option<Vec<f64>>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| v.as_f64().ok_or_else(|| config_err(&format!("{key}[{i}]"), "expected a number")))
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(_) => Err(config_err(key, "expected an array of numbers")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use semiprop::Potential;
    use serde_json::json;

    #[test]
    fn bare_system_and_wrapped_run() {
        let bare = RunConfig::from_value(&json!({"n": 1, "C": [{"c": 1.0, "e": [4]}]})).unwrap();
        assert_eq!(bare.system.unwrap().dim(), 1);
        let run = RunConfig::from_value(&json!({
            "system": {"n": 2, "C": [{"c": 0.5, "e": [2, 0]}]},
            "t": 0.5, "q0": [0.0, 1.0], "loops": 2, "seed": 7
        }))
        .unwrap();
        assert_eq!(run.q0, Some(vec![0.0, 1.0]));
        assert_eq!((run.loops, run.seed), (Some(2), Some(7)));
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_value(&json!({"system": {"n": 2, "C": [{"c": 1.0, "e": [4]}]}})).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path.starts_with("system.C[0]")), "{e}");
        let e = RunConfig::from_value(&json!({"system": {"n": 1}, "t": -1.0})).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "t"));
        let e = RunConfig::from_value(&json!({"system": {"n": 1}, "q1": [0.0, "x"]})).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "q1[1]"));
        let e = RunConfig::from_value(&json!({"system": {"n": 1}, "speed": 1})).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "speed"));
    }
}
