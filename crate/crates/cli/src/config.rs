//! `--config` support: values from a JSON file are appended as flags unless
//! the command line already sets them.
//!
//! ```json
//! { "seed": 7, "train-mlssl": { "lambda": 0.3, "knn": 10 } }
//! ```
//!
//! Top-level scalars are global flags; objects keyed by subcommand hold that
//! subcommand's flags.

use serde_json::Value;
use stage_core::StageError;

const SUBCOMMANDS: [&str; 8] = [
    "ingest",
    "synth",
    "train-aemtd",
    "complete",
    "train-mlssl",
    "baseline",
    "predict",
    "evaluate",
];

fn flag_value(argv: &[String], flag: &str) -> Option<String> {
    let prefix = format!("{flag}=");
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == flag {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix(&prefix).map(str::to_string)
        }
    })
}

fn has_flag(argv: &[String], flag: &str) -> bool {
    let prefix = format!("{flag}=");
    argv.iter().any(|a| a == flag || a.starts_with(&prefix))
}

fn render(key: &str, v: &Value) -> Result<String, StageError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => items
            .iter()
            .map(|x| render(key, x))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.join(",")),
        _ => Err(StageError::Validation(format!("config value for `{key}` must be a scalar or list"))),
    }
}

fn append(argv: &mut Vec<String>, key: &str, v: &Value) -> Result<(), StageError> {
    let flag = format!("--{}", key.replace('_', "-"));
    if !has_flag(argv, &flag) {
        let value = render(key, v)?;
        argv.push(flag);
        argv.push(value);
    }
    Ok(())
}

pub fn merge_config(mut argv: Vec<String>) -> Result<Vec<String>, StageError> {
    let Some(path) = flag_value(&argv, "--config") else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)?;
    let root: Value = serde_json::from_str(&text)?;
    let Value::Object(root) = root else {
        return Err(StageError::Validation("config file must hold a JSON object".into()));
    };
    let sub = argv.iter().skip(1).find(|a| SUBCOMMANDS.contains(&a.as_str())).cloned();
    for (key, v) in &root {
        match v {
            Value::Object(section) => {
                if sub.as_deref() == Some(key.as_str()) {
                    for (k, v) in section {
                        append(&mut argv, k, v)?;
                    }
                }
            }
            _ => append(&mut argv, key, v)?,
        }
    }
    Ok(argv)
}
