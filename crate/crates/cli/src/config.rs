use std::path::Path;

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::{DomainContext, Failure};

/// Fills flags missing from the command line with values from a JSON config
/// file. Keys are flag names without dashes; unknown keys are rejected.
pub fn merge<T: Serialize + DeserializeOwned>(args: T, path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display())).usage()?;
    let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display())).usage()?;
    let Value::Object(file) = file else {
        return Err(Failure::Usage(anyhow!("config {} must be a JSON object", path.display())));
    };
    let Value::Object(mut flags) = serde_json::to_value(&args).expect("flags serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    for (key, value) in file {
        let unset = matches!(flags.get(&key), Some(Value::Null | Value::Bool(false)) | None);
        if unset {
            flags.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(flags)).with_context(|| format!("config {}", path.display())).usage()
}
