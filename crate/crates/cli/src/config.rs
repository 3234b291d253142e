//! `--config FILE`: a JSON object whose keys are long flag names.
//!
//! The object is expanded into flags placed right after the subcommand, so
//! anything given explicitly on the command line overrides it.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde_json::Value;

fn config_path(args: &[OsString]) -> Result<Option<(usize, PathBuf)>> {
    for (i, a) in args.iter().enumerate() {
        let Some(s) = a.to_str() else { continue };
        if s == "--config" {
            let path = args.get(i + 1).context("--config needs a file argument")?;
            return Ok(Some((i, PathBuf::from(path))));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some((i, PathBuf::from(p))));
        }
    }
    Ok(None)
}

pub fn flags_from_json(value: &Value) -> Result<Vec<OsString>> {
    let Value::Object(map) = value else {
        bail!("config file must hold a JSON object");
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Number(n) => out.extend([flag.into(), n.to_string().into()]),
            Value::String(s) => out.extend([flag.into(), s.into()]),
            Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => Ok(s.clone()),
                        Value::Number(n) => Ok(n.to_string()),
                        other => bail!("config key `{key}`: unsupported list entry {other}"),
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.extend([flag.into(), parts.join(",").into()]);
            }
            Value::Object(_) => bail!("config key `{key}`: nested objects are not flags"),
        }
    }
    Ok(out)
}

/// Returns `args` with the config file's flags spliced in after the subcommand.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((at, path)) = config_path(&args)? else {
        return Ok(args);
    };
    let sub = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1)
        .filter(|&p| p < at)
        .context("--config must follow a subcommand")?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let extra = flags_from_json(&value)?;
    let mut out = args[..=sub].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}
