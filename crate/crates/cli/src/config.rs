//! `--config <file.json>`: a JSON object whose entries stand in for flags.
//!
//! Top-level keys apply to whichever subcommand accepts them; an object
//! under a subcommand's name applies to that subcommand only. Flags given
//! on the command line win.
//!
//! ```json
//! { "seed": 7, "threads": 4, "train": { "dim": 300, "epochs": 5 } }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use clap::{Command, CommandFactory};
use serde_json::{Map, Value};

use crate::{Cli, CliError};

fn flag_value(argv: &[String], flag: &str) -> Option<String> {
    let eq = format!("{flag}=");
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == flag {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix(&eq).map(String::from)
        }
    })
}

fn has_flag(argv: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let eq = format!("{flag}=");
    argv.iter().any(|a| a == &flag || a.starts_with(&eq))
}

fn longs(cmd: &Command) -> BTreeSet<String> {
    cmd.get_arguments()
        .filter_map(|a| a.get_long())
        .map(String::from)
        .collect()
}

fn expand(key: &str, value: &Value, out: &mut Vec<String>) -> Result<(), CliError> {
    let flag = format!("--{key}");
    match value {
        Value::Bool(true) => out.push(flag),
        Value::Bool(false) | Value::Null => {}
        Value::String(s) => out.extend([flag, s.clone()]),
        Value::Number(n) => out.extend([flag, n.to_string()]),
        Value::Array(items) => {
            for item in items {
                expand(key, item, out)?;
            }
        }
        Value::Object(_) => {
            return Err(CliError::Usage(format!(
                "config key `{key}` must not be an object"
            )));
        }
    }
    Ok(())
}

/// Appends flags from the `--config` file to `argv`.
pub fn merge(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = flag_value(&argv, "--config") else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
    let config: Map<String, Value> = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {path} is not a JSON object: {e}")))?;

    let root = Cli::command();
    let subcommands: Vec<&Command> = root.get_subcommands().collect();
    let active = argv.iter().skip(1).find_map(|a| {
        subcommands
            .iter()
            .find(|c| c.get_name() == a.as_str())
            .copied()
    });
    let Some(active) = active else {
        return Ok(argv);
    };
    let mut accepted = longs(&root);
    accepted.extend(longs(active));
    let known: BTreeSet<String> = subcommands
        .iter()
        .flat_map(|c| longs(c))
        .chain(longs(&root))
        .collect();

    let normalize = |k: &str| k.replace('_', "-");
    let mut effective: BTreeMap<String, &Value> = BTreeMap::new();
    let mut section = None;
    for (key, value) in &config {
        let key = normalize(key);
        if let Some(sub) = subcommands.iter().find(|c| c.get_name() == key) {
            if sub.get_name() == active.get_name() {
                section = Some((key, value));
            }
        } else if accepted.contains(&key) {
            effective.insert(key, value);
        } else if !known.contains(&key) {
            return Err(CliError::Usage(format!(
                "unknown config key `{key}` in {path}"
            )));
        }
    }
    if let Some((name, value)) = section {
        let Value::Object(entries) = value else {
            return Err(CliError::Usage(format!(
                "config section `{name}` must be an object"
            )));
        };
        for (k, v) in entries {
            let k = normalize(k);
            if !accepted.contains(&k) {
                return Err(CliError::Usage(format!(
                    "`{name}` has no option `{k}` (config {path})"
                )));
            }
            effective.insert(k, v);
        }
    }
    let mut extra = Vec::new();
    for (key, value) in effective {
        if key != "config" && !has_flag(&argv, &key) {
            expand(&key, value, &mut extra)?;
        }
    }
    let mut argv = argv;
    argv.extend(extra);
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn with_config(json: &str, argv: &str) -> Result<Vec<String>, CliError> {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, json).unwrap();
        merge(args(&format!("{argv} --config {}", path.display())))
            .map(|v| v.into_iter().filter(|a| !a.ends_with("c.json")).collect())
    }

    #[test]
    fn fills_missing_flags_only() {
        let merged = with_config(
            r#"{"seed": 7, "align": {"normalize": true}, "train": {"dim": 300, "epochs": 9}, "dim": 5}"#,
            "driftscope train --run r --model sgns-op --epochs 2",
        )
        .unwrap();
        assert_eq!(
            merged,
            args("driftscope train --run r --model sgns-op --epochs 2 --config --dim 300 --seed 7")
        );
    }

    #[test]
    fn arrays_repeat_and_false_is_omitted() {
        let merged = with_config(
            r#"{"score": {"metric": ["cosine", "euclidean"], "json": false}}"#,
            "driftscope score --run r",
        )
        .unwrap();
        assert_eq!(
            merged,
            args("driftscope score --run r --config --metric cosine --metric euclidean")
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(with_config(r#"{"bogus": 1}"#, "driftscope report --run r").is_err());
        assert!(with_config(r#"{"report": {"dim": 3}}"#, "driftscope report --run r").is_err());
        assert!(with_config("[1]", "driftscope report --run r").is_err());
    }
}
