//! `--config file.toml` support.
//!
//! The file mirrors the command line. Top-level keys apply to every
//! subcommand that has a flag of that name, and a `[search]`-style table
//! applies to one subcommand only. Keys become flags placed before the real
//! arguments, so anything given on the command line wins.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Command, ValueHint};
use toml::{Table, Value};

/// Flags derived from `file` for `subcommand`, in table order.
pub fn config_args(file: &Path, cmd: &Command, subcommand: &str) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let table: Table = text.parse().with_context(|| format!("parsing {}", file.display()))?;
    let mut cmd = cmd.clone();
    cmd.build();
    let sub = cmd
        .find_subcommand(subcommand)
        .with_context(|| format!("unknown subcommand {subcommand}"))?;
    let base = file.parent().unwrap_or(Path::new(""));

    let mut args = Vec::new();
    for (key, value) in &table {
        if value.is_table() {
            continue;
        }
        if find_arg(sub, key).is_some() {
            push_flag(&mut args, sub, key, value, base)?;
        }
    }
    if let Some(section) = table.get(subcommand) {
        let Some(section) = section.as_table() else {
            bail!("`{subcommand}` in {} must be a table", file.display());
        };
        for (key, value) in section {
            if find_arg(sub, key).is_none() {
                bail!("{}: `{subcommand}` has no option `{key}`", file.display());
            }
            push_flag(&mut args, sub, key, value, base)?;
        }
    }
    Ok(args)
}

fn long_name(key: &str) -> String {
    key.replace('_', "-")
}

fn find_arg<'a>(cmd: &'a Command, key: &str) -> Option<&'a clap::Arg> {
    let long = long_name(key);
    cmd.get_arguments().find(|a| a.get_long() == Some(long.as_str()))
}

fn scalar(key: &str, value: &Value) -> Result<String> {
    Ok(match value {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Boolean(b) => b.to_string(),
        other => bail!("`{key}`: unsupported value {other}"),
    })
}

fn push_flag(args: &mut Vec<String>, cmd: &Command, key: &str, value: &Value, base: &Path) -> Result<()> {
    let arg = find_arg(cmd, key).expect("caller checked");
    let flag = format!("--{}", long_name(key));
    let takes_value = arg.get_num_args().is_some_and(|n| n.takes_values());
    if !takes_value {
        match value {
            Value::Boolean(true) => args.push(flag),
            Value::Boolean(false) => {}
            _ => bail!("`{key}` is a switch and needs true or false"),
        }
        return Ok(());
    }
    let text = match value {
        Value::Array(items) => items
            .iter()
            .map(|v| scalar(key, v))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        v => scalar(key, v)?,
    };
    // Relative paths in the file are relative to the file itself.
    let text = match arg.get_value_hint() {
        ValueHint::FilePath | ValueHint::DirPath if Path::new(&text).is_relative() => {
            base.join(&text).to_string_lossy().into_owned()
        }
        _ => text,
    };
    args.push(flag);
    args.push(text);
    Ok(())
}
