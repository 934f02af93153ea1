//! `key = value` config files. Keys are long flag names without the leading
//! dashes; values given on the command line win over the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clap::{ArgAction, Command};

/// Parses the text of a config file. Blank lines and lines starting with `#`
/// are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got {line:?}", n + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        if out.insert(key.to_owned(), value.trim().to_owned()).is_some() {
            return Err(format!("line {}: duplicate key {key:?}", n + 1));
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn given(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

fn takes_value(action: &ArgAction) -> bool {
    matches!(action, ArgAction::Set | ArgAction::Append)
}

/// Index of the subcommand token in `args`, skipping values of global flags.
fn find_subcommand(cmd: &Command, args: &[String]) -> Option<usize> {
    let valued: Vec<String> = cmd
        .get_arguments()
        .filter(|a| takes_value(a.get_action()))
        .filter_map(|a| a.get_long().map(|l| format!("--{l}")))
        .collect();
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if cmd.find_subcommand(a).is_some() {
            return Some(i);
        }
        i += if valued.contains(a) { 2 } else { 1 };
    }
    None
}

/// Appends config entries not already present on the command line. Keys
/// that belong to another subcommand are ignored; keys no subcommand knows
/// are an error.
pub fn merge_config(cmd: &Command, args: Vec<String>, config: &BTreeMap<String, String>) -> Result<Vec<String>, String> {
    let Some(at) = find_subcommand(cmd, &args) else {
        return Ok(args);
    };
    let sub = cmd.find_subcommand(&args[at]).expect("found above");
    let known_anywhere = |key: &str| {
        cmd.get_arguments().any(|a| a.get_long() == Some(key))
            || cmd.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(key)))
    };
    let mut out = args.clone();
    for (key, value) in config {
        if key == "config" {
            return Err("a config file cannot name another config file".into());
        }
        if !known_anywhere(key) {
            return Err(format!("unknown config key {key:?}"));
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else { continue };
        if given(&args, key) {
            continue;
        }
        if takes_value(arg.get_action()) {
            out.push(format!("--{key}"));
            out.push(value.clone());
        } else {
            match value.as_str() {
                "true" | "yes" | "1" => out.push(format!("--{key}")),
                "false" | "no" | "0" => {}
                _ => return Err(format!("config key {key:?} is a switch; use true or false, got {value:?}")),
            }
        }
    }
    Ok(out)
}
