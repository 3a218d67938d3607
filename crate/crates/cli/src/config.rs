//! `key = value` configuration files. Keys are long flag names of the
//! selected subcommand; flags given on the command line win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

pub const CONFIG_ENV: &str = "SLOTFUSE_CONFIG";

pub fn parse_config(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{source}:{}: expected key = value", i + 1);
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            bail!("{source}:{}: empty key", i + 1);
        }
        entries.push((key.to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

pub fn load_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text, &path.display().to_string())
}

fn from_command_line(matches: &ArgMatches, id: &str) -> bool {
    matches.value_source(id) == Some(ValueSource::CommandLine)
}

/// Extra arguments to append to `argv` so that config entries fill in the
/// options the command line left unset.
pub fn config_args(
    command: &Command,
    matches: &ArgMatches,
    entries: &[(String, String)],
) -> Result<Vec<OsString>> {
    let Some((name, sub_matches)) = matches.subcommand() else {
        return Ok(Vec::new());
    };
    let sub = command
        .find_subcommand(name)
        .expect("matched subcommand exists");
    let mut extra = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        let found = sub
            .get_arguments()
            .map(|a| (a, sub_matches))
            .chain(command.get_arguments().map(|a| (a, matches)))
            .find(|(a, _)| a.get_long() == Some(key.as_str()));
        let Some((arg, arg_matches)) = found else {
            log::warn!("config key `{key}` is not an option of `{name}`; ignored");
            continue;
        };
        let id = arg.get_id().as_str();
        if from_command_line(arg_matches, id) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "yes" | "1" => extra.push(format!("--{key}").into()),
                "false" | "no" | "0" => {}
                other => bail!("config key `{key}` expects true or false, got `{other}`"),
            },
            ArgAction::Count => {
                let n: usize = value.parse().with_context(|| format!("config key `{key}` expects a count"))?;
                extra.extend((0..n).map(|_| OsString::from(format!("--{key}"))));
            }
            _ => {
                extra.push(format!("--{key}").into());
                extra.push(value.into());
            }
        }
    }
    Ok(extra)
}
