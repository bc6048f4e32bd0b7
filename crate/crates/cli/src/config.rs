//! `--config FILE`: plain `key=value` lines injected ahead of the user's own
//! flags, so anything given on the command line wins.

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::{Command, CommandFactory};

use crate::Cli;

/// Global options that take a value and may precede the subcommand.
const VALUED_GLOBALS: [&str; 2] = ["--threads", "--config"];

fn config_path(args: &[OsString]) -> Option<String> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            return it.next().map(|v| v.to_string_lossy().into_owned());
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn subcommand_position(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if VALUED_GLOBALS.contains(&a.as_ref()) {
            i += 2;
            continue;
        }
        if !a.starts_with('-') {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn bad_config(cmd: &mut Command, msg: String) -> clap::Error {
    cmd.error(ErrorKind::InvalidValue, msg)
}

/// Parses one config file into flag tokens for `sub`.
fn entries_to_flags(root: &mut Command, sub: &str, path: &str, text: &str) -> Result<Vec<OsString>, clap::Error> {
    let Some(cmd) = root.find_subcommand(sub) else { return Ok(Vec::new()) };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(bad_config(root, format!("{path}:{}: expected key=value, got `{line}`", n + 1)));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let Some(arg) = cmd.get_arguments().find(|a| {
            a.get_long() == Some(key.as_str()) || a.get_all_aliases().is_some_and(|v| v.contains(&key.as_str()))
        }) else {
            return Err(root.error(
                ErrorKind::UnknownArgument,
                format!("{path}:{}: unknown key `{key}` for `{sub}`", n + 1),
            ));
        };
        if arg.get_action().takes_values() {
            out.push(format!("--{key}={value}").into());
        } else {
            match value {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(bad_config(root, format!("{path}:{}: `{key}` expects true or false", n + 1)));
                }
            }
        }
    }
    Ok(out)
}

/// Returns `args` with the config file's entries spliced in right after the
/// subcommand name.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, clap::Error> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let Some(pos) = subcommand_position(&args) else { return Ok(args) };
    let mut root = Cli::command();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| root.error(ErrorKind::Io, format!("cannot read config file {path}: {e}")))?;
    let sub = args[pos].to_string_lossy().into_owned();
    let injected = entries_to_flags(&mut root, &sub, &path, &text)?;
    let mut out = args;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}
