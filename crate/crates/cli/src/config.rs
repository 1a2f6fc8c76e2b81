//! `key = value` configuration files, spliced into the argument list ahead
//! of the user's own flags so that explicit flags win.

use std::ffi::OsString;
use std::path::Path;

use crate::error::CliError;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::usage(format!("config line {}: invalid key {key:?}", i + 1)));
        }
        out.push((key, value.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

/// Converts config entries to flags. `true`/`false` values become a bare
/// switch or nothing.
pub fn config_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut flags = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => flags.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                flags.push(format!("--{k}").into());
                flags.push(v.into());
            }
        }
    }
    flags
}

fn config_path(args: &[OsString]) -> Result<Option<OsString>, CliError> {
    let mut found = None;
    let mut iter = args.iter().skip(1);
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            found = Some(iter.next().cloned().ok_or_else(|| CliError::usage("--config needs a path"))?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            found = Some(p.into());
        }
    }
    Ok(found)
}

/// Returns `args` with the flags from `--config <path>` (if any) inserted
/// right after the subcommand name.
pub fn expand_config(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let flags = config_flags(&parse_config(&text)?);
    let Some(pos) = args.iter().position(|a| subcommands.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
