//! Optional `key=value` config files, expanded into flags placed before the
//! command-line flags so that the latter win.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Parses `key=value` lines; `#` starts a comment. `true` maps to a bare flag
/// and `false` drops the key.
pub fn parse_config(text: &str, path: &Path) -> CliResult<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::parse(path, i + 1, format!("expected key=value, got `{line}`")))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(CliError::parse(path, i + 1, format!("invalid key `{key}`")));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> CliResult<Option<PathBuf>> {
    let mut found = None;
    let mut iter = args.iter().skip(2);
    while let Some(a) = iter.next() {
        let Some(s) = a.to_str() else { continue };
        if s == "--config" {
            let v = iter.next().ok_or_else(|| CliError::Usage("--config needs a path".into()))?;
            found = Some(PathBuf::from(v));
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    Ok(found)
}

/// Inserts config-file flags right after the subcommand name.
pub fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&args)? else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let extra = parse_config(&text, &path)?;
    let mut out: Vec<OsString> = args[..2].to_vec();
    out.extend(extra);
    out.extend(args[2..].iter().cloned());
    Ok(out)
}
