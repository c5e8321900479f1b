//! `key=value` config files, spliced into argv ahead of the user's flags so
//! that anything given on the command line wins.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const SUBCOMMANDS: [&str; 6] = ["fit", "simulate", "replicate", "compare", "convert-weights", "demo-selection-set"];

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got '{line}'", i + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        if key == "config" {
            bail!("config line {}: config files cannot include other config files", i + 1);
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    args.iter().enumerate().find_map(|(i, a)| {
        let s = a.to_str()?;
        if s == "--config" {
            args.get(i + 1).cloned()
        } else {
            s.strip_prefix("--config=").map(OsString::from)
        }
    })
}

/// Returns argv with config entries inserted after the subcommand name.
/// `true` values become bare switches and `false` values are dropped.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path))
        .with_context(|| format!("cannot read config file {}", Path::new(&path).display()))?;
    let pairs = parse_config(&text)?;
    let Some(at) = args.iter().position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s))) else {
        return Ok(args);
    };
    let mut injected = Vec::new();
    for (key, value) in pairs {
        match value.as_str() {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    let mut out = args[..=at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let pairs = parse_config("# sampler\nchains = 4\n\nwarmup_draws=10\n").unwrap();
        assert_eq!(pairs, vec![("chains".into(), "4".into()), ("warmup-draws".into(), "10".into())]);
        assert!(parse_config("chains 4").is_err());
        assert!(parse_config("config=other.conf").is_err());
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "chains=2\nemit-plotdata=true\nquiet=false\n").unwrap();
        let args: Vec<OsString> = ["selmeta", "--config", path.to_str().unwrap(), "fit", "--chains", "4"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand_args(args).unwrap();
        let out: Vec<&str> = out.iter().map(|a| a.to_str().unwrap()).collect();
        assert_eq!(&out[3..], ["fit", "--chains=2", "--emit-plotdata", "--chains", "4"]);
    }
}
