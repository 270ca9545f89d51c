//! `key=value` config files merged under explicit flags.
//!
//! Config entries become `--key value` arguments placed before the user's
//! own, and are dropped when the user passes the same flag. `METALOSS_SEED`
//! sits between the two layers.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

use crate::CliError;

pub const SEED_ENV: &str = "METALOSS_SEED";

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "config line {}: expected key=value, got `{raw}`",
                n + 1
            )));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Config(format!(
                "config line {}: empty key",
                n + 1
            )));
        }
        if out.iter().any(|(seen, _)| *seen == key) {
            return Err(CliError::Config(format!("config key `{key}` given twice")));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Long flag names the user typed, without the dashes.
fn given_flags(args: &[OsString]) -> BTreeSet<String> {
    args.iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect()
}

fn config_path(args: &[OsString]) -> Result<Option<OsString>, CliError> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it
                .next()
                .cloned()
                .map(Some)
                .ok_or_else(|| CliError::Config("--config needs a path".into()));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(p.into()));
        }
    }
    Ok(None)
}

/// Splice config entries and the seed override into `argv`.
///
/// `known(command, key)` reports whether a subcommand accepts a flag, so
/// unknown keys are rejected with a config error before clap runs.
/// `switches` lists boolean flags, which take `true`/`false` in a file.
pub fn merge(
    argv: Vec<OsString>,
    known: impl Fn(&str, &str) -> bool,
    switches: &[&str],
) -> Result<Vec<OsString>, CliError> {
    // argv[0] is the binary; the first non-flag word is the command path
    let Some(cmd_end) = argv
        .iter()
        .skip(1)
        .position(|a| a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1)
        .or(Some(argv.len()))
    else {
        return Ok(argv);
    };
    let command: Vec<String> = argv[1..cmd_end]
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let Some(leaf) = command.last().cloned() else {
        return Ok(argv);
    };
    let user = &argv[cmd_end..];
    let given = given_flags(user);

    let mut layered: Vec<OsString> = Vec::new();
    if let Some(path) = config_path(user)? {
        let text = fs::read_to_string(Path::new(&path)).map_err(|e| {
            CliError::Config(format!(
                "cannot read config {}: {e}",
                path.to_string_lossy()
            ))
        })?;
        for (key, value) in parse_config(&text)? {
            if key == "config" || !known(&leaf, &key) {
                return Err(CliError::Config(format!(
                    "unknown config key `{key}` for `{}`",
                    command.join(" ")
                )));
            }
            if given.contains(&key) || (key == "seed" && std::env::var_os(SEED_ENV).is_some()) {
                continue;
            }
            if switches.contains(&key.as_str()) {
                match value.as_str() {
                    "true" => layered.push(format!("--{key}").into()),
                    "false" => {}
                    _ => {
                        return Err(CliError::Config(format!(
                            "config key `{key}` takes true or false"
                        )))
                    }
                }
            } else {
                layered.push(format!("--{key}").into());
                layered.push(value.into());
            }
        }
    }
    if let Some(seed) = std::env::var_os(SEED_ENV) {
        if !given.contains("seed") && known(&leaf, "seed") {
            layered.push("--seed".into());
            layered.push(seed);
        }
    }

    let mut out: Vec<OsString> = argv[..cmd_end].to_vec();
    out.extend(layered);
    out.extend(user.iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let c = parse_config("# run\nmeta_lr = 0.01\n\ngens=3 # short\n").unwrap();
        assert_eq!(
            c,
            vec![
                ("meta-lr".to_string(), "0.01".to_string()),
                ("gens".to_string(), "3".to_string())
            ]
        );
        assert!(parse_config("gens").is_err());
        assert!(parse_config("gens=1\ngens=2").is_err());
    }

    #[test]
    fn flags_beat_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "gens = 7\npop = 9\nno-local-search = true\n").unwrap();
        let argv: Vec<OsString> = ["metaloss", "evolve", "--config"]
            .iter()
            .map(OsString::from)
            .chain([path.clone().into_os_string(), "--gens".into(), "2".into()])
            .collect();
        let merged = merge(argv, |_, _| true, &["no-local-search"]).unwrap();
        let words: Vec<String> = merged
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            &words[2..6],
            ["--pop", "9", "--no-local-search", "--config"]
        );
        assert!(!words[..6].contains(&"7".to_string()));
        let err = merge(
            vec![
                "metaloss".into(),
                "evolve".into(),
                "--config".into(),
                path.into(),
            ],
            |_, k| k != "pop",
            &[],
        );
        assert!(matches!(err, Err(CliError::Config(_))));
    }
}
