//! Effective configuration: profile defaults, then the config file, then
//! `SIGVWAP_<KEY>` environment variables, then flags.

use std::path::Path;

use anyhow::{Context, Result};
use sigvwap::training::{ExperimentConfig, Profile, Variant};
use sigvwap::Error;

use crate::GlobalArgs;

pub const ENV_PREFIX: &str = "SIGVWAP_";

/// Environment names bound to flags rather than config keys.
const FLAG_VARS: [&str; 6] = ["CONFIG", "SEED", "PROFILE", "VARIANT", "WORKERS", "OUT"];

fn env_pairs(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let key = k.strip_prefix(ENV_PREFIX)?;
            (!FLAG_VARS.contains(&key)).then(|| (key.to_ascii_lowercase(), v))
        })
        .collect();
    pairs.sort();
    pairs
}

fn split_override(raw: &str) -> std::result::Result<(&str, &str), String> {
    raw.split_once('=')
        .ok_or_else(|| format!("--set {raw:?}: expected KEY=VALUE"))
}

fn collect(problems: &mut Vec<String>, r: sigvwap::Result<()>) {
    match r {
        Err(Error::Config(p)) => problems.extend(p),
        Err(e) => problems.push(e.to_string()),
        Ok(()) => {}
    }
}

pub fn resolve(
    args: &GlobalArgs,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<ExperimentConfig> {
    let profile: Profile = args.profile.parse()?;
    let mut cfg = ExperimentConfig::for_profile(profile, Variant::GftSig);
    let mut problems = Vec::new();

    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        collect(&mut problems, cfg.apply_text(&text));
    }
    let env = env_pairs(vars);
    collect(&mut problems, cfg.apply_pairs(env.iter().map(|(k, v)| (k.as_str(), v.as_str()))));

    let mut flags: Vec<(String, String)> = Vec::new();
    if let Some(v) = &args.variant {
        flags.push(("variant".into(), v.clone()));
    }
    if let Some(s) = args.seed {
        flags.push(("seed".into(), s.to_string()));
    }
    if let Some(w) = args.workers {
        flags.push(("workers".into(), w.to_string()));
    }
    for raw in &args.overrides {
        match split_override(raw) {
            Ok((k, v)) => flags.push((k.trim().into(), v.trim().into())),
            Err(e) => problems.push(e),
        }
    }
    collect(&mut problems, cfg.apply_pairs(flags.iter().map(|(k, v)| (k.as_str(), v.as_str()))));
    collect(&mut problems, cfg.validate());

    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(problems).into())
    }
}

/// Reads the config snapshot stored beside a checkpoint.
pub fn load_snapshot(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config snapshot {}", path.display()))?;
    let mut cfg = ExperimentConfig::tiny(Variant::GftSig);
    cfg.apply_text(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;

    fn args() -> GlobalArgs {
        GlobalArgs {
            config: None,
            seed: None,
            profile: "tiny".into(),
            variant: None,
            workers: None,
            out: PathBuf::from("out"),
            overrides: Vec::new(),
        }
    }

    fn var(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn precedence_file_env_flag() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "horizon = 6\nlookback = 12\nmax_epochs = 3\n").unwrap();
        let mut a = args();
        a.config = Some(file);
        a.overrides = vec!["max_epochs=5".into()];
        a.seed = Some(99);
        let env = vec![var("SIGVWAP_LOOKBACK", "10"), var("SIGVWAP_MAX_EPOCHS", "4"), var("HOME", "/")];
        let cfg = resolve(&a, env).unwrap();
        assert_eq!(cfg.horizon, 6);
        assert_eq!(cfg.lookback, 10);
        assert_eq!(cfg.max_epochs, 5);
        assert_eq!(cfg.seed, 99);
    }

    #[test]
    fn problems_reported_together() {
        let mut a = args();
        a.overrides = vec!["bogus=1".into(), "horizon=x".into(), "noequals".into()];
        let env = vec![var("SIGVWAP_ALSO_BOGUS", "1")];
        let msg = resolve(&a, env).unwrap_err().to_string();
        for needle in ["bogus", "horizon", "noequals", "also_bogus"] {
            assert!(msg.contains(needle), "{msg}");
        }
    }

    #[test]
    fn flag_vars_are_not_config_keys() {
        let env = vec![var("SIGVWAP_OUT", "x"), var("SIGVWAP_PROFILE", "full")];
        assert!(resolve(&args(), env).is_ok());
    }

    #[test]
    fn snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::full(Variant::Afd);
        let path = dir.path().join("config.txt");
        std::fs::write(&path, cfg.to_text()).unwrap();
        assert_eq!(load_snapshot(&path).unwrap(), cfg);
    }
}
