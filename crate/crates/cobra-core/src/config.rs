//! Run-configuration loading: JSON file, dotted-path overrides, env seed.

use std::path::Path;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Environment variable that overrides the configured rng seed.
pub const SEED_ENV: &str = "COBRA_SEED";

/// Load a training config, apply `key.path=value` overrides, then the
/// `COBRA_SEED` override. Unknown keys anywhere are rejected.
pub fn load_train_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut value: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(TrainConfig::default()).expect("default config serializes"),
    };

    for ov in overrides {
        apply_override(&mut value, ov)?;
    }

    let mut cfg: TrainConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.rng_seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={seed} is not a valid seed")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Apply one `a.b.c=value` override onto a JSON tree. The path must lead to
/// an existing key; values parse as JSON first, bare strings otherwise.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` must look like key.path=value")))?;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override path `{path}` is malformed")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not a section", parts[..i].join("."))))?;
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown config key `{}`", parts[..=i].join("."))))?;
    }
    *node = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    Ok(())
}

/// Serialize the resolved config for the run-directory snapshot.
pub fn config_snapshot(cfg: &TrainConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}
