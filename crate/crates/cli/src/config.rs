//! Loading a run config from JSON and applying `key=value` overrides.

use std::path::Path;

use hierseg_core::RunConfig;
use serde_json::{Map, Value};

use crate::CliError;

/// Keys that, given bare, apply to both stages.
const STAGE_KEYS: [&str; 3] = ["scales", "crop", "stride"];

/// Parses an override value as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::config(format!("override key `{path}` has an empty segment")));
        }
        let last = i + 1 == parts.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    CliError::config(format!("override `{path}`: `{part}` is not an array index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    CliError::config(format!("override `{path}`: index {idx} out of range ({len} items)"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()))
            }
            _ => {
                return Err(CliError::config(format!(
                    "override `{path}`: `{}` is not an object",
                    parts[..i].join(".")
                )))
            }
        };
    }
    unreachable!("split yields at least one segment")
}

/// Stage sections are filled from defaults first so that a partial override such as
/// `damage.crop=32` does not drop the stage's backend list.
fn materialize_defaults(root: &mut Value) {
    let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
    if let (Value::Object(map), Value::Object(def)) = (root, defaults) {
        for (key, dv) in def {
            match map.get_mut(&key) {
                None => {
                    map.insert(key, dv);
                }
                Some(Value::Object(section)) if key == "component" || key == "damage" => {
                    if let Value::Object(dsec) = dv {
                        for (k, v) in dsec {
                            section.entry(k).or_insert(v);
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<(), CliError> {
    if overrides.is_empty() {
        return Ok(());
    }
    materialize_defaults(root);
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override `{o}` is not key=value")))?;
        let key = key.trim();
        let value = parse_value(raw.trim());
        if STAGE_KEYS.contains(&key) {
            set_path(root, &format!("component.{key}"), value.clone())?;
            set_path(root, &format!("damage.{key}"), value)?;
        } else {
            set_path(root, key, value)?;
        }
    }
    Ok(())
}

/// Reads `path` (or starts from `{}`), applies overrides and validates the result.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(CliError::config("config must be a JSON object"));
    }
    apply_overrides(&mut root, overrides)?;
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| CliError::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn bare_stage_keys_hit_both_stages() {
        let cfg = load_config(None, &["scales=[1.0]".into(), "damage.crop=32".into(), "stride=16".into()]).unwrap();
        assert_eq!(cfg.component.scales.scales(), [1.0]);
        assert_eq!(cfg.damage.scales.scales(), [1.0]);
        assert_eq!((cfg.component.crop, cfg.damage.crop), (64, 32));
        assert_eq!(cfg.damage.stride, 16);
        assert_eq!(cfg.damage.backends, ["darkness"]);
    }

    #[test]
    fn dotted_paths_reach_into_arrays() {
        let cfg = load_config(None, &["backends.0.params.tolerance=10".into(), "split.seed=7".into()]).unwrap();
        assert_eq!(cfg.backends[0].params.as_ref().unwrap()["tolerance"], 10);
        assert_eq!(cfg.split.seed, 7);
        let err = load_config(None, &["backends.9.name=x".into()]).unwrap_err();
        assert!(err.message.contains("out of range"));
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for bad in ["nonsense", "split.ratio=2", "damage.backends=[\"ghost\"]", "bogus.key=1", "hierarchy_enforce.x=1"] {
            let err = load_config(None, &[bad.into()]).unwrap_err();
            assert_eq!(err.code, 2, "{bad}: {}", err.message);
        }
        let err = load_config(None, &["damage.backends=[\"ghost\"]".into()]).unwrap_err();
        assert!(err.message.contains("ghost"));
    }
}
