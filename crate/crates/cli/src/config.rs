//! Config file resolution: defaults, then the file, then `--set` overrides,
//! then strict parsing.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use ringforge::filters::FilterConfig;
use ringforge::nn::UNetConfig;
use ringforge::synth::MaskParams;
use ringforge::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Frame size of generated masks and phantoms.
    pub size: usize,
    pub n_masks: usize,
    pub alpha: f64,
    /// Directory of clean PGM slices; phantoms are generated when unset.
    pub clean_dir: Option<PathBuf>,
    /// Phantom count when no clean directory is given.
    pub n_phantoms: usize,
    pub mask: MaskParams,
}

impl SynthConfig {
    fn for_size(size: usize) -> Self {
        SynthConfig {
            size,
            n_masks: 25,
            alpha: 0.7,
            clean_dir: None,
            n_phantoms: 4,
            mask: MaskParams::for_size(size, size),
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::for_size(64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub filter: FilterConfig,
    pub unet: UNetConfig,
    pub train: TrainConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            seed: 0,
            synth: SynthConfig::default(),
            filter: FilterConfig::default(),
            unet: UNetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// The resolved configuration plus what produced it.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub config: CliConfig,
    pub overrides: Vec<String>,
    pub config_path: Option<PathBuf>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets a dotted key inside a JSON object, creating intermediate objects.
/// The value is parsed as JSON when possible and kept as a string otherwise.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("--set expects KEY=VALUE, got {assignment:?}"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("--set key {key:?} is malformed");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let obj = match cur {
            Value::Object(m) => m,
            _ => bail!("--set {key}: {part} is not an object"),
        };
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
    }
    match cur {
        Value::Object(m) => {
            m.insert(parts[parts.len() - 1].to_string(), value);
        }
        _ => bail!("--set {key}: parent is not an object"),
    }
    Ok(())
}

/// Validation failure of user-supplied configuration (exit code 1).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn resolve(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Resolved> {
    let mut user = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| ConfigError(format!("config {} is not valid JSON: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !user.is_object() {
        return Err(ConfigError("config root must be a JSON object".into()).into());
    }
    for s in sets {
        apply_set(&mut user, s).map_err(|e| ConfigError(e.to_string()))?;
    }
    let size = user
        .pointer("/synth/size")
        .and_then(Value::as_u64)
        .map(|s| s as usize)
        .unwrap_or(SynthConfig::default().size);
    let defaults = CliConfig {
        synth: SynthConfig::for_size(size),
        ..CliConfig::default()
    };
    let mut merged = serde_json::to_value(&defaults)?;
    merge(&mut merged, user);
    let mut config: CliConfig =
        serde_json::from_value(merged).map_err(|e| ConfigError(format!("invalid configuration: {e}")))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.synth.mask.seed = config.seed;
    config.train.seed = config.seed;
    Ok(Resolved {
        config,
        overrides: sets.to_vec(),
        config_path: path.map(Path::to_path_buf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_creates_nested_keys() {
        let mut v = Value::Object(Map::new());
        apply_set(&mut v, "train.adam.lr=0.01").unwrap();
        apply_set(&mut v, "filter.method=fft").unwrap();
        assert_eq!(v.pointer("/train/adam/lr"), Some(&Value::from(0.01)));
        assert_eq!(v.pointer("/filter/method"), Some(&Value::from("fft")));
        assert!(apply_set(&mut v, "novalue").is_err());
        assert!(apply_set(&mut v, "a..b=1").is_err());
    }

    #[test]
    fn overrides_beat_file_and_unknown_keys_fail() {
        let r = resolve(None, &["unet.depth=4".into(), "synth.size=128".into()], Some(9)).unwrap();
        assert_eq!(r.config.unet.depth, 4);
        assert_eq!(r.config.synth.mask, MaskParams { seed: 9, ..MaskParams::for_size(128, 128) });
        assert_eq!(r.config.train.seed, 9);
        let err = resolve(None, &["unet.dept=4".into()], None).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let r = resolve(None, &["synth.mask.num_rings=[2,3]".into()], None).unwrap();
        assert_eq!(r.config.synth.mask.num_rings, [2, 3]);
        assert_eq!(r.config.synth.mask.radius, MaskParams::default().radius);
        assert_eq!(r.config.filter, FilterConfig::default());
    }
}
