use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::audio::FeatureConfig;
use crate::cascade::CascadeConfig;
use crate::datagen::{DatagenConfig, ImportConfig, Split};
use crate::eval::StreamMode;
use crate::labels::TurnState;
use crate::nn::{HeavyArch, LightArch, TrainConfig};
use crate::wire::LATENCY_ENV;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightConfig {
    pub arch: LightArch,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeavyConfig {
    pub arch: HeavyArch,
    pub train: TrainConfig,
}

impl Default for HeavyConfig {
    fn default() -> Self {
        Self { arch: HeavyArch::default(), train: TrainConfig::heavy() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: StreamMode,
    /// Label for non-SU steps in light-only mode.
    pub fallback: TurnState,
    /// Manifest split to evaluate; null for every entry.
    pub split: Option<Split>,
    pub format: OutputFormat,
    /// Include wall-clock time per step in compute reports.
    pub timing: bool,
    /// Where `bench` writes its FLOPs/IoU chart.
    pub svg: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: StreamMode::Speculative,
            fallback: TurnState::Pause,
            split: Some(Split::Test),
            format: OutputFormat::Json,
            timing: false,
            svg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub listen: String,
    pub latency_ms: u64,
    /// Verdict server used by `cascade`; null runs the heavy model in process.
    pub address: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { listen: "127.0.0.1:7878".into(), latency_ms: 0, address: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    pub light_params: PathBuf,
    pub heavy_params: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("corpus/manifest.json"),
            light_params: PathBuf::from("models/light.etdw"),
            heavy_params: PathBuf::from("models/heavy.etdw"),
        }
    }
}

/// Every tunable of the command-line tool in one document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub datagen: DatagenConfig,
    pub import: ImportConfig,
    pub features: FeatureConfig,
    pub light: LightConfig,
    pub heavy: HeavyConfig,
    pub cascade: CascadeConfig,
    pub eval: EvalConfig,
    pub server: ServerConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Sets `key` (dotted, e.g. `cascade.debounce_steps`) to `raw`. The raw
    /// text is read as JSON when possible and as a string otherwise.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        self.set_all(&[(key.to_string(), raw.to_string())])
    }

    pub fn set_all(&mut self, overrides: &[(String, String)]) -> Result<(), CliError> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        for (key, raw) in overrides {
            let slot = lookup(&mut doc, key)?;
            *slot = parse_value(raw, slot);
        }
        *self = serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(())
    }

    /// Applies the server latency environment variable, if set.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        if let Ok(v) = std::env::var(LATENCY_ENV) {
            self.server.latency_ms =
                v.trim().parse().map_err(|_| CliError::Usage(format!("{LATENCY_ENV}={v:?} is not a whole number")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        self.datagen.validate().map_err(|e| usage(&e))?;
        self.features.validate().map_err(|e| usage(&e))?;
        self.cascade.validate().map_err(|e| usage(&e))?;
        self.light.train.validate().map_err(|e| usage(&e))?;
        self.heavy.train.validate().map_err(|e| usage(&e))?;
        if self.light.arch.n_mels != self.features.n_mels || self.heavy.arch.n_mels != self.features.n_mels {
            return Err(CliError::Usage("light.arch.n_mels and heavy.arch.n_mels must equal features.n_mels".into()));
        }
        Ok(())
    }
}

fn lookup<'a>(doc: &'a mut Value, key: &str) -> Result<&'a mut Value, CliError> {
    let mut cur = doc;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part),
            _ => None,
        }
        .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
    }
    if cur.is_object() {
        return Err(CliError::Usage(format!("config key {key:?} is a section, not a value")));
    }
    Ok(cur)
}

fn parse_value(raw: &str, current: &Value) -> Value {
    match serde_json::from_str::<Value>(raw) {
        Ok(v) if !(current.is_string() && (v.is_number() || v.is_boolean())) => v,
        _ => Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"cascade": {"debounce": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
        let mut cfg = RunConfig::default();
        assert!(cfg.set("cascade.nope", "1").is_err());
        assert!(cfg.set("cascade", "1").is_err());
        assert!(cfg.set("cascade.debounce_steps", "\"many\"").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = RunConfig::default();
        cfg.set("cascade.debounce_steps", "3").unwrap();
        cfg.set("datagen.out_dir", "123").unwrap();
        cfg.set("datagen.variant", "with_filler").unwrap();
        cfg.set("eval.split", "null").unwrap();
        cfg.set("eval.svg", "out/chart.svg").unwrap();
        cfg.set("server.address", "127.0.0.1:9").unwrap();
        assert_eq!(cfg.cascade.debounce_steps, 3);
        assert_eq!(cfg.datagen.out_dir, PathBuf::from("123"));
        assert_eq!(cfg.datagen.variant, crate::datagen::Variant::WithFiller);
        assert_eq!(cfg.eval.split, None);
        assert_eq!(cfg.eval.svg, Some(PathBuf::from("out/chart.svg")));
        assert_eq!(cfg.server.address.as_deref(), Some("127.0.0.1:9"));
    }
}
