//! Pipeline configuration.
//!
//! Values are resolved in three layers: built-in defaults, then a TOML (or
//! JSON) file, then `key=value` overrides such as command-line flags. Keys
//! are dotted paths:
//!
//! ```toml
//! alphas = [10.0, 20.0, 40.0]
//! levels = 3
//!
//! [band]
//! low = 0.75
//! high = 3.0
//!
//! [window]
//! frames = 196
//! stride_s = 0.5
//!
//! [vit]
//! hidden_dim = 64
//!
//! [train]
//! learning_rate = 5e-5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::MapSettings;
use crate::error::{Error, Result};
use crate::magnify::{BandpassSpec, DEFAULT_ALPHAS, DEFAULT_LEVELS};
use crate::stmap::{DEFAULT_STRIDE_SECONDS, MAP_COLS};
use crate::train::TrainConfig;
use crate::vit::ViTConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub low: f64,
    pub high: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        let band = BandpassSpec::default();
        BandConfig {
            low: band.f_low,
            high: band.f_high,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub frames: usize,
    pub stride_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            frames: MAP_COLS,
            stride_s: DEFAULT_STRIDE_SECONDS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub alphas: [f64; 3],
    pub levels: usize,
    pub band: BandConfig,
    pub window: WindowConfig,
    pub vit: ViTConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            alphas: DEFAULT_ALPHAS,
            levels: DEFAULT_LEVELS,
            band: BandConfig::default(),
            window: WindowConfig::default(),
            vit: ViTConfig::default(),
            train: TrainConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn parse_document(text: &str, json: bool) -> Result<toml::Table> {
    if json {
        serde_json::from_str(text).map_err(|e| Error::format("config", e.to_string()))
    } else {
        text.parse::<toml::Table>().map_err(|e| Error::format("config", e.to_string()))
    }
}

/// Parses the right-hand side of an override: a TOML value when possible,
/// otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::InvalidArgument(format!("empty config key {key:?}")))?;
    let mut cursor = table;
    for part in parts {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("config key {key:?}: {part} is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Defaults, overlaid by `file` (if any), overlaid by `overrides`
    /// (`key=value` pairs, later ones winning).
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::open(path, e))?;
                let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
                parse_document(&text, json)?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            set_path(&mut table, key, parse_value(raw))?;
        }
        let config: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::format("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels != self.alphas.len() {
            return bad(format!("levels must be {} (one per gain), got {}", self.alphas.len(), self.levels));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad(format!("alphas must be finite and non-negative, got {:?}", self.alphas));
        }
        if !(self.band.low > 0.0 && self.band.low < self.band.high) {
            return bad(format!("band must satisfy 0 < low < high, got {}..{}", self.band.low, self.band.high));
        }
        if self.window.frames != MAP_COLS {
            return bad(format!("window.frames must be {MAP_COLS} (one patch per frame), got {}", self.window.frames));
        }
        if !(self.window.stride_s > 0.0 && self.window.stride_s.is_finite()) {
            return bad(format!("window.stride_s must be positive, got {}", self.window.stride_s));
        }
        self.vit.validate()?;
        self.train.validate()
    }

    pub fn map_settings(&self) -> MapSettings {
        MapSettings {
            band: BandpassSpec::new(self.band.low, self.band.high),
            alphas: self.alphas,
            stride_seconds: self.window.stride_s,
        }
    }

    /// Model configuration with the training dropout rate applied.
    pub fn model_config(&self) -> ViTConfig {
        ViTConfig {
            dropout_rate: self.train.dropout_rate,
            ..self.vit
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.learning_rate, 5e-5);
        assert_eq!(cfg.train.epochs, 60);
        assert_eq!(cfg.alphas, [10.0, 20.0, 40.0]);
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    /// Every combination of {default, file, flag} for a handful of keys.
    #[test]
    fn precedence_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(
            &file,
            "alphas = [1.0, 2.0, 3.0]\n[band]\nlow = 0.8\n[window]\nstride_s = 1.0\n[train]\nlearning_rate = 1e-3\nepochs = 5\n[vit]\nnum_layers = 1\n",
        )
        .unwrap();
        type Get = fn(&PipelineConfig) -> String;
        let cases: [(&str, &str, Get, &str, &str); 6] = [
            ("band.low", "0.9", |c| c.band.low.to_string(), "0.75", "0.8"),
            ("window.stride_s", "0.25", |c| c.window.stride_s.to_string(), "0.5", "1"),
            ("train.learning_rate", "0.01", |c| c.train.learning_rate.to_string(), "0.00005", "0.001"),
            ("train.epochs", "7", |c| c.train.epochs.to_string(), "60", "5"),
            ("vit.num_layers", "3", |c| c.vit.num_layers.to_string(), "2", "1"),
            ("alphas", "[4.0, 5.0, 6.0]", |c| format!("{:?}", c.alphas), "[10.0, 20.0, 40.0]", "[1.0, 2.0, 3.0]"),
        ];
        for (key, flag, get, default, from_file) in cases {
            let flag_value = get(&PipelineConfig::resolve(None, &pairs(&[(key, flag)])).unwrap());
            assert_ne!(flag_value, default);
            for use_file in [false, true] {
                for use_flag in [false, true] {
                    let overrides = if use_flag { pairs(&[(key, flag)]) } else { Vec::new() };
                    let cfg = PipelineConfig::resolve(use_file.then_some(file.as_path()), &overrides).unwrap();
                    let expected = match (use_file, use_flag) {
                        (_, true) => flag_value.clone(),
                        (true, false) => from_file.to_string(),
                        (false, false) => default.to_string(),
                    };
                    assert_eq!(get(&cfg), expected, "{key} file={use_file} flag={use_flag}");
                }
            }
        }
    }

    #[test]
    fn json_files_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"train": {"batch_size": 4}, "band": {"high": 2.5}}"#).unwrap();
        let cfg = PipelineConfig::resolve(Some(&file), &[]).unwrap();
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.band.high, 2.5);
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        assert!(PipelineConfig::resolve(None, &pairs(&[("band.middle", "1.0")])).is_err());
        assert!(PipelineConfig::resolve(None, &pairs(&[("window.frames", "100")])).is_err());
        assert!(PipelineConfig::resolve(None, &pairs(&[("levels", "2")])).is_err());
        assert!(PipelineConfig::resolve(None, &pairs(&[("vit.num_heads", "5")])).is_err());
        assert!(PipelineConfig::resolve(None, &pairs(&[("train.epochs", "0")])).is_err());
        assert!(matches!(
            PipelineConfig::resolve(Some(Path::new("/nonexistent/c.toml")), &[]),
            Err(Error::MissingPath(_))
        ));
    }

    #[test]
    fn string_override_for_paths() {
        let cfg = PipelineConfig::resolve(None, &pairs(&[("paths.weights", "out/model.vitw")])).unwrap();
        assert_eq!(cfg.paths.weights, Some(PathBuf::from("out/model.vitw")));
    }
}
