//! Run configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::SimParams;
use crate::error::{Error, Result};
use crate::func::Thresholds;
use crate::seg::RansacParams;

use super::generate::GenConfig;
use super::pipeline::{JointSource, Mode};

pub const CONFIG_ENV: &str = "FIXIT_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub mode: Mode,
    pub joints: JointSource,
    pub generation: GenConfig,
    pub sim: SimParams,
    pub thresholds: Thresholds,
    pub ransac: RansacParams,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Full,
            joints: JointSource::Gt,
            generation: GenConfig::default(),
            sim: SimParams::default(),
            thresholds: Thresholds::default(),
            ransac: RansacParams::default(),
        }
    }
}

impl Config {
    /// Parse by extension: `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
        }
    }

    /// An explicit path wins, then `FIXIT_CONFIG`, then defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Config> {
        let env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(env) {
            Some(p) => Config::load(&p),
            None => Ok(Config::default()),
        }
    }

    /// Override one threshold by field name.
    pub fn set_threshold(&mut self, name: &str, value: f64) -> Result<()> {
        let mut v = serde_json::to_value(&self.thresholds).map_err(|e| Error::Config(e.to_string()))?;
        let obj = v.as_object_mut().expect("thresholds serialize to an object");
        if !obj.contains_key(name) {
            let known: Vec<&str> = obj.keys().map(String::as_str).collect();
            return Err(Error::Config(format!("unknown threshold `{name}` (one of {})", known.join(", "))));
        }
        obj.insert(name.to_string(), value.into());
        self.thresholds = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
