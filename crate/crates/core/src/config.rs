//! Pipeline configuration, read from a TOML file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merge::{RatioMode, PINNED_BIOMASS_FRACTION};
use crate::ng::default_aliases;
use crate::quality::default_categories;

/// Environment variable naming the default config path.
pub const CONFIG_ENV: &str = "ESPENI_CONFIG";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8123";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("no config given and {CONFIG_ENV} is not set")]
    NotGiven,
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub elexon_dir: PathBuf,
    pub ng_dir: PathBuf,
    pub out_dir: PathBuf,
    pub calendar_path: PathBuf,
    pub flag_path: PathBuf,
    /// Range used when the calendar file does not exist yet.
    pub calendar_start: Option<NaiveDate>,
    pub calendar_end: Option<NaiveDate>,
    pub biomass_ratio_mode: RatioMode,
    pub pinned_biomass_fraction: f64,
    pub detector_categories: Vec<String>,
    pub listen_address: String,
    /// source -> URL template; `{year}` is replaced by each of `fetch_years`.
    pub fetch_urls: BTreeMap<String, String>,
    pub fetch_years: Vec<i32>,
    pub fetch_retries: u32,
    pub ng_aliases: BTreeMap<String, String>,
    pub write_intermediate: bool,
    pub legacy_md5: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            elexon_dir: PathBuf::from("data/elexon"),
            ng_dir: PathBuf::from("data/ng"),
            out_dir: PathBuf::from("out"),
            calendar_path: PathBuf::from("out/masterdatetime_iso8601.csv"),
            flag_path: PathBuf::from("flags.csv"),
            calendar_start: None,
            calendar_end: None,
            biomass_ratio_mode: RatioMode::Pinned,
            pinned_biomass_fraction: PINNED_BIOMASS_FRACTION,
            detector_categories: default_categories(),
            listen_address: DEFAULT_LISTEN.to_string(),
            fetch_urls: BTreeMap::new(),
            fetch_years: Vec::new(),
            fetch_retries: 3,
            ng_aliases: default_aliases(),
            write_intermediate: false,
            legacy_md5: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text, path)?;
        if let Some(base) = path.parent() {
            config.resolve_relative_to(base);
        }
        Ok(config)
    }

    /// Loads the explicit path, or the one named by `ESPENI_CONFIG`.
    pub fn load_default(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(path) => Self::load(path),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(path) if !path.is_empty() => Self::load(Path::new(&path)),
                _ => Err(ConfigError::NotGiven),
            },
        }
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        for path in [
            &mut self.elexon_dir,
            &mut self.ng_dir,
            &mut self.out_dir,
            &mut self.calendar_path,
            &mut self.flag_path,
        ] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.pinned_biomass_fraction > 0.0 && self.pinned_biomass_fraction < 1.0) {
            return invalid("pinned_biomass_fraction must lie strictly between 0 and 1");
        }
        if self.detector_categories.is_empty() {
            return invalid("detector_categories must not be empty");
        }
        for (name, path) in [
            ("elexon_dir", &self.elexon_dir),
            ("ng_dir", &self.ng_dir),
            ("out_dir", &self.out_dir),
            ("calendar_path", &self.calendar_path),
            ("flag_path", &self.flag_path),
        ] {
            if path.as_os_str().is_empty() {
                return Err(ConfigError::Invalid(format!("{name} must not be empty")));
            }
        }
        if let (Some(start), Some(end)) = (self.calendar_start, self.calendar_end) {
            if start > end {
                return invalid("calendar_start is after calendar_end");
            }
        }
        Ok(())
    }

    /// Concrete URLs for `source`, one per configured year when the template
    /// holds `{year}`.
    pub fn fetch_targets(&self, source: &str) -> Result<Vec<String>, ConfigError> {
        let template = self
            .fetch_urls
            .get(source)
            .ok_or_else(|| ConfigError::Invalid(format!("no fetch URL configured for {source}")))?;
        if !template.contains("{year}") {
            return Ok(vec![template.clone()]);
        }
        if self.fetch_years.is_empty() {
            return Err(ConfigError::Invalid(format!(
                "fetch URL for {source} uses {{year}} but fetch_years is empty"
            )));
        }
        Ok(self
            .fetch_years
            .iter()
            .map(|y| template.replace("{year}", &y.to_string()))
            .collect())
    }
}
