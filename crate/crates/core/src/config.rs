//! Run configuration: a single TOML file with one table per concern
//! (geometry, generation, the three filter stages, pipeline execution).
//!
//! Missing tables and missing keys fall back to defaults, so a minimal
//! config can be just the values under study; unknown keys are rejected
//! to catch typos.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cuts::CutConfig;
use crate::geometry::DetectorGeometry;
use crate::pipeline::PipelineSettings;
use crate::toygen::GenConfig;
use crate::triplet_fit::FitConfig;
use crate::vertex::VertexConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: DetectorGeometry<f64>,
    #[serde(rename = "gen")]
    pub gen: GenConfig,
    pub cuts: CutConfig<f64>,
    pub fit: FitConfig<f64>,
    pub vertex: VertexConfig<f64>,
    pub pipeline: PipelineSettings,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("write {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error("parse {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source: Box::new(source),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string_pretty(self).expect("run config serializes to TOML");
        fs::write(path, text).map_err(|source| ConfigError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry
            .validate()
            .and_then(|_| self.gen.validate())
            .and_then(|_| self.cuts.validate())
            .and_then(|_| self.fit.validate())
            .and_then(|_| self.vertex.validate())
            .and_then(|_| self.pipeline.validate())
            .map_err(ConfigError::Invalid)
    }
}
