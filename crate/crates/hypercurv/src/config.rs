//! Run configuration: a single strict-schema JSON document.

use crate::bilevel::BilevelConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sharpness::SharpnessConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingMode {
    /// Fixed curvature, no feature clipping.
    #[serde(rename = "hnn")]
    Hnn,
    /// Fixed curvature with feature clipping.
    #[serde(rename = "c-hnn")]
    CHnn,
    /// Fixed curvature, clipping taken from the model section.
    #[serde(rename = "fixed-curvature")]
    FixedCurvature,
    /// Full bilevel curvature learning.
    #[serde(rename = "curvature-learning")]
    CurvatureLearning,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden widths of the extractor; empty means identity.
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Clipping radius used by clipping modes (default 1.0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CurvatureSection {
    pub init: f64,
    pub min: f64,
    pub max: f64,
    pub eta_c: f64,
}

impl Default for CurvatureSection {
    fn default() -> Self {
        CurvatureSection {
            init: 0.1,
            min: 1e-6,
            max: 1.0,
            eta_c: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub params: u64,
    pub split: u64,
    pub direction: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            params: 1,
            split: 2,
            direction: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: TrainingMode,
    pub model: ModelSection,
    #[serde(default)]
    pub bilevel: BilevelConfig,
    #[serde(default)]
    pub sharpness: SharpnessConfig,
    #[serde(default)]
    pub curvature: CurvatureSection,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Canonical serialized form (stable field order, pretty-printed).
    pub fn to_canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.bilevel.validate()?;
        self.sharpness.validate()?;
        if !(self.curvature.min > 0.0
            && self.curvature.min <= self.curvature.max
            && self.curvature.init >= self.curvature.min
            && self.curvature.init <= self.curvature.max)
        {
            return Err(Error::Config(format!(
                "curvature section out of order: init {} in [{}, {}]",
                self.curvature.init, self.curvature.min, self.curvature.max
            )));
        }
        if !(self.curvature.eta_c > 0.0) {
            return Err(Error::Config("eta_c must be positive".into()));
        }
        if self.model.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be ≥ 1".into()));
        }
        if let Some(r) = self.model.clip_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("clip radius {r} not positive")));
            }
        }
        Ok(())
    }

    /// Effective feature-clipping radius under the mode.
    pub fn effective_clip(&self) -> Option<f64> {
        match self.mode {
            TrainingMode::Hnn => None,
            TrainingMode::CHnn => Some(self.model.clip_radius.unwrap_or(1.0)),
            TrainingMode::FixedCurvature | TrainingMode::CurvatureLearning => {
                self.model.clip_radius
            }
        }
    }

    /// Concrete architecture for a dataset.
    pub fn model_config(&self, dataset: &Dataset) -> Result<ModelConfig> {
        if dataset.distinct_labels() < 2 {
            return Err(Error::Contract(
                "classification needs at least two distinct labels".into(),
            ));
        }
        let cfg = ModelConfig {
            input_dim: dataset.dim(),
            hidden: self.model.hidden.clone(),
            embed_dim: self.model.embed_dim,
            classes: dataset.n_classes(),
            clip_radius: self.effective_clip(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
