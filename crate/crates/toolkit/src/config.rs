//! Run configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spxrefine_core::fh::{geometric_targets, CalibrationConfig, FhParams};
use spxrefine_core::metrics::MetricsConfig;
use spxrefine_core::mlp::TrainConfig;
use spxrefine_core::postprocess::PostprocessConfig;

use crate::error::{Result, ToolkitError};
use crate::synth::SynthConfig;

pub const DEFAULT_FINEST: usize = 8000;
pub const DEFAULT_COARSEST: usize = 500;
pub const DEFAULT_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelConfig {
    pub index: usize,
    /// Target mean superpixel count.
    pub target: usize,
    /// Calibrated or hand-set merge threshold; the template's `k` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_size: Option<usize>,
    /// Feature map for single-image commands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// Mean count reached by the last calibration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub achieved: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl Default for LevelConfig {
    fn default() -> Self {
        Self { index: 0, target: DEFAULT_COARSEST, k: None, min_size: None, features: None, achieved: None, warning: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    #[serde(flatten)]
    pub classifier: TrainConfig,
    /// Negatives kept per positive sample.
    pub negative_ratio: f64,
    /// Minimum IoU between a thresholded coarse proposal and a GT object for
    /// the proposal to be used in training.
    pub match_iou: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { classifier: TrainConfig::default(), negative_ratio: 3.0, match_iou: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineSettings {
    /// Classifier probability above which a superpixel is object.
    pub threshold: f64,
    /// Threshold applied to coarse windows for the baseline masks.
    pub coarse_threshold: f64,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self { threshold: 0.5, coarse_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Directory of calibration images.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    /// Dataset manifest listing images, feature maps, GT and proposals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Parameters shared by all levels unless a level overrides them.
    pub fh: FhParams,
    pub levels: Vec<LevelConfig>,
    pub calibration: CalibrationConfig,
    pub postprocess: PostprocessConfig,
    pub metrics: MetricsConfig,
    pub train: TrainSettings,
    pub refine: RefineSettings,
    pub synth: SynthConfig,
    pub paths: PathsConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fh: FhParams::default(),
            levels: levels_from_targets(&geometric_targets(DEFAULT_FINEST, DEFAULT_COARSEST, DEFAULT_LEVELS)),
            calibration: CalibrationConfig::default(),
            postprocess: PostprocessConfig::default(),
            metrics: MetricsConfig::default(),
            train: TrainSettings::default(),
            refine: RefineSettings::default(),
            synth: SynthConfig::default(),
            paths: PathsConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

pub fn levels_from_targets(targets: &[usize]) -> Vec<LevelConfig> {
    targets.iter().enumerate().map(|(index, &target)| LevelConfig { index, target, ..LevelConfig::default() }).collect()
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ToolkitError::io(path, e))?;
        let parse_err = |reason: String| ToolkitError::Parse { path: path.to_path_buf(), reason };
        let mut cfg: RunConfig = if is_json(path) {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate().map_err(|e| match e {
            ToolkitError::Config(reason) => parse_err(reason),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_json(path) {
            serde_json::to_string_pretty(self).expect("config serializes")
        } else {
            toml::to_string_pretty(self).map_err(|e| ToolkitError::Parse { path: path.to_path_buf(), reason: e.to_string() })?
        };
        crate::formats::write_file(path, text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: spxrefine_core::Error| ToolkitError::Config(e.to_string());
        if self.levels.is_empty() {
            return Err(ToolkitError::Config("at least one level is required".into()));
        }
        for (i, level) in self.levels.iter().enumerate() {
            if level.index != i {
                return Err(ToolkitError::Config(format!("levels[{i}].index is {}, expected {i}", level.index)));
            }
            if level.target == 0 {
                return Err(ToolkitError::Config(format!("levels[{i}].target must be positive")));
            }
            self.level_params(i).validate().map_err(cfg_err)?;
        }
        if self.levels.windows(2).any(|p| p[0].target <= p[1].target) {
            return Err(ToolkitError::Config("level targets must descend from finest to coarsest".into()));
        }
        self.postprocess.validate().map_err(cfg_err)?;
        self.metrics.validate().map_err(cfg_err)?;
        if !(self.train.negative_ratio > 0.0) {
            return Err(ToolkitError::Config("train.negative_ratio must be positive".into()));
        }
        for (name, t) in [("refine.threshold", self.refine.threshold), ("refine.coarse_threshold", self.refine.coarse_threshold)] {
            if !(0.0..1.0).contains(&t) {
                return Err(ToolkitError::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        self.synth.validate()?;
        Ok(())
    }

    /// Effective segmentation parameters of one level.
    pub fn level_params(&self, level: usize) -> FhParams {
        let l = &self.levels[level];
        FhParams { k: l.k.unwrap_or(self.fh.k), min_size: l.min_size.unwrap_or(self.fh.min_size), ..self.fh }
    }

    /// Replaces the levels with `n` geometric steps between the current
    /// finest and coarsest targets.
    pub fn set_level_count(&mut self, n: usize) {
        let finest = self.levels.first().map_or(DEFAULT_FINEST, |l| l.target);
        let coarsest = match self.levels.len() {
            0 | 1 => DEFAULT_COARSEST.min(finest),
            _ => self.levels.last().expect("non-empty").target,
        };
        self.levels = levels_from_targets(&geometric_targets(finest, coarsest, n));
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn require_path(&self, value: &Option<PathBuf>, field: &str) -> Result<PathBuf> {
        value
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| ToolkitError::Config(format!("paths.{field} is not set")))
    }
}
