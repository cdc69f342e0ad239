//! Versioned TOML experiment configuration with `section.key=value`
//! overrides.

use std::path::Path;

use occface_core::occlusion::DetectionConfig;
use occface_core::preprocess::MedianFilterConfig;
use occface_core::recognition::TrainConfig;
use occface_core::registration::IcpConfig;
use occface_core::restoration::ComponentCount;
use occface_core::synth::SynthParams;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub grid: GridConfig,
    pub median: MedianStage,
    pub icp: IcpConfig,
    pub projection: ProjectionConfig,
    pub detection: DetectionConfig,
    pub restoration: RestorationConfig,
    pub features: FeatureConfig,
    pub recognition: RecognitionConfig,
    /// Generator settings for `synth`.
    pub synth: SynthParams,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            grid: GridConfig::default(),
            median: MedianStage::default(),
            icp: IcpConfig {
                rejection_fraction: 0.3,
                max_restarts: 0,
                ..IcpConfig::default()
            },
            projection: ProjectionConfig::default(),
            detection: DetectionConfig::default(),
            restoration: RestorationConfig::default(),
            features: FeatureConfig::default(),
            recognition: RecognitionConfig::default(),
            synth: SynthParams::default(),
        }
    }
}

/// Target grid for registered scans. A manifest's own grid takes
/// precedence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub pixel_spacing: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 48,
            height: 48,
            pixel_spacing: 1.0 / 47.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedianStage {
    pub enabled: bool,
    pub window_radius: usize,
    /// Row-major `(2r+1)^2` weights; uniform when absent.
    pub weights: Option<Vec<u32>>,
}

impl Default for MedianStage {
    fn default() -> Self {
        Self {
            enabled: true,
            window_radius: 1,
            weights: None,
        }
    }
}

impl MedianStage {
    pub fn filter(&self) -> MedianFilterConfig {
        match &self.weights {
            Some(w) => MedianFilterConfig {
                window_radius: self.window_radius,
                weights: w.clone(),
            },
            None => MedianFilterConfig::uniform(self.window_radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Hole-filling passes after projecting a registered cloud; 0 keeps
    /// holes.
    pub fill_passes: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { fill_passes: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestorationConfig {
    pub components: ComponentCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub downsample_factor: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { downsample_factor: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionConfig {
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    pub ranks: Vec<usize>,
    pub classifier: TrainConfig,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        Self {
            test_fraction: 1.0 / 3.0,
            seeds: vec![0, 1, 2, 3, 4],
            ranks: vec![1, 2],
            classifier: TrainConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        Self::from_value(toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?)
    }

    fn from_value(value: toml::Table) -> AppResult<Self> {
        let cfg: Config = value.try_into().map_err(|e: toml::de::Error| AppError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(AppError::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that do not need any input data.
    pub fn validate(&self) -> AppResult<()> {
        self.icp.validate()?;
        if self.median.enabled {
            self.median.filter().validate()?;
        }
        let bad = |msg: &str| Err(AppError::Config(msg.into()));
        let d = &self.detection;
        if !(d.tolerance_fraction > 0.0 && d.tolerance_fraction <= 1.0) {
            return bad("detection.tolerance_fraction must lie in (0, 1]");
        }
        if !(d.quantile > 0.0 && d.quantile <= 1.0) {
            return bad("detection.quantile must lie in (0, 1]");
        }
        if self.grid.width == 0 || self.grid.height == 0 || self.grid.pixel_spacing.is_nan() || self.grid.pixel_spacing <= 0.0 {
            return bad("grid needs positive dimensions and pixel_spacing");
        }
        if self.features.downsample_factor == 0 {
            return bad("features.downsample_factor must be at least 1");
        }
        let r = &self.recognition;
        if !(r.test_fraction > 0.0 && r.test_fraction < 1.0) {
            return bad("recognition.test_fraction must lie in (0, 1)");
        }
        if r.ranks.contains(&0) {
            return bad("recognition.ranks must be at least 1");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Loads `path` (defaults when `None`) and applies `key.path=value`
    /// overrides in order. Values are parsed as TOML, falling back to a
    /// bare string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> AppResult<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
                toml::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::try_from(Config::default()).expect("config serializes"),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_value(table)
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> AppResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| AppError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| AppError::Config(format!("{key}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
