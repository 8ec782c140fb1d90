//! Pipeline configuration. Loaded from TOML; unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::SUPPORTED_MEDIAN_KERNELS;

/// `ln(0.001)` rounded as used for the foreground threshold.
pub const DEFAULT_RHO: f64 = -6.907;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Background history length (frames). Also the number of leading
    /// frames consumed to initialise the background.
    pub n_history: usize,
    pub rho: f64,
    pub alpha: f64,
    pub sigma_floor_mm: f64,
    /// Minimum blob area at 640x480; scaled with frame area.
    pub min_blob_area: usize,
    pub median_kernel: usize,
    pub theta: u8,
    pub min_motion_pixels: usize,
    pub box_margin: f64,
    pub band_k: f64,
    pub sigma_f_floor_mm: f64,
    pub vote_threshold: f64,
    pub vote_window_s: f64,
    pub detector_period_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_history: 10,
            rho: DEFAULT_RHO,
            alpha: 0.05,
            sigma_floor_mm: 1.0,
            min_blob_area: 100,
            median_kernel: 5,
            theta: 20,
            min_motion_pixels: 4,
            box_margin: 0.10,
            band_k: 2.8,
            sigma_f_floor_mm: 5.0,
            vote_threshold: 0.80,
            vote_window_s: 60.0,
            detector_period_s: 10.0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply a `key=value` override (CLI `--set`).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let key = key.trim();
        let old = table
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        let value = value.trim();
        let new = match old {
            toml::Value::Integer(_) => value.parse::<i64>().map(toml::Value::Integer).ok(),
            toml::Value::Float(_) => value.parse::<f64>().map(toml::Value::Float).ok(),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("`{key}`: cannot parse `{value}`")))?;
        table.insert(key.to_string(), new);
        let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.to_string())) };
        check(self.n_history >= 2, "n_history must be >= 2")?;
        check(self.rho < 0.0 && self.rho.is_finite(), "rho must be negative")?;
        check((0.0..=1.0).contains(&self.alpha), "alpha must be in [0, 1]")?;
        check(
            self.sigma_floor_mm > 0.0 && self.sigma_floor_mm.is_finite(),
            "sigma_floor_mm must be > 0",
        )?;
        check(self.min_blob_area >= 1, "min_blob_area must be >= 1")?;
        check(
            SUPPORTED_MEDIAN_KERNELS.contains(&self.median_kernel),
            "median_kernel must be 3, 5 or 7",
        )?;
        check(self.theta > 0, "theta must be in 1..=255")?;
        check(
            self.box_margin > 0.0 && self.box_margin <= 1.0,
            "box_margin must be in (0, 1]",
        )?;
        check(self.band_k > 0.0 && self.band_k.is_finite(), "band_k must be > 0")?;
        check(
            self.sigma_f_floor_mm > 0.0 && self.sigma_f_floor_mm.is_finite(),
            "sigma_f_floor_mm must be > 0",
        )?;
        check(
            self.vote_threshold > 0.0 && self.vote_threshold <= 1.0,
            "vote_threshold must be in (0, 1]",
        )?;
        check(
            self.detector_period_s > 0.0 && self.detector_period_s.is_finite(),
            "detector_period_s must be > 0",
        )?;
        check(
            self.vote_window_s >= self.detector_period_s && self.vote_window_s.is_finite(),
            "vote_window_s must be >= detector_period_s",
        )?;
        Ok(())
    }

    /// Size filter threshold for a `width x height` frame.
    pub fn min_blob_area_for(&self, width: usize, height: usize) -> usize {
        let scale = (width * height) as f64 / (640.0 * 480.0);
        ((self.min_blob_area as f64 * scale).round() as usize).max(1)
    }

    /// Number of vote samples covering the vote window.
    pub fn vote_capacity(&self) -> usize {
        (self.vote_window_s / self.detector_period_s).round().max(1.0) as usize
    }
}
