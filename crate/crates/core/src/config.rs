//! Pipeline configuration loaded from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::EstimatorConfig;
use crate::geometry::{ImageSize, PlaneFraction};
use crate::mesh::GridSpec;
use crate::smoothing::{Mode, OptimizerConfig, SmoothingConfig};
use crate::trajectory::check_window_len;

/// Environment variable overriding the worker thread budget.
pub const THREADS_ENV: &str = "STABWEAVE_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Control points per column.
    pub grid_rows: usize,
    /// Control points per row.
    pub grid_cols: usize,
    /// Position of the shared mid-plane between the reference (0) and target (1) views.
    pub beta: f64,
    /// Sliding-window length.
    pub window: usize,
    pub mode: Mode,
    /// Working resolution; inputs are resized to it when `resize` is set.
    pub width: u32,
    pub height: u32,
    pub resize: bool,
    /// Extra canvas border around the first frame's footprint in online mode, px.
    pub canvas_margin: f64,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub smoothing: SmoothingConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid_rows: 7,
            grid_cols: 9,
            beta: 0.5,
            window: 7,
            mode: Mode::Online,
            width: 480,
            height: 360,
            resize: true,
            canvas_margin: 32.0,
            threads: 0,
            seed: 0x5eed,
            estimator: EstimatorConfig::default(),
            smoothing: SmoothingConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_window_len(self.window)?;
        PlaneFraction::new(self.beta)?;
        self.grid_spec().validate()?;
        self.estimator().validate()?;
        self.smoothing.validate(self.window)?;
        self.optimizer.validate()?;
        if !(self.canvas_margin >= 0.0 && self.canvas_margin.is_finite()) {
            return Err(Error::InvalidConfig("canvas_margin must be non-negative".into()));
        }
        Ok(())
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            rows: self.grid_rows,
            cols: self.grid_cols,
            size: self.size(),
        }
    }

    /// Estimator settings with the pipeline's mid-plane fraction and seed.
    pub fn estimator(&self) -> EstimatorConfig {
        let mut e = self.estimator.clone();
        if let Ok(b) = PlaneFraction::new(self.beta) {
            e.beta = b;
        }
        e.seed = self.seed;
        e
    }

    /// Thread budget after applying the environment override.
    pub fn thread_budget(&self) -> Result<usize> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v} is not a thread count"))),
            Err(_) => Ok(self.threads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.smoothing.weights.smooth, 50.0);
        assert_eq!(c.grid_spec().len(), 63);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"window": 9, "mode": "offline"}"#).unwrap();
        assert_eq!(c.window, 9);
        assert_eq!(c.mode, Mode::Offline);
        assert_eq!(c.beta, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"windw": 9}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"smoothing": {"weights": {"smoth": 1}}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for c in [
            PipelineConfig { window: 8, ..Default::default() },
            PipelineConfig { beta: 1.5, ..Default::default() },
            PipelineConfig { grid_rows: 2, ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn estimator_inherits_beta() {
        let c = PipelineConfig { beta: 0.25, ..Default::default() };
        assert_eq!(c.estimator().beta.get(), 0.25);
    }
}
