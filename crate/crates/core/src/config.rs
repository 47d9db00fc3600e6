//! Run configuration loaded from TOML. Every field has a default, so a
//! partial file overrides only what it names.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::{ALPHA_TEST, ALPHA_TRAIN, K_MAX_DIGITS};
use crate::consensus::{ConsensusConfig, Objective, ResolutionConfig, ResolutionMode};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::objective::{Constraint, SaprState};
use crate::scene::{PosteriorNoise, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsConfig {
    pub alpha_train: f64,
    pub alpha_test: f64,
    pub k_max: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig { alpha_train: ALPHA_TRAIN, alpha_test: ALPHA_TEST, k_max: K_MAX_DIGITS }
    }
}

/// Constraint bounds in user-facing units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaprConfig {
    pub rec: (f64, f64),
    /// Expected instances per processing window.
    pub objects_per_window: (f64, f64),
    /// Expected foreground fraction.
    pub area: (f64, f64),
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub step: f64,
}

impl Default for SaprConfig {
    fn default() -> Self {
        SaprConfig {
            rec: (0.0, 1.0),
            objects_per_window: (5.0, 10.0),
            area: (0.10, 0.15),
            lambda_lo: Constraint::LAMBDA_LO,
            lambda_hi: Constraint::LAMBDA_HI,
            step: Constraint::STEP,
        }
    }
}

impl SaprConfig {
    /// Initial controller state; instance counts become grid densities.
    pub fn state(&self, grid: &GridSpec) -> Result<SaprState> {
        let cells = grid.coarse_len() as f64;
        let make = |(lo, hi): (f64, f64)| -> Result<Constraint> {
            let c = Constraint { lambda_lo: self.lambda_lo, lambda_hi: self.lambda_hi, step: self.step, ..Constraint::new(lo, hi)? };
            let c = Constraint { lambda: Constraint::LAMBDA_INIT.clamp(c.lambda_lo, c.lambda_hi), ..c };
            c.validate()?;
            Ok(c)
        };
        let (dlo, dhi) = self.objects_per_window;
        Ok(SaprState { rec: make(self.rec)?, density: make((dlo / cells, dhi / cells))?, area: make(self.area)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosteriorConfig {
    pub noise: PosteriorNoise,
    pub n_post: usize,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig { noise: PosteriorNoise::default(), n_post: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub window_px: usize,
    pub stride_px: usize,
    pub objective: Objective,
    pub gamma: f64,
    /// Candidates for automatic resolution and for sweeps.
    pub gamma_grid: Vec<f64>,
    /// Displacement cut-off; defaults to the minimum object size.
    pub d_c: Option<f64>,
    pub e_min: f64,
    pub fg_threshold: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            window_px: 80,
            stride_px: 20,
            objective: Objective::Rb,
            gamma: 1.0,
            gamma_grid: vec![0.5, 1.0, 2.0, 4.0],
            d_c: None,
            e_min: ResolutionConfig::E_MIN,
            fg_threshold: ConsensusConfig::FG_THRESHOLD,
        }
    }
}

impl SegmentConfig {
    pub fn resolution(&self, min_obj_px: usize) -> ResolutionConfig {
        ResolutionConfig { objective: self.objective, gamma: self.gamma, d_c: self.d_c.unwrap_or(min_obj_px as f64), e_min: self.e_min }
    }

    pub fn consensus(&self, min_obj_px: usize, auto: bool) -> ConsensusConfig {
        ConsensusConfig {
            window_px: self.window_px,
            stride_px: self.stride_px,
            resolution: self.resolution(min_obj_px),
            mode: if auto { ResolutionMode::Auto { grid: self.gamma_grid.clone() } } else { ResolutionMode::Fixed },
            fg_threshold: self.fg_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_train: 5000, n_test: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub scene: SceneConfig,
    pub nms: NmsConfig,
    pub sapr: SaprConfig,
    pub posterior: PosteriorConfig,
    pub segment: SegmentConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        for a in [self.nms.alpha_train, self.nms.alpha_test] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::param(format!("NMS threshold {a} outside (0, 1]")));
            }
        }
        if self.nms.k_max == 0 {
            return Err(Error::param("k_max must be positive"));
        }
        self.sapr.state(&self.scene.grid)?;
        self.posterior.noise.validate()?;
        if self.posterior.n_post == 0 {
            return Err(Error::param("n_post must be positive"));
        }
        let seg = &self.segment;
        seg.consensus(self.scene.grid.min_obj_px, false).validate()?;
        if seg.gamma_grid.len() >= 2 {
            seg.consensus(self.scene.grid.min_obj_px, true).validate()?;
        }
        Ok(())
    }
}
