//! The single JSON document describing a rig, a scene and a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeParams, PatternParams};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::pbrdf::MaterialParams;
use crate::recon::EstimationConfig;
use crate::render::{CameraModel, Scene};
use crate::slm::{calibrate_photometry, ProjectorModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotometryConfig {
    pub source_aolp_deg: f64,
    pub source_intensity: f64,
    /// Relative DoLP loss toward `v = 0`.
    pub dolp_mismatch: f64,
}

impl Default for PhotometryConfig {
    fn default() -> Self {
        Self {
            source_aolp_deg: 0.0,
            source_intensity: 1.0,
            dolp_mismatch: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorConfig {
    pub intrinsics: Intrinsics,
    /// World to projector.
    pub pose: Pose,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub photometry: PhotometryConfig,
    #[serde(default)]
    pub psf_sigma: f64,
}

impl ProjectorConfig {
    pub fn model(&self) -> ProjectorModel {
        let p = &self.photometry;
        ProjectorModel {
            intrinsics: self.intrinsics,
            pose: self.pose,
            width: self.width,
            height: self.height,
            photometry: calibrate_photometry(p.source_aolp_deg.to_radians(), p.source_intensity, p.dolp_mismatch),
            psf_sigma: self.psf_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Gaussian sigma relative to the brightest raw value of each frame.
    pub sigma: f64,
    /// Route frames through the polarizer mosaic and back.
    pub mosaic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Board-to-camera poses of the simulated boards.
    pub boards: Vec<Pose>,
    /// Half side length of the square board.
    pub half_extent: f64,
    pub material: MaterialParams,
    pub albedo: f64,
    /// Return the configured projector geometry instead of estimating it.
    pub ground_truth: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let boards = [
            ([0.0, 0.0, 0.0], [0.0, 0.0, 2.0]),
            ([0.3, 0.0, 0.0], [0.0, 0.0, 1.8]),
            ([-0.3, 0.0, 0.0], [0.0, 0.0, 2.2]),
            ([0.0, 0.3, 0.0], [0.0, 0.0, 2.0]),
            ([0.0, -0.3, 0.1], [0.0, 0.0, 1.9]),
        ];
        Self {
            boards: boards.iter().map(|(r, t)| Pose::new(*r, *t)).collect(),
            half_extent: 0.4,
            material: MaterialParams {
                mu: 1.5,
                k_s: 0.8,
                roughness: 0.4,
                shape: 2.0,
                kappa: 1.0,
                entry_polarization: false,
            },
            albedo: 0.3,
            ground_truth: false,
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub camera: CameraModel,
    pub projector: ProjectorConfig,
    #[serde(default)]
    pub scene: Scene,
    #[serde(default)]
    pub patterns: PatternParams,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub seed: u64,
    /// 1 for monochrome, 3 for RGB.
    #[serde(default = "one")]
    pub channels: usize,
}

impl RigConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RigConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RigConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidConfig("channels must be 1 or 3".into()));
        }
        if self.decode.channel >= self.channels {
            return Err(Error::InvalidConfig("decode channel exceeds channel count".into()));
        }
        if !(self.noise.sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be non-negative".into()));
        }
        self.camera.validate()?;
        self.projector.model().validate()?;
        self.patterns.validate(self.projector.width)?;
        self.scene.validate(self.channels)?;
        if !(self.calibration.half_extent > 0.0) {
            return Err(Error::InvalidConfig("board half extent must be positive".into()));
        }
        self.calibration.material.validate()?;
        self.estimation.validate()
    }
}
