//! TOML configuration for the processing pipeline and the stream generator.
//!
//! ```toml
//! task = "pick_cup"
//! episode_index = 0
//!
//! [mount]
//! base_gripper = [0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0]   # x y z qx qy qz qw
//! delta_c2g = [0.0, -0.05, 0.12]
//!
//! [sync]
//! pose_rate_hz = 200
//! camera_rate_hz = 60
//!
//! [quality]
//! v_max = 1.5
//! policy = { mode = "lenient", max_violations = 3 }
//!
//! [gripper]
//! d_max_px = 620.0
//! d_min_px = 180.0
//! g_max_mm = 86.0
//! axis_u_px = 540.0
//! left_id = 0
//! right_id = 1
//!
//! [output]
//! mode = "joint"
//!
//! [kinematics]
//! chain = "arm6.toml"      # relative to this file
//! ```
//!
//! `[gripper]` and `[compensation]` may instead live in a separate file named
//! by `calibration = "calib.toml"`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compensation::CompensationParams;
use crate::geometry::{Pose, TrackerMount, UnitQuaternion, Vec3};
use crate::gripper::{GripperCalib, ImputeMethod};
use crate::kinematics::{IkConfig, NonRevolutePolicy, ParseOptions};
use crate::quality::QualityThresholds;
use crate::sync::SyncConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn pose_from_row(row: &[f64; 7], what: &str) -> Result<Pose, ConfigError> {
    Pose::from_row(row).map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))
}

/// Tracker mounting in row form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountConfig {
    /// `[x, y, z, qx, qy, qz, qw]` of the gripper at the first tracker sample.
    pub base_gripper: [f64; 7],
    pub delta_c2g: [f64; 3],
    /// `[qx, qy, qz, qw]`; defaults to the base gripper orientation.
    #[serde(default)]
    pub base_rotation: Option<[f64; 4]>,
}

impl MountConfig {
    pub fn to_mount(&self) -> Result<TrackerMount, ConfigError> {
        if self.delta_c2g.iter().any(|v| !v.is_finite()) || self.base_gripper.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::Invalid("mount offsets must be finite".into()));
        }
        let mut m = TrackerMount::new(
            pose_from_row(&self.base_gripper, "mount.base_gripper")?,
            Vec3::from_array(self.delta_c2g),
        );
        if let Some(q) = self.base_rotation {
            m.base_rotation = Some(
                UnitQuaternion::from_array(q).map_err(|e| ConfigError::Invalid(format!("mount.base_rotation: {e}")))?,
            );
        }
        Ok(m)
    }

    pub fn from_mount(m: &TrackerMount) -> Self {
        Self {
            base_gripper: m.base_gripper.to_row(),
            delta_c2g: m.delta_c2g.to_array(),
            base_rotation: m.base_rotation.map(|q| q.to_array()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    #[default]
    TcpAbsolute,
    TcpRelative,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageStorage {
    /// Per-frame image paths.
    #[default]
    External,
    /// Zero-filled `(T, H, W, 3)` frames of the configured size.
    Blank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub mode: OutputMode,
    pub camera_name: String,
    pub images: ImageStorage,
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            mode: OutputMode::TcpAbsolute,
            camera_name: crate::dataset::DEFAULT_CAMERA.into(),
            images: ImageStorage::External,
            image_height: crate::dataset::DEFAULT_IMAGE_HEIGHT,
            image_width: crate::dataset::DEFAULT_IMAGE_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    pub enabled: bool,
    pub align_tol_m: f64,
    pub closure_tol_m: f64,
    /// Abort when the verdict is `reinitialize`.
    pub gate: bool,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            align_tol_m: 0.002,
            closure_tol_m: 0.015,
            gate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicsConfig {
    pub chain: PathBuf,
    #[serde(default)]
    pub seed: Option<Vec<f64>>,
    #[serde(default)]
    pub tip_link: Option<String>,
    #[serde(default)]
    pub non_revolute: NonRevolutePolicy,
    /// `[x, y, z, qx, qy, qz, qw]` appended after the chain tip.
    #[serde(default)]
    pub flange_to_gripper: Option<[f64; 7]>,
    #[serde(default)]
    pub ik: IkConfig,
}

impl KinematicsConfig {
    pub fn parse_options(&self) -> Result<ParseOptions, ConfigError> {
        Ok(ParseOptions {
            non_revolute: self.non_revolute,
            tip_link: self.tip_link.clone(),
            flange_to_gripper: self
                .flange_to_gripper
                .map(|r| pose_from_row(&r, "kinematics.flange_to_gripper"))
                .transpose()?,
        })
    }
}

/// Gripper calibration and compensation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub gripper: GripperCalib,
    #[serde(default)]
    pub compensation: Option<CompensationParams>,
}

impl CalibrationFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        parse(&read(path)?, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default)]
    pub episode_index: u64,
    pub mount: MountConfig,
    pub sync: SyncConfig,
    #[serde(default)]
    pub quality: QualityThresholds,
    #[serde(default)]
    pub drift: DriftConfig,
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub gripper: Option<GripperCalib>,
    #[serde(default)]
    pub impute: ImputeMethod,
    #[serde(default)]
    pub compensation: Option<CompensationParams>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub kinematics: Option<KinematicsConfig>,
}

fn default_task() -> String {
    "task".into()
}

/// Parsed configuration plus the text it came from (for digests) and the
/// directory relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse(text, Path::new("<config>"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = read(path)?;
        let mut config: Self = parse(&text, path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(calib_path) = &config.calibration {
            let calib = CalibrationFile::load(&base_dir.join(calib_path))?;
            config.gripper.get_or_insert(calib.gripper);
            if config.compensation.is_none() {
                config.compensation = calib.compensation;
            }
        }
        if let Some(k) = &mut config.kinematics {
            k.chain = base_dir.join(&k.chain);
        }
        config.validate()?;
        Ok(LoadedConfig {
            config,
            text,
            base_dir,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mount.to_mount()?;
        self.sync
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let q = &self.quality;
        if !(q.v_max > 0.0 && q.a_max > 0.0 && q.dtheta_max > 0.0) {
            return Err(ConfigError::Invalid("smoothness thresholds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&q.high_conf_fraction) {
            return Err(ConfigError::Invalid("high_conf_fraction must lie in [0, 1]".into()));
        }
        if let Some(g) = &self.gripper {
            g.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(c) = &self.compensation {
            c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.output.mode == OutputMode::Joint && self.kinematics.is_none() {
            return Err(ConfigError::Invalid("output mode `joint` needs a [kinematics] section".into()));
        }
        if self.output.images == ImageStorage::Blank && (self.output.image_height == 0 || self.output.image_width == 0) {
            return Err(ConfigError::Invalid("blank images need a positive size".into()));
        }
        if self.drift.enabled && !(self.drift.align_tol_m >= 0.0 && self.drift.closure_tol_m >= self.drift.align_tol_m) {
            return Err(ConfigError::Invalid("need 0 <= align_tol_m <= closure_tol_m".into()));
        }
        Ok(())
    }

    pub fn mount(&self) -> TrackerMount {
        self.mount.to_mount().expect("validated")
    }
}
