//! Width-dependent TCP compensation for grippers whose fingertips move along
//! the tool axis as they close.
//!
//! `d(w) = d_close - (d_close - d_open) / w_max * w`, and the commanded TCP
//! is pulled back along its local z axis: `p' = p - d * R e_z`.

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec3};
use crate::kinematics::{inverse, IkConfig, JointVector, KinematicChain, KinematicsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompensationError {
    #[error("invalid compensation parameters: {0}")]
    Params(String),
    #[error("width {w} m outside [0, {w_max}] m")]
    WidthOutOfRange { w: f64, w_max: f64 },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthRangeMode {
    /// Clamp to `[0, w_max]` and log a warning.
    #[default]
    Clamp,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationParams {
    /// Offset at a fully closed gripper, m.
    pub d_close: f64,
    /// Offset at a fully open gripper, m.
    pub d_open: f64,
    /// Full opening, m.
    pub w_max: f64,
    #[serde(default)]
    pub range_mode: WidthRangeMode,
}

impl CompensationParams {
    pub fn new(d_close: f64, d_open: f64, w_max: f64) -> Result<Self, CompensationError> {
        let p = Self {
            d_close,
            d_open,
            w_max,
            range_mode: WidthRangeMode::Clamp,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn strict(mut self) -> Self {
        self.range_mode = WidthRangeMode::Strict;
        self
    }

    pub fn validate(&self) -> Result<(), CompensationError> {
        if !(self.d_open >= 0.0 && self.d_close >= self.d_open && self.d_close.is_finite()) {
            return Err(CompensationError::Params(format!(
                "need d_close >= d_open >= 0, got d_close = {}, d_open = {}",
                self.d_close, self.d_open
            )));
        }
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return Err(CompensationError::Params(format!("w_max must be positive, got {}", self.w_max)));
        }
        Ok(())
    }

    /// Zero compensation.
    pub fn none(w_max: f64) -> Self {
        Self {
            d_close: 0.0,
            d_open: 0.0,
            w_max,
            range_mode: WidthRangeMode::Clamp,
        }
    }
}

/// Compensation distance for width `w` (m).
pub fn compensation_distance(w: f64, params: &CompensationParams) -> Result<f64, CompensationError> {
    let w = if (0.0..=params.w_max).contains(&w) {
        w
    } else {
        match params.range_mode {
            WidthRangeMode::Strict => {
                return Err(CompensationError::WidthOutOfRange { w, w_max: params.w_max })
            }
            WidthRangeMode::Clamp if w.is_nan() => {
                return Err(CompensationError::WidthOutOfRange { w, w_max: params.w_max })
            }
            WidthRangeMode::Clamp => {
                log::warn!("width {w} m clamped to [0, {}] m", params.w_max);
                w.clamp(0.0, params.w_max)
            }
        }
    };
    if w == params.w_max {
        return Ok(params.d_open);
    }
    Ok(params.d_close - (params.d_close - params.d_open) / params.w_max * w)
}

/// Moves the pose by `-d` along its own z axis. Orientation is untouched.
pub fn corrected_tcp(pose: &Pose, d: f64) -> Pose {
    let z = pose.orientation.rotate(Vec3::UNIT_Z);
    Pose {
        position: pose.position - z * d,
        orientation: pose.orientation,
    }
}

/// IK on the compensated TCP for gripper width `w` (m).
pub fn compensated_joint_command(
    chain: &KinematicChain,
    pose: &Pose,
    w: f64,
    params: &CompensationParams,
    seed: &JointVector,
    cfg: &IkConfig,
) -> Result<JointVector, CompensationError> {
    let d = compensation_distance(w, params)?;
    Ok(inverse(chain, &corrected_tcp(pose, d), seed, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub w: f64,
    pub d: f64,
    pub corrected: Pose,
}

/// `steps + 1` evenly spaced widths from 0 to `w_max`.
pub fn sweep(
    pose: &Pose,
    params: &CompensationParams,
    steps: usize,
) -> Result<Vec<SweepRow>, CompensationError> {
    params.validate()?;
    let steps = steps.max(1);
    (0..=steps)
        .map(|k| {
            let w = if k == steps {
                params.w_max
            } else {
                params.w_max * k as f64 / steps as f64
            };
            let d = compensation_distance(w, params)?;
            Ok(SweepRow {
                w,
                d,
                corrected: corrected_tcp(pose, d),
            })
        })
        .collect()
}
