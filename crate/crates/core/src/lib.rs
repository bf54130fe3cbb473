//! Core library for turning tracked handheld-gripper recordings into robot
//! training episodes.

pub mod compensation;
pub mod config;
pub mod dataset;
pub mod geometry;
pub mod gripper;
pub mod kinematics;
pub mod logs;
pub mod pipeline;
pub mod quality;
pub mod simgen;
pub mod sync;

pub use geometry::{Pose, RelativePose, TrackerMount, UnitQuaternion, Vec3};
