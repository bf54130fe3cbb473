#![allow(dead_code)]

use teleop_core::config::PipelineConfig;
use teleop_core::simgen::GeneratorSpec;

pub const GENERATOR: &str = r#"
seed = 11
[trajectory]
duration_s = 6.0
profile = "min_jerk"
waypoints = [
  [0.30, 0.00, 0.30, 1.0, 0.0, 0.0, 0.0],
  [0.42, 0.08, 0.22, 0.9950041652780258, -0.0998334166468282, 0.0, 0.0],
  [0.35, -0.06, 0.26, -0.9987502603949663, 0.0, 0.0, 0.04997916927067833],
]
widths_mm = [86.0, 20.0, 60.0]
[sensors]
pose_rate_hz = 200
camera_rate_hz = 60
[mount]
base_gripper = [0.30, 0.0, 0.30, 1.0, 0.0, 0.0, 0.0]
delta_c2g = [0.0, -0.05, 0.12]
[gripper]
d_max_px = 620.0
d_min_px = 180.0
g_max_mm = 86.0
axis_u_px = 540.0
left_id = 0
right_id = 1
"#;

pub const CONFIG: &str = r#"
task = "pick_cup"
episode_index = 0
[mount]
base_gripper = [0.30, 0.0, 0.30, 1.0, 0.0, 0.0, 0.0]
delta_c2g = [0.0, -0.05, 0.12]
[sync]
pose_rate_hz = 200
camera_rate_hz = 60
[gripper]
d_max_px = 620.0
d_min_px = 180.0
g_max_mm = 86.0
axis_u_px = 540.0
left_id = 0
right_id = 1
"#;

pub fn generator() -> GeneratorSpec {
    GeneratorSpec::from_toml(GENERATOR).unwrap()
}

pub fn config() -> PipelineConfig {
    PipelineConfig::from_toml(CONFIG).unwrap()
}

pub fn config_with(extra: &str) -> PipelineConfig {
    PipelineConfig::from_toml(&format!("{CONFIG}\n{extra}")).unwrap()
}
