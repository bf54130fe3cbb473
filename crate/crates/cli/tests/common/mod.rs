#![allow(dead_code)]

use std::path::{Path, PathBuf};

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
calibration = "calib.toml"
[mount]
base_gripper = [0.30, 0.0, 0.30, 1.0, 0.0, 0.0, 0.0]
delta_c2g = [0.0, -0.05, 0.12]
[sync]
pose_rate_hz = 200
camera_rate_hz = 60
"#;

pub const CALIBRATION: &str = r#"
[gripper]
d_max_px = 620.0
d_min_px = 180.0
g_max_mm = 86.0
axis_u_px = 540.0
left_id = 0
right_id = 1
[compensation]
d_close = 0.010
d_open = 0.0
w_max = 0.086
"#;

pub const KINEMATICS: &str = r#"
[kinematics]
chain = "arm6.toml"
seed = [0.0, 0.3, -0.6, 0.0, 0.3, 0.0]
"#;

pub const ARM6: &str = include_str!("../../../core/fixtures/arm6.toml");

/// Temporary working directory with a generator spec, a pipeline config
/// (`extra` appended), the calibration file and the arm fixture.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("gen.toml"), GENERATOR).unwrap();
        std::fs::write(dir.path().join("pipeline.toml"), format!("{CONFIG}\n{extra}")).unwrap();
        std::fs::write(dir.path().join("calib.toml"), CALIBRATION).unwrap();
        std::fs::write(dir.path().join("arm6.toml"), ARM6).unwrap();
        Self { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    pub fn logs(&self) -> (PathBuf, PathBuf, PathBuf) {
        (self.path("logs/pose_log.csv"), self.path("logs/camera_log.csv"), self.path("logs/truth.csv"))
    }

    pub fn generate(&self, seed: Option<u64>) {
        teleop_cli::cmd_generate(&self.path("gen.toml"), &self.path("logs"), seed).unwrap();
    }
}

pub fn bin() -> &'static Path {
    Path::new(env!("CARGO_BIN_EXE_teleop"))
}
