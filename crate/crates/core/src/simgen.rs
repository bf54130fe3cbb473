//! Synthetic ground truth and sensor streams.
//!
//! A TCP trajectory through waypoints is sampled, mapped back to tracker
//! readings through a [`TrackerMount`], corrupted with noise, drift and
//! confidence drops, and written out together with camera frames whose
//! marker detections encode the true jaw opening.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::config::MountConfig;
use crate::geometry::{Pose, TrackerMount, UnitQuaternion, Vec3};
use crate::gripper::{GripperCalib, MarkerDetection};
use crate::logs::TruthRecord;
use crate::quality::ConfidenceLevel;
use crate::sync::{CameraRecord, CameraSample, PoseRecord, PoseSample, StreamRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    MinJerk,
    Linear,
}

impl Profile {
    /// Path parameter for normalized segment time `tau` in `[0, 1]`.
    pub fn progress(self, tau: f64) -> f64 {
        let tau = tau.clamp(0.0, 1.0);
        match self {
            Self::Linear => tau,
            Self::MinJerk => tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau)),
        }
    }
}

/// Piecewise trajectory through waypoints. Segments share the duration
/// equally; with `MinJerk` every waypoint is a rest point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Pose>,
    /// Jaw opening at each waypoint, mm. Empty means fully open throughout.
    #[serde(default)]
    pub widths_mm: Vec<f64>,
    pub duration_s: f64,
    #[serde(default)]
    pub profile: Profile,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.waypoints.len() < 2 {
            return Err(SimError::Spec(format!(
                "need at least 2 waypoints, got {}",
                self.waypoints.len()
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SimError::Spec(format!("duration_s must be positive, got {}", self.duration_s)));
        }
        if !self.widths_mm.is_empty() && self.widths_mm.len() != self.waypoints.len() {
            return Err(SimError::Spec(format!(
                "widths_mm has {} entries for {} waypoints",
                self.widths_mm.len(),
                self.waypoints.len()
            )));
        }
        if self.waypoints.iter().any(|w| !w.position.is_finite()) {
            return Err(SimError::Spec("non-finite waypoint".into()));
        }
        Ok(())
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let segments = self.waypoints.len() - 1;
        let x = (t / self.duration_s).clamp(0.0, 1.0) * segments as f64;
        let k = (x.floor() as usize).min(segments - 1);
        (k, self.profile.progress(x - k as f64))
    }

    /// TCP pose at time `t`, clamped to `[0, duration_s]`.
    pub fn pose_at(&self, t: f64) -> Pose {
        let (k, s) = self.locate(t);
        let (a, b) = (&self.waypoints[k], &self.waypoints[k + 1]);
        if s == 0.0 {
            return *a;
        }
        if s == 1.0 {
            return *b;
        }
        Pose::new(
            a.position.lerp(b.position, s),
            a.orientation.slerp(&b.orientation, s),
        )
    }

    /// Jaw opening at time `t`, or `None` when no widths are given.
    pub fn width_at(&self, t: f64) -> Option<f64> {
        if self.widths_mm.is_empty() {
            return None;
        }
        let (k, s) = self.locate(t);
        let (a, b) = (self.widths_mm[k], self.widths_mm[k + 1]);
        Some(a + (b - a) * s)
    }

    /// Number of samples on a uniform grid at `rate_hz` covering the duration.
    pub fn sample_count(&self, rate_hz: f64) -> usize {
        (self.duration_s * rate_hz + 1e-9).floor() as usize + 1
    }
}

/// Samples the trajectory at `i / rate_hz`.
pub fn generate_truth(spec: &TrajectorySpec, rate_hz: f64) -> Result<Vec<(f64, Pose)>, SimError> {
    spec.validate()?;
    if !(rate_hz > 0.0) {
        return Err(SimError::Spec(format!("rate must be positive, got {rate_hz}")));
    }
    Ok((0..spec.sample_count(rate_hz))
        .map(|i| {
            let t = i as f64 / rate_hz;
            (t, spec.pose_at(t))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceDrops {
    /// Chance that a drop run starts at a given sample.
    pub probability: f64,
    /// Mean length of a run (geometric distribution, at least 1).
    pub mean_run: f64,
    pub level: ConfidenceLevel,
    /// Extra position noise on dropped samples, m (3D RMS).
    pub pos_sigma_m: f64,
}

impl Default for ConfidenceDrops {
    fn default() -> Self {
        Self {
            probability: 0.0,
            mean_run: 5.0,
            level: ConfidenceLevel::Low,
            pos_sigma_m: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// 3D RMS of the position error, m; each axis gets `pos_sigma_m / sqrt(3)`.
    pub pos_sigma_m: f64,
    /// Standard deviation of the rotation-error angle about a random axis.
    pub rot_sigma_rad: f64,
    /// Per-axis random-walk step of the position bias, m per pose sample.
    pub drift_walk_sigma: f64,
    /// Zero the drift bias when the true tracker path comes back within
    /// `snap_radius_m` of its start after leaving it.
    pub snap_back: bool,
    pub snap_radius_m: f64,
    pub confidence_drop: ConfidenceDrops,
    /// Per-marker chance of a missed detection.
    pub marker_dropout: f64,
    /// Per-axis pixel noise on marker centers.
    pub marker_px_sigma: f64,
    /// Uniform timestamp jitter half-widths, s.
    pub pose_jitter_s: f64,
    pub camera_jitter_s: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pos_sigma_m: 0.0,
            rot_sigma_rad: 0.0,
            drift_walk_sigma: 0.0,
            snap_back: false,
            snap_radius_m: 0.05,
            confidence_drop: ConfidenceDrops::default(),
            marker_dropout: 0.0,
            marker_px_sigma: 0.0,
            pose_jitter_s: 0.0,
            camera_jitter_s: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let sigmas = [
            self.pos_sigma_m,
            self.rot_sigma_rad,
            self.drift_walk_sigma,
            self.snap_radius_m,
            self.confidence_drop.pos_sigma_m,
            self.marker_px_sigma,
            self.pose_jitter_s,
            self.camera_jitter_s,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(SimError::Spec("noise magnitudes must be finite and >= 0".into()));
        }
        for p in [self.confidence_drop.probability, self.marker_dropout] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Spec(format!("probability {p} outside [0, 1]")));
            }
        }
        if !(self.confidence_drop.mean_run >= 1.0) {
            return Err(SimError::Spec("confidence_drop.mean_run must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sensor layout of the simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSetup {
    pub pose_rate_hz: u32,
    pub camera_rate_hz: u32,
    pub mount: TrackerMount,
    pub calib: GripperCalib,
    /// Image row of both marker centers.
    #[serde(default = "default_marker_v")]
    pub marker_v_px: f64,
}

fn default_marker_v() -> f64 {
    900.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub poses: Vec<PoseRecord>,
    pub camera: Vec<CameraRecord>,
    /// One record per camera frame.
    pub truth: Vec<TruthRecord>,
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

fn jitter(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Per-sample confidence with drop runs kept away from the first and last
/// sample so every run is bracketed by high-confidence samples.
fn confidence_pattern(n: usize, drops: &ConfidenceDrops, rng: &mut ChaCha8Rng) -> Vec<ConfidenceLevel> {
    let mut out = vec![ConfidenceLevel::High; n];
    if drops.probability == 0.0 || n < 3 {
        return out;
    }
    let run_len = Geometric::new(1.0 / drops.mean_run).expect("mean_run validated");
    let mut i = 1;
    while i + 1 < n {
        if rng.random::<f64>() < drops.probability {
            let len = 1 + run_len.sample(rng) as usize;
            let end = (i + len).min(n - 1);
            out[i..end].fill(drops.level);
            i = end + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Samples noisy pose and camera streams from a ground-truth trajectory.
///
/// Randomness comes from two generators: `seed` drives all noise, drift,
/// drops and dropouts; `timing_seed` drives timestamp jitter only, so
/// changing `seed` never moves timestamps.
pub fn sample_streams(
    spec: &TrajectorySpec,
    setup: &SensorSetup,
    noise: &NoiseModel,
    seed: u64,
    timing_seed: u64,
) -> Result<SimOutput, SimError> {
    spec.validate()?;
    noise.validate()?;
    setup
        .calib
        .validate()
        .map_err(|e| SimError::Spec(e.to_string()))?;
    if setup.pose_rate_hz == 0 || setup.camera_rate_hz == 0 {
        return Err(SimError::Spec("sensor rates must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut timing = ChaCha8Rng::seed_from_u64(timing_seed);

    let pose_rate = f64::from(setup.pose_rate_hz);
    let n_pose = spec.sample_count(pose_rate);
    let max_pose_jitter = 0.45 / pose_rate;
    if noise.pose_jitter_s > max_pose_jitter || noise.camera_jitter_s > 0.45 / f64::from(setup.camera_rate_hz) {
        return Err(SimError::Spec("timestamp jitter must stay below half a sample period".into()));
    }

    let axis_sigma = noise.pos_sigma_m / 3f64.sqrt();
    let pos_noise = gaussian(axis_sigma);
    let rot_noise = gaussian(noise.rot_sigma_rad);
    let walk = gaussian(noise.drift_walk_sigma);
    let drop_noise = gaussian(noise.confidence_drop.pos_sigma_m / 3f64.sqrt());
    let confidence = confidence_pattern(n_pose, &noise.confidence_drop, &mut rng);

    let start = setup.mount.tracker_for_tcp(&spec.pose_at(0.0)).position;
    let mut bias = Vec3::ZERO;
    let mut left_start = false;
    let mut poses = Vec::with_capacity(n_pose);
    for (i, &conf) in confidence.iter().enumerate() {
        let t = i as f64 / pose_rate + jitter(&mut timing, noise.pose_jitter_s);
        let truth = setup.mount.tracker_for_tcp(&spec.pose_at(t));
        if noise.drift_walk_sigma > 0.0 && i > 0 {
            bias += Vec3::new(walk.sample(&mut rng), walk.sample(&mut rng), walk.sample(&mut rng));
        }
        let near_start = (truth.position - start).norm() <= noise.snap_radius_m;
        if !near_start {
            left_start = true;
        } else if noise.snap_back && left_start {
            bias = Vec3::ZERO;
        }
        let mut position = truth.position + bias;
        if noise.pos_sigma_m > 0.0 {
            position += Vec3::new(
                pos_noise.sample(&mut rng),
                pos_noise.sample(&mut rng),
                pos_noise.sample(&mut rng),
            );
        }
        if conf != ConfidenceLevel::High && noise.confidence_drop.pos_sigma_m > 0.0 {
            position += Vec3::new(
                drop_noise.sample(&mut rng),
                drop_noise.sample(&mut rng),
                drop_noise.sample(&mut rng),
            );
        }
        let mut orientation = truth.orientation;
        if noise.rot_sigma_rad > 0.0 {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let angle = rot_noise.sample(&mut rng);
            orientation = UnitQuaternion::from_axis_angle(Vec3::from_array(axis), angle) * orientation;
        }
        poses.push(StreamRecord::new(t, PoseSample::new(Pose::new(position, orientation), conf)));
    }

    let cam_rate = f64::from(setup.camera_rate_hz);
    let n_cam = spec.sample_count(cam_rate);
    let px = gaussian(noise.marker_px_sigma);
    let calib = &setup.calib;
    let mut camera = Vec::with_capacity(n_cam);
    let mut truth = Vec::with_capacity(n_cam);
    for f in 0..n_cam {
        let t = f as f64 / cam_rate + jitter(&mut timing, noise.camera_jitter_s);
        let width_mm = spec.width_at(t).unwrap_or(calib.g_max_mm);
        let half = 0.5 * calib.distance_for_width(width_mm);
        let mut detections = Vec::with_capacity(2);
        for (id, u) in [(calib.left_id, calib.axis_u_px - half), (calib.right_id, calib.axis_u_px + half)] {
            if noise.marker_dropout > 0.0 && rng.random::<f64>() < noise.marker_dropout {
                continue;
            }
            let (du, dv) = if noise.marker_px_sigma > 0.0 {
                (px.sample(&mut rng), px.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            detections.push(MarkerDetection::new(id, u + du, setup.marker_v_px + dv));
        }
        let frame_index = f as u64;
        camera.push(StreamRecord::new(
            t,
            CameraSample {
                frame_index,
                image_ref: format!("frame_{frame_index:06}.png"),
                detections,
            },
        ));
        truth.push(TruthRecord {
            timestamp: t,
            frame_index,
            tcp: spec.pose_at(t),
            width_mm,
        });
    }
    Ok(SimOutput {
        poses,
        camera,
        truth,
    })
}

/// Generator input file.
///
/// ```toml
/// seed = 7
/// [trajectory]
/// duration_s = 10.0
/// profile = "min_jerk"
/// waypoints = [[0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0], [0.45, 0.1, 0.2, 1.0, 0.0, 0.0, 0.0]]
/// widths_mm = [86.0, 20.0]
/// [sensors]
/// pose_rate_hz = 200
/// camera_rate_hz = 60
/// [mount]
/// base_gripper = [0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0]
/// delta_c2g = [0.0, -0.05, 0.12]
/// [gripper]
/// d_max_px = 620.0
/// d_min_px = 180.0
/// g_max_mm = 86.0
/// axis_u_px = 540.0
/// left_id = 0
/// right_id = 1
/// [noise]
/// pos_sigma_m = 0.005
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub timing_seed: u64,
    pub trajectory: TrajectoryRows,
    pub sensors: SensorRates,
    pub mount: MountConfig,
    pub gripper: GripperCalib,
    #[serde(default)]
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRows {
    /// `[x, y, z, qx, qy, qz, qw]` TCP waypoints in the base frame.
    pub waypoints: Vec<[f64; 7]>,
    #[serde(default)]
    pub widths_mm: Vec<f64>,
    pub duration_s: f64,
    #[serde(default)]
    pub profile: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorRates {
    #[serde(default = "default_pose_rate")]
    pub pose_rate_hz: u32,
    #[serde(default = "default_camera_rate")]
    pub camera_rate_hz: u32,
    #[serde(default = "default_marker_v")]
    pub marker_v_px: f64,
}

fn default_pose_rate() -> u32 {
    200
}

fn default_camera_rate() -> u32 {
    60
}

impl GeneratorSpec {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let spec: Self = toml::from_str(text).map_err(|e| SimError::Spec(e.to_string()))?;
        spec.trajectory()?.validate()?;
        spec.setup()?;
        spec.noise.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data")
    }

    pub fn trajectory(&self) -> Result<TrajectorySpec, SimError> {
        let waypoints = self
            .trajectory
            .waypoints
            .iter()
            .enumerate()
            .map(|(i, r)| Pose::from_row(r).map_err(|e| SimError::Spec(format!("waypoint {i}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = TrajectorySpec {
            waypoints,
            widths_mm: self.trajectory.widths_mm.clone(),
            duration_s: self.trajectory.duration_s,
            profile: self.trajectory.profile,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn setup(&self) -> Result<SensorSetup, SimError> {
        Ok(SensorSetup {
            pose_rate_hz: self.sensors.pose_rate_hz,
            camera_rate_hz: self.sensors.camera_rate_hz,
            mount: self.mount.to_mount().map_err(|e| SimError::Spec(e.to_string()))?,
            calib: self.gripper,
            marker_v_px: self.sensors.marker_v_px,
        })
    }

    /// Runs the generator; `seed` overrides the file's seed when given.
    pub fn generate(&self, seed: Option<u64>) -> Result<SimOutput, SimError> {
        sample_streams(
            &self.trajectory()?,
            &self.setup()?,
            &self.noise,
            seed.unwrap_or(self.seed),
            self.timing_seed,
        )
    }
}
