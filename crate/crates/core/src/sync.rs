//! Unified-clock stream buffering, greatest-common-frequency sub-sampling and
//! nearest-pose pairing.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::gripper::MarkerDetection;
use crate::quality::ConfidenceLevel;

/// Timestamps closer than this are treated as equal when testing the pair
/// offset bound.
pub const TIMESTAMP_RESOLUTION_S: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyncError {
    #[error("stream `{stream}`: timestamp {next} does not follow {last}")]
    NonMonotonic { stream: String, last: f64, next: f64 },
    #[error("stream `{stream}`: timestamp {timestamp} is not finite")]
    NonFiniteTimestamp { stream: String, timestamp: f64 },
    #[error("stream `{stream}`: frame index {next} does not follow {last}")]
    FrameIndexOrder { stream: String, last: u64, next: u64 },
    #[error("invalid sync configuration: {0}")]
    Config(String),
}

/// One sample on the unified clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord<P> {
    /// Seconds.
    pub timestamp: f64,
    pub payload: P,
}

impl<P> StreamRecord<P> {
    pub fn new(timestamp: f64, payload: P) -> Self {
        Self { timestamp, payload }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub pose: Pose,
    pub confidence: ConfidenceLevel,
}

impl PoseSample {
    pub fn new(pose: Pose, confidence: ConfidenceLevel) -> Self {
        Self { pose, confidence }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSample {
    pub frame_index: u64,
    /// Path or other opaque handle to the frame image.
    pub image_ref: String,
    pub detections: Vec<MarkerDetection>,
}

pub type PoseRecord = StreamRecord<PoseSample>;
pub type CameraRecord = StreamRecord<CameraSample>;

/// Either kind of record, for routing into [`StreamBuffers`].
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Pose(PoseSample),
    Camera(CameraSample),
}

/// Append-only per-sensor buffer with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream<P> {
    id: String,
    records: Vec<StreamRecord<P>>,
}

impl<P> SensorStream<P> {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            records: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn records(&self) -> &[StreamRecord<P>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.records.last().map(|r| r.timestamp)
    }

    pub fn push(&mut self, record: StreamRecord<P>) -> Result<(), SyncError> {
        if !record.timestamp.is_finite() {
            return Err(SyncError::NonFiniteTimestamp {
                stream: self.id.clone(),
                timestamp: record.timestamp,
            });
        }
        if let Some(last) = self.last_timestamp() {
            if record.timestamp <= last {
                return Err(SyncError::NonMonotonic {
                    stream: self.id.clone(),
                    last,
                    next: record.timestamp,
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn into_records(self) -> Vec<StreamRecord<P>> {
        self.records
    }
}

pub const POSE_STREAM: &str = "pose";
pub const CAMERA_STREAM: &str = "camera";

/// The per-sensor buffers of one recording session.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBuffers {
    pub pose: SensorStream<PoseSample>,
    pub camera: SensorStream<CameraSample>,
}

impl Default for StreamBuffers {
    fn default() -> Self {
        Self {
            pose: SensorStream::new(POSE_STREAM),
            camera: SensorStream::new(CAMERA_STREAM),
        }
    }
}

impl StreamBuffers {
    pub fn new() -> Self {
        Self::default()
    }

    /// Routes a record to its stream. Rejected records leave every buffer
    /// untouched.
    pub fn ingest(&mut self, record: StreamRecord<Payload>) -> Result<(), SyncError> {
        let StreamRecord { timestamp, payload } = record;
        match payload {
            Payload::Pose(p) => self.pose.push(StreamRecord::new(timestamp, p)),
            Payload::Camera(c) => {
                if let Some(prev) = self.camera.records().last() {
                    if c.frame_index <= prev.payload.frame_index
                        && timestamp > prev.timestamp
                    {
                        return Err(SyncError::FrameIndexOrder {
                            stream: self.camera.id.clone(),
                            last: prev.payload.frame_index,
                            next: c.frame_index,
                        });
                    }
                }
                self.camera.push(StreamRecord::new(timestamp, c))
            }
        }
    }

    pub fn ingest_pose(&mut self, record: PoseRecord) -> Result<(), SyncError> {
        self.ingest(StreamRecord::new(record.timestamp, Payload::Pose(record.payload)))
    }

    pub fn ingest_camera(&mut self, record: CameraRecord) -> Result<(), SyncError> {
        self.ingest(StreamRecord::new(record.timestamp, Payload::Camera(record.payload)))
    }

    /// Empties every buffer before a new recording session.
    pub fn reset(&mut self) {
        self.pose.clear();
        self.camera.clear();
    }

    pub fn total_len(&self) -> usize {
        self.pose.len() + self.camera.len()
    }
}

/// Buffers fed by concurrent producers, one producer per stream. Each stream
/// has its own lock so producers never contend with each other.
#[derive(Debug, Default)]
pub struct SharedBuffers {
    pose: Mutex<SensorStream<PoseSample>>,
    camera: Mutex<SensorStream<CameraSample>>,
}

impl SharedBuffers {
    pub fn new() -> Self {
        Self {
            pose: Mutex::new(SensorStream::new(POSE_STREAM)),
            camera: Mutex::new(SensorStream::new(CAMERA_STREAM)),
        }
    }

    pub fn ingest_pose(&self, record: PoseRecord) -> Result<(), SyncError> {
        self.pose.lock().expect("pose buffer poisoned").push(record)
    }

    pub fn ingest_camera(&self, record: CameraRecord) -> Result<(), SyncError> {
        self.camera
            .lock()
            .expect("camera buffer poisoned")
            .push(record)
    }

    pub fn reset(&self) {
        self.pose.lock().expect("pose buffer poisoned").clear();
        self.camera.lock().expect("camera buffer poisoned").clear();
    }

    /// Consistent copy of both streams for batch pairing.
    pub fn snapshot(&self) -> StreamBuffers {
        StreamBuffers {
            pose: self.pose.lock().expect("pose buffer poisoned").clone(),
            camera: self.camera.lock().expect("camera buffer poisoned").clone(),
        }
    }
}

impl Default for SensorStream<PoseSample> {
    fn default() -> Self {
        Self::new(POSE_STREAM)
    }
}

impl Default for SensorStream<CameraSample> {
    fn default() -> Self {
        Self::new(CAMERA_STREAM)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Integer gcd of the nominal sensor rates.
pub fn greatest_common_frequency(rates: &[u32]) -> Result<u32, SyncError> {
    let (first, rest) = rates
        .split_first()
        .ok_or_else(|| SyncError::Config("no sensor rates given".into()))?;
    if rates.contains(&0) {
        return Err(SyncError::Config("sensor rates must be at least 1 Hz".into()));
    }
    Ok(rest.iter().fold(*first, |acc, &r| gcd(acc, r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyncConfig {
    pub pose_rate_hz: u32,
    pub camera_rate_hz: u32,
    target_rate_hz: u32,
    pub max_pair_offset_s: f64,
}

impl SyncConfig {
    /// Target rate is the gcd of both rates; the pairing bound defaults to
    /// half the pose interval.
    pub fn new(pose_rate_hz: u32, camera_rate_hz: u32) -> Result<Self, SyncError> {
        let target = greatest_common_frequency(&[pose_rate_hz, camera_rate_hz])?;
        Ok(Self {
            pose_rate_hz,
            camera_rate_hz,
            target_rate_hz: target,
            max_pair_offset_s: 0.5 / pose_rate_hz as f64,
        })
    }

    pub fn with_max_pair_offset(mut self, max_pair_offset_s: f64) -> Result<Self, SyncError> {
        self.max_pair_offset_s = max_pair_offset_s;
        self.validate()?;
        Ok(self)
    }

    pub fn target_rate_hz(&self) -> u32 {
        self.target_rate_hz
    }

    /// Keep one camera frame in this many.
    pub fn decimation(&self) -> u32 {
        self.camera_rate_hz / self.target_rate_hz
    }

    pub fn validate(&self) -> Result<(), SyncError> {
        let target = greatest_common_frequency(&[self.pose_rate_hz, self.camera_rate_hz])?;
        if target != self.target_rate_hz {
            return Err(SyncError::Config(format!(
                "target rate {} Hz is not gcd({}, {}) = {}",
                self.target_rate_hz, self.pose_rate_hz, self.camera_rate_hz, target
            )));
        }
        if !self.camera_rate_hz.is_multiple_of(self.target_rate_hz) {
            return Err(SyncError::Config(format!(
                "camera rate {} Hz is not an integer multiple of {} Hz",
                self.camera_rate_hz, self.target_rate_hz
            )));
        }
        let bound = 0.5 / self.pose_rate_hz as f64;
        if !(self.max_pair_offset_s > 0.0) || self.max_pair_offset_s > bound {
            return Err(SyncError::Config(format!(
                "max_pair_offset_s {} outside (0, {}]",
                self.max_pair_offset_s, bound
            )));
        }
        Ok(())
    }
}

// Deserialize through `new` so the derived target rate is always consistent.
#[derive(Deserialize)]
struct SyncConfigFile {
    pose_rate_hz: u32,
    camera_rate_hz: u32,
    #[serde(default)]
    max_pair_offset_s: Option<f64>,
}

impl<'de> Deserialize<'de> for SyncConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = SyncConfigFile::deserialize(d)?;
        let cfg = SyncConfig::new(raw.pose_rate_hz, raw.camera_rate_hz)
            .map_err(serde::de::Error::custom)?;
        match raw.max_pair_offset_s {
            Some(m) => cfg.with_max_pair_offset(m).map_err(serde::de::Error::custom),
            None => Ok(cfg),
        }
    }
}

/// One output tick: a retained camera frame and its paired pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncedFrame {
    /// Camera timestamp of the retained frame.
    pub tick_time: f64,
    pub camera: CameraSample,
    pub pose: PoseSample,
    /// Index of the paired pose in the pose buffer.
    pub pose_index: usize,
    /// Pose time minus camera time.
    pub pair_offset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SyncStats {
    pub camera_frames: usize,
    pub retained_frames: usize,
    pub emitted: usize,
    pub dropped: usize,
    pub max_abs_offset_s: f64,
    pub mean_abs_offset_s: f64,
    pub warnings: Vec<String>,
}

/// Decimates the camera stream to the target rate (every k-th stored frame
/// index, k = camera_rate / target_rate) and pairs each retained frame with
/// the temporally nearest pose. Ties go to the earlier pose. Frames whose
/// nearest pose is further than `max_pair_offset_s` are dropped and counted.
///
/// Runs in linear time with a two-pointer sweep; both buffers must be sorted
/// by timestamp, which [`SensorStream`] guarantees.
pub fn subsample_and_pair(
    camera: &[CameraRecord],
    poses: &[PoseRecord],
    cfg: &SyncConfig,
) -> Result<(Vec<SyncedFrame>, SyncStats), SyncError> {
    cfg.validate()?;
    let k = u64::from(cfg.decimation());
    let mut stats = SyncStats {
        camera_frames: camera.len(),
        ..Default::default()
    };
    if camera.is_empty() || poses.is_empty() {
        stats.warnings.push("empty input buffer".into());
        return Ok((Vec::new(), stats));
    }

    let mut out = Vec::new();
    let mut j = 0usize;
    let mut offset_sum = 0.0;
    for frame in camera.iter().filter(|f| f.payload.frame_index % k == 0) {
        stats.retained_frames += 1;
        let t = frame.timestamp;
        while j + 1 < poses.len() && poses[j + 1].timestamp <= t {
            j += 1;
        }
        let mut best = j;
        if j + 1 < poses.len()
            && (poses[j + 1].timestamp - t).abs() < (poses[j].timestamp - t).abs()
        {
            best = j + 1;
        }
        let offset = poses[best].timestamp - t;
        if offset.abs() > cfg.max_pair_offset_s + TIMESTAMP_RESOLUTION_S {
            stats.dropped += 1;
            continue;
        }
        offset_sum += offset.abs();
        stats.max_abs_offset_s = stats.max_abs_offset_s.max(offset.abs());
        out.push(SyncedFrame {
            tick_time: t,
            camera: frame.payload.clone(),
            pose: poses[best].payload,
            pose_index: best,
            pair_offset_s: offset,
        });
    }
    stats.emitted = out.len();
    if !out.is_empty() {
        stats.mean_abs_offset_s = offset_sum / out.len() as f64;
    } else {
        stats
            .warnings
            .push("no camera frame overlaps the pose stream".into());
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{UnitQuaternion, Vec3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose_at(t: f64) -> PoseRecord {
        StreamRecord::new(
            t,
            PoseSample::new(
                Pose::new(Vec3::new(t, 0.0, 0.0), UnitQuaternion::IDENTITY),
                ConfidenceLevel::High,
            ),
        )
    }

    fn frame_at(t: f64, idx: u64) -> CameraRecord {
        StreamRecord::new(
            t,
            CameraSample {
                frame_index: idx,
                image_ref: format!("frame_{idx:06}.png"),
                detections: Vec::new(),
            },
        )
    }

    // Exhaustive nearest-pose oracle; ties resolve to the earliest pose.
    fn brute_force(camera: &[CameraRecord], poses: &[PoseRecord], cfg: &SyncConfig) -> Vec<(u64, usize)> {
        let k = cfg.decimation() as u64;
        camera
            .iter()
            .filter(|f| f.payload.frame_index % k == 0)
            .filter_map(|f| {
                let mut best = 0;
                for (i, p) in poses.iter().enumerate() {
                    if (p.timestamp - f.timestamp).abs() < (poses[best].timestamp - f.timestamp).abs() {
                        best = i;
                    }
                }
                let off = (poses[best].timestamp - f.timestamp).abs();
                (off <= cfg.max_pair_offset_s + TIMESTAMP_RESOLUTION_S)
                    .then_some((f.payload.frame_index, best))
            })
            .collect()
    }

    #[test]
    fn gcf_examples() {
        assert_eq!(greatest_common_frequency(&[200, 60]).unwrap(), 20);
        assert_eq!(greatest_common_frequency(&[60, 60]).unwrap(), 60);
        assert_eq!(greatest_common_frequency(&[30, 200]).unwrap(), 10);
        assert!(greatest_common_frequency(&[]).is_err());
        assert!(greatest_common_frequency(&[0, 60]).is_err());
    }

    #[test]
    fn config_defaults_and_bounds() {
        let cfg = SyncConfig::new(200, 60).unwrap();
        assert_eq!(cfg.target_rate_hz(), 20);
        assert_eq!(cfg.decimation(), 3);
        assert_eq!(cfg.max_pair_offset_s, 0.0025);
        assert!(cfg.with_max_pair_offset(0.003).is_err());
        assert!(cfg.with_max_pair_offset(0.001).is_ok());
        let parsed: SyncConfig =
            toml::from_str("pose_rate_hz = 200\ncamera_rate_hz = 60\n").unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn ingest_ordering() {
        let mut b = StreamBuffers::new();
        b.ingest_pose(pose_at(0.0)).unwrap();
        b.ingest_pose(pose_at(0.005)).unwrap();
        assert_eq!(b.pose.len(), 2);
        let err = b.ingest_pose(pose_at(0.0)).unwrap_err();
        assert!(matches!(err, SyncError::NonMonotonic { ref stream, .. } if stream == "pose"));
        assert_eq!(b.pose.len(), 2);
        assert!(b.camera.is_empty());
        assert!(b.ingest_pose(pose_at(f64::NAN)).is_err());
    }

    #[test]
    fn reset_examples() {
        let mut b = StreamBuffers::new();
        b.reset();
        assert_eq!(b.total_len(), 0);
        for i in 0..10_000 {
            b.ingest_pose(pose_at(i as f64 * 0.005)).unwrap();
        }
        b.reset();
        assert_eq!(b.total_len(), 0);
        b.ingest_pose(pose_at(1.0)).unwrap();
        assert_eq!(b.pose.len(), 1);
    }

    #[test]
    fn shared_buffers_concurrent_producers() {
        let shared = SharedBuffers::new();
        std::thread::scope(|s| {
            s.spawn(|| {
                for i in 0..2000 {
                    shared.ingest_pose(pose_at(i as f64 / 200.0)).unwrap();
                }
            });
            s.spawn(|| {
                for i in 0..600 {
                    shared.ingest_camera(frame_at(i as f64 / 60.0, i)).unwrap();
                }
            });
        });
        let snap = shared.snapshot();
        assert_eq!(snap.pose.len(), 2000);
        assert_eq!(snap.camera.len(), 600);
        shared.reset();
        assert_eq!(shared.snapshot().total_len(), 0);
    }

    #[test]
    fn keeps_every_third_frame_and_pairs_exactly() {
        let cfg = SyncConfig::new(200, 60).unwrap();
        let poses: Vec<_> = (0..400).map(|i| pose_at(i as f64 / 200.0)).collect();
        let frames: Vec<_> = (0..120).map(|i| frame_at(i as f64 / 60.0, i)).collect();
        let (out, stats) = subsample_and_pair(&frames, &poses, &cfg).unwrap();
        let kept: Vec<u64> = out.iter().map(|f| f.camera.frame_index).collect();
        assert_eq!(kept, (0..120).step_by(3).collect::<Vec<_>>());
        assert_eq!(stats.dropped, 0);
        assert!(stats.max_abs_offset_s <= 1e-15);
        let f = out.iter().find(|f| f.camera.frame_index == 3).unwrap();
        assert_eq!(f.pose_index, 10);
        assert_eq!(f.pair_offset_s, 0.0);
    }

    #[test]
    fn tie_prefers_earlier_pose() {
        let cfg = SyncConfig::new(200, 60).unwrap();
        let poses = vec![pose_at(0.0), pose_at(0.002), pose_at(0.004)];
        let frames = vec![frame_at(0.003, 0)];
        let (out, _) = subsample_and_pair(&frames, &poses, &cfg).unwrap();
        assert_eq!(out[0].pose_index, 1);
    }

    #[test]
    fn unpaired_frames_are_dropped_and_counted() {
        let cfg = SyncConfig::new(200, 60).unwrap();
        let poses: Vec<_> = (0..20).map(|i| pose_at(i as f64 / 200.0)).collect();
        let frames: Vec<_> = (0..12).map(|i| frame_at(i as f64 / 60.0, i)).collect();
        let (out, stats) = subsample_and_pair(&frames, &poses, &cfg).unwrap();
        assert_eq!(stats.retained_frames, 4);
        assert_eq!(out.len(), 2);
        assert_eq!(stats.dropped, 2);

        let late: Vec<_> = (0..3).map(|i| frame_at(10.0 + i as f64 / 60.0, i)).collect();
        let (out, stats) = subsample_and_pair(&late, &poses, &cfg).unwrap();
        assert!(out.is_empty());
        assert!(!stats.warnings.is_empty());
    }

    #[test]
    fn jittered_streams_match_oracle() {
        let cfg = SyncConfig::new(200, 60).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let poses: Vec<_> = (0..600)
                .map(|i| pose_at(i as f64 / 200.0 + rng.random_range(-0.0004..0.0004)))
                .collect();
            let frames: Vec<_> = (0..180)
                .map(|i| frame_at(i as f64 / 60.0 + rng.random_range(-0.002..0.002), i))
                .collect();
            let (out, _) = subsample_and_pair(&frames, &poses, &cfg).unwrap();
            let got: Vec<_> = out.iter().map(|f| (f.camera.frame_index, f.pose_index)).collect();
            assert_eq!(got, brute_force(&frames, &poses, &cfg), "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn interleaved_ingest_preserves_per_stream_order(
            pose_n in 1usize..200, cam_n in 1usize..60, order in prop::collection::vec(any::<bool>(), 0..300)
        ) {
            let mut b = StreamBuffers::new();
            let (mut pi, mut ci) = (0usize, 0usize);
            let mut flags = order.into_iter();
            while pi < pose_n || ci < cam_n {
                let take_pose = match flags.next() {
                    Some(f) => (f && pi < pose_n) || ci >= cam_n,
                    None => pi < pose_n,
                };
                if take_pose {
                    b.ingest_pose(pose_at(pi as f64 / 200.0)).unwrap();
                    pi += 1;
                } else {
                    b.ingest_camera(frame_at(ci as f64 / 60.0, ci as u64)).unwrap();
                    ci += 1;
                }
            }
            prop_assert_eq!(b.pose.len(), pose_n);
            prop_assert_eq!(b.camera.len(), cam_n);
            prop_assert!(b.pose.records().windows(2).all(|w| w[0].timestamp < w[1].timestamp));
            prop_assert!(b.camera.records().windows(2).all(|w| w[0].payload.frame_index < w[1].payload.frame_index));
        }

        #[test]
        fn pairing_is_optimal(seed in any::<u64>()) {
            let cfg = SyncConfig::new(200, 60).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phase: f64 = rng.random_range(0.0..0.005);
            let poses: Vec<_> = (0..300).map(|i| pose_at(phase + i as f64 / 200.0)).collect();
            let frames: Vec<_> = (0..90).map(|i| frame_at(i as f64 / 60.0 + rng.random_range(0.0..0.001), i)).collect();
            let (out, _) = subsample_and_pair(&frames, &poses, &cfg).unwrap();
            for f in &out {
                let best = poses.iter().map(|p| (p.timestamp - f.tick_time).abs()).fold(f64::INFINITY, f64::min);
                prop_assert!(f.pair_offset_s.abs() <= best);
                prop_assert!(f.pair_offset_s.abs() <= cfg.max_pair_offset_s + TIMESTAMP_RESOLUTION_S);
            }
            prop_assert!(out.windows(2).all(|w| w[0].tick_time < w[1].tick_time));
        }
    }
}
