//! Plain-text stream logs.
//!
//! All logs are comma-separated, one record per line. Blank lines and lines
//! starting with `#` are ignored. Floats are written in shortest round-trip
//! form, so parse(format(x)) == x.
//!
//! ```text
//! # pose log:   t,x,y,z,qx,qy,qz,qw,confidence   (confidence code 0..=3)
//! # camera log: t,frame_index,image_ref[,marker_id,u,v]*
//! # truth log:  t,frame_index,x,y,z,qx,qy,qz,qw,width_mm
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::gripper::MarkerDetection;
use crate::quality::ConfidenceLevel;
use crate::sync::{CameraRecord, CameraSample, PoseRecord, PoseSample, SensorStream, StreamRecord};

pub const POSE_LOG_HEADER: &str = "# t,x,y,z,qx,qy,qz,qw,confidence";
pub const CAMERA_LOG_HEADER: &str = "# t,frame_index,image_ref[,marker_id,u,v]*";
pub const TRUTH_LOG_HEADER: &str = "# t,frame_index,x,y,z,qx,qy,qz,qw,width_mm";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl LogError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }
}

/// Ground-truth TCP pose and jaw opening at one camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub timestamp: f64,
    pub frame_index: u64,
    pub tcp: Pose,
    pub width_mm: f64,
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split(',').map(str::trim).collect()))
    })
}

fn field<T: FromStr>(fields: &[&str], i: usize, name: &str, line: usize) -> Result<T, LogError> {
    let s = fields
        .get(i)
        .ok_or_else(|| LogError::parse(line, format!("missing field `{name}`")))?;
    s.parse()
        .map_err(|_| LogError::parse(line, format!("field `{name}` is not valid: {s:?}")))
}

fn finite(v: f64, name: &str, line: usize) -> Result<f64, LogError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LogError::parse(line, format!("field `{name}` is not finite")))
    }
}

fn pose_fields(f: &[&str], start: usize, line: usize) -> Result<Pose, LogError> {
    const NAMES: [&str; 7] = ["x", "y", "z", "qx", "qy", "qz", "qw"];
    let mut row = [0.0; 7];
    for (k, name) in NAMES.iter().enumerate() {
        row[k] = finite(field(f, start + k, name, line)?, name, line)?;
    }
    Pose::from_row(&row).map_err(|e| LogError::parse(line, e.to_string()))
}

fn push_pose(out: &mut String, p: &Pose) {
    for v in p.to_row() {
        let _ = write!(out, ",{v}");
    }
}

pub fn parse_pose_log(text: &str) -> Result<Vec<PoseRecord>, LogError> {
    let mut stream = SensorStream::new(crate::sync::POSE_STREAM);
    for (line, f) in records(text) {
        if f.len() != 9 {
            return Err(LogError::parse(line, format!("expected 9 fields, got {}", f.len())));
        }
        let t = finite(field(&f, 0, "t", line)?, "t", line)?;
        let pose = pose_fields(&f, 1, line)?;
        let code: u8 = field(&f, 8, "confidence", line)?;
        let confidence = ConfidenceLevel::from_code(code)
            .ok_or_else(|| LogError::parse(line, format!("confidence code {code} not in 0..=3")))?;
        stream
            .push(StreamRecord::new(t, PoseSample::new(pose, confidence)))
            .map_err(|e| LogError::parse(line, e.to_string()))?;
    }
    Ok(stream.into_records())
}

pub fn format_pose_log(records: &[PoseRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96);
    out.push_str(POSE_LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{}", r.timestamp);
        push_pose(&mut out, &r.payload.pose);
        let _ = writeln!(out, ",{}", r.payload.confidence.code());
    }
    out
}

pub fn parse_camera_log(text: &str) -> Result<Vec<CameraRecord>, LogError> {
    let mut stream = SensorStream::new(crate::sync::CAMERA_STREAM);
    let mut last_index: Option<u64> = None;
    for (line, f) in records(text) {
        if f.len() < 3 || (f.len() - 3) % 3 != 0 {
            return Err(LogError::parse(
                line,
                format!("expected 3 + 3k fields, got {}", f.len()),
            ));
        }
        let t = finite(field(&f, 0, "t", line)?, "t", line)?;
        let frame_index: u64 = field(&f, 1, "frame_index", line)?;
        if let Some(prev) = last_index {
            if frame_index <= prev {
                return Err(LogError::parse(
                    line,
                    format!("frame index {frame_index} does not increase (previous {prev})"),
                ));
            }
        }
        last_index = Some(frame_index);
        let detections = f[3..]
            .chunks(3)
            .map(|c| {
                Ok(MarkerDetection::new(
                    field(c, 0, "marker_id", line)?,
                    finite(field(c, 1, "u", line)?, "u", line)?,
                    finite(field(c, 2, "v", line)?, "v", line)?,
                ))
            })
            .collect::<Result<Vec<_>, LogError>>()?;
        let sample = CameraSample {
            frame_index,
            image_ref: f[2].to_string(),
            detections,
        };
        stream
            .push(StreamRecord::new(t, sample))
            .map_err(|e| LogError::parse(line, e.to_string()))?;
    }
    Ok(stream.into_records())
}

pub fn format_camera_log(records: &[CameraRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 80);
    out.push_str(CAMERA_LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{}", r.timestamp, r.payload.frame_index, r.payload.image_ref);
        for d in &r.payload.detections {
            let _ = write!(out, ",{},{},{}", d.marker_id, d.center_px.0, d.center_px.1);
        }
        out.push('\n');
    }
    out
}

pub fn parse_truth_log(text: &str) -> Result<Vec<TruthRecord>, LogError> {
    let mut out: Vec<TruthRecord> = Vec::new();
    for (line, f) in records(text) {
        if f.len() != 10 {
            return Err(LogError::parse(line, format!("expected 10 fields, got {}", f.len())));
        }
        let rec = TruthRecord {
            timestamp: finite(field(&f, 0, "t", line)?, "t", line)?,
            frame_index: field(&f, 1, "frame_index", line)?,
            tcp: pose_fields(&f, 2, line)?,
            width_mm: finite(field(&f, 9, "width_mm", line)?, "width_mm", line)?,
        };
        if let Some(prev) = out.last() {
            if rec.frame_index <= prev.frame_index {
                return Err(LogError::parse(line, "frame index does not increase"));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn format_truth_log(records: &[TruthRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 110);
    out.push_str(TRUTH_LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{}", r.timestamp, r.frame_index);
        push_pose(&mut out, &r.tcp);
        let _ = writeln!(out, ",{}", r.width_mm);
    }
    out
}

/// Truth records for the given camera frame indices, in that order. Returns
/// the first index without a record as the error.
pub fn truth_for_frames<'a>(truth: &'a [TruthRecord], frames: &[u64]) -> Result<Vec<&'a TruthRecord>, u64> {
    frames
        .iter()
        .map(|f| {
            truth
                .binary_search_by_key(f, |r| r.frame_index)
                .map(|i| &truth[i])
                .map_err(|_| *f)
        })
        .collect()
}

pub fn read_text(path: &Path) -> Result<String, LogError> {
    std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), LogError> {
    std::fs::write(path, text).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{UnitQuaternion, Vec3};

    #[test]
    fn pose_log_roundtrip() {
        let recs = vec![
            StreamRecord::new(
                0.0,
                PoseSample::new(
                    Pose::new(Vec3::new(0.1, -0.2, 1.0 / 3.0), UnitQuaternion::from_rpy(0.1, 0.2, 0.3)),
                    ConfidenceLevel::High,
                ),
            ),
            StreamRecord::new(0.005, PoseSample::new(Pose::IDENTITY, ConfidenceLevel::Low)),
        ];
        let text = format_pose_log(&recs);
        assert_eq!(parse_pose_log(&text).unwrap(), recs);
    }

    #[test]
    fn camera_log_roundtrip() {
        let recs = vec![
            StreamRecord::new(
                0.0,
                CameraSample {
                    frame_index: 0,
                    image_ref: "frames/000000.png".into(),
                    detections: vec![MarkerDetection::new(0, 100.25, 200.0), MarkerDetection::new(1, 300.0, 200.0)],
                },
            ),
            StreamRecord::new(
                1.0 / 60.0,
                CameraSample {
                    frame_index: 1,
                    image_ref: "frames/000001.png".into(),
                    detections: vec![],
                },
            ),
        ];
        assert_eq!(parse_camera_log(&format_camera_log(&recs)).unwrap(), recs);
    }

    #[test]
    fn truth_log_roundtrip() {
        let recs = vec![TruthRecord {
            timestamp: 0.05,
            frame_index: 3,
            tcp: Pose::new(Vec3::new(0.3, 0.0, 0.2), UnitQuaternion::rz(0.7)),
            width_mm: 42.5,
        }];
        assert_eq!(parse_truth_log(&format_truth_log(&recs)).unwrap(), recs);
    }

    #[test]
    fn truth_lookup_by_frame() {
        let recs: Vec<TruthRecord> = (0..10)
            .map(|i| TruthRecord {
                timestamp: i as f64 / 60.0,
                frame_index: i,
                tcp: Pose::IDENTITY,
                width_mm: i as f64,
            })
            .collect();
        let hit = truth_for_frames(&recs, &[0, 3, 9]).unwrap();
        assert_eq!(hit.iter().map(|r| r.width_mm).collect::<Vec<_>>(), vec![0.0, 3.0, 9.0]);
        assert_eq!(truth_for_frames(&recs, &[3, 12]).unwrap_err(), 12);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "# header\n0,0,0,0,0,0,0,1,3\n\n0.005,0,0,0,0,0,0,1,7\n";
        match parse_pose_log(text) {
            Err(LogError::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("confidence"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_pose_log("0.1,0,0,0,0,0,0,1,3\n0.1,0,0,0,0,0,0,1,3\n") {
            Err(LogError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_pose_log("0,0,0,0,0,0,0,0,3\n") {
            Err(LogError::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_camera_log("0,0,a.png,1,2\n") {
            Err(LogError::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_camera_log("0,1,a.png\n0.1,1,b.png\n") {
            Err(LogError::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
