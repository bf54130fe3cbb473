//! End-to-end processing of one recording into one episode.
//!
//! Stages, in order: confidence gate, low-confidence repair, sub-sampling and
//! pairing, smoothness check, TCP derivation, optional drift verdict, gripper
//! widths, optional IK, assembly.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ImageStorage, LoadedConfig, OutputMode, PipelineConfig};
use crate::dataset::{assemble, write_episode, AssemblyMode, DatasetError, Episode, EpisodeManifest, ImageData};
use crate::geometry::Pose;
use crate::gripper::{impute_series, width_from_frame, WidthSeries};
use crate::kinematics::{joint_trajectory, parse_chain, JointVector, KinematicChain};
use crate::quality::{
    drift_check, repair_low_confidence, smoothness_check, validate_environment, DriftStatus, QualityReport,
    Verdict,
};
use crate::sync::{subsample_and_pair, CameraRecord, PoseRecord, SyncStats, SyncedFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Environment,
    Repair,
    Sync,
    Smoothness,
    Transform,
    Drift,
    Gripper,
    Kinematics,
    Assembly,
    Write,
}

impl Stage {
    /// Gate stages reject data; the others fail on processing errors.
    pub fn is_quality_gate(self) -> bool {
        matches!(self, Self::Environment | Self::Repair | Self::Smoothness | Self::Drift)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
    /// Whatever quality information was gathered before the failure.
    pub report: Option<QualityReport>,
    pub sync_stats: Option<SyncStats>,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutput {
    pub episode: Episode,
    pub report: QualityReport,
    pub sync_stats: SyncStats,
    pub synced: Vec<SyncedFrame>,
    pub tcp: Vec<Pose>,
    pub widths: Option<WidthSeries>,
    pub joints: Option<Vec<JointVector>>,
    pub max_joint_step: Option<f64>,
}

struct Ctx {
    report: Option<QualityReport>,
    stats: Option<SyncStats>,
}

impl Ctx {
    fn fail(&self, stage: Stage, message: impl Into<String>) -> PipelineError {
        PipelineError {
            stage,
            message: message.into(),
            report: self.report.clone(),
            sync_stats: self.stats.clone(),
        }
    }
}

pub fn load_chain(cfg: &PipelineConfig) -> Result<Option<KinematicChain>, PipelineError> {
    let ctx = Ctx { report: None, stats: None };
    let Some(k) = &cfg.kinematics else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(&k.chain)
        .map_err(|e| ctx.fail(Stage::Kinematics, format!("{}: {e}", k.chain.display())))?;
    let opts = k.parse_options().map_err(|e| ctx.fail(Stage::Kinematics, e.to_string()))?;
    let parsed = parse_chain(&text, &opts).map_err(|e| ctx.fail(Stage::Kinematics, format!("{}: {e}", k.chain.display())))?;
    Ok(Some(parsed.chain))
}

/// Runs every stage on in-memory streams. `chain` is required for joint
/// output.
pub fn process(
    cfg: &PipelineConfig,
    chain: Option<&KinematicChain>,
    poses: &[PoseRecord],
    camera: &[CameraRecord],
) -> Result<ProcessOutput, PipelineError> {
    let mut ctx = Ctx { report: None, stats: None };
    let thr = &cfg.quality;

    let mut report = validate_environment(poses, thr).map_err(|e| ctx.fail(Stage::Environment, e.to_string()))?;
    ctx.report = Some(report.clone());
    if report.verdict == Verdict::Fail {
        return Err(ctx.fail(
            Stage::Environment,
            format!(
                "high-confidence fraction {:.4} below {:.4}",
                report.high_fraction, report.high_conf_threshold
            ),
        ));
    }

    let repaired = repair_low_confidence(poses).map_err(|e| ctx.fail(Stage::Repair, e.to_string()))?;
    report.repaired_indices = repaired.repaired_indices;
    ctx.report = Some(report.clone());

    let (synced, stats) =
        subsample_and_pair(camera, &repaired.samples, &cfg.sync).map_err(|e| ctx.fail(Stage::Sync, e.to_string()))?;
    for w in &stats.warnings {
        log::warn!("sync: {w}");
    }
    ctx.stats = Some(stats.clone());
    if synced.is_empty() {
        return Err(ctx.fail(Stage::Sync, "no synchronized frames"));
    }

    let paired: Vec<PoseRecord> = synced.iter().map(|f| repaired.samples[f.pose_index].clone()).collect();
    if paired.len() >= 3 {
        report.violations = smoothness_check(&paired, thr).map_err(|e| ctx.fail(Stage::Smoothness, e.to_string()))?;
    } else {
        log::warn!("smoothness: only {} frames, check skipped", paired.len());
    }
    report.recompute_verdict(thr.policy);
    ctx.report = Some(report.clone());
    if report.verdict == Verdict::Fail {
        let first = report.violations.first().map(|v| format!(", first at frame {} ({})", v.index, v.kind));
        return Err(ctx.fail(
            Stage::Smoothness,
            format!("{} smoothness violations{}", report.violations.len(), first.unwrap_or_default()),
        ));
    }

    let mount = cfg.mount.to_mount().map_err(|e| ctx.fail(Stage::Transform, e.to_string()))?;
    let tcp: Vec<Pose> = synced.iter().map(|f| mount.tcp_pose(&f.pose.pose)).collect();

    if cfg.drift.enabled {
        let verdict = drift_check(&tcp, &tcp[0], cfg.drift.align_tol_m, cfg.drift.closure_tol_m)
            .map_err(|e| ctx.fail(Stage::Drift, e.to_string()))?;
        report.drift = Some(verdict);
        ctx.report = Some(report.clone());
        if cfg.drift.gate && verdict.status == DriftStatus::Reinitialize {
            return Err(ctx.fail(
                Stage::Drift,
                format!("endpoint {:.4} m from start without loop closure", verdict.endpoint_residual_m),
            ));
        }
    }

    let widths = match &cfg.gripper {
        Some(calib) => {
            let raw = synced
                .iter()
                .map(|f| width_from_frame(&f.camera.detections, calib))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ctx.fail(Stage::Gripper, e.to_string()))?;
            Some(impute_series(&raw, cfg.impute).map_err(|e| ctx.fail(Stage::Gripper, e.to_string()))?)
        }
        None => None,
    };

    let (mode, joints, max_joint_step) = match cfg.output.mode {
        OutputMode::TcpAbsolute => (AssemblyMode::TcpAbsolute, None, None),
        OutputMode::TcpRelative => (AssemblyMode::TcpRelative, None, None),
        OutputMode::Joint => {
            let chain = chain.ok_or_else(|| ctx.fail(Stage::Kinematics, "joint output needs a kinematic chain"))?;
            let k = cfg.kinematics.as_ref().expect("validated");
            let seed = match &k.seed {
                Some(s) => JointVector(s.clone()),
                None => chain.clamp(&JointVector::zeros(chain.dof())),
            };
            let traj = joint_trajectory(chain, &tcp, &seed, &k.ik).map_err(|e| ctx.fail(Stage::Kinematics, e.to_string()))?;
            let max = traj.max_step_jump;
            (AssemblyMode::Joint(traj.solutions.clone()), Some(traj.solutions), Some(max))
        }
    };

    let mut episode = assemble(&synced, &tcp, widths.as_ref(), mode).map_err(|e| ctx.fail(Stage::Assembly, e.to_string()))?;
    episode.camera_name = cfg.output.camera_name.clone();
    if cfg.output.images == ImageStorage::Blank {
        episode.images = ImageData::blank(synced.len(), cfg.output.image_height, cfg.output.image_width);
    }

    Ok(ProcessOutput {
        episode,
        report,
        sync_stats: stats,
        synced,
        tcp,
        widths,
        joints,
        max_joint_step,
    })
}

/// Paths of the files written next to an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub episode: PathBuf,
    pub manifest: PathBuf,
    pub quality_text: PathBuf,
    pub quality_json: PathBuf,
    pub sync_stats: PathBuf,
}

impl OutputPaths {
    pub fn for_episode(episode: &Path) -> Self {
        let stem = episode.with_extension("");
        let with = |suffix: &str| PathBuf::from(format!("{}{suffix}", stem.display()));
        Self {
            episode: episode.to_path_buf(),
            manifest: EpisodeManifest::path_for(episode),
            quality_text: with(".quality.txt"),
            quality_json: with(".quality.json"),
            sync_stats: with(".sync.json"),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes the quality report (text and JSON) and sync statistics, whichever
/// are available.
pub fn write_reports(
    paths: &OutputPaths,
    report: Option<&QualityReport>,
    stats: Option<&SyncStats>,
) -> Result<(), DatasetError> {
    if let Some(r) = report {
        std::fs::write(&paths.quality_text, r.to_text()).map_err(|e| DatasetError::Io {
            path: paths.quality_text.display().to_string(),
            message: e.to_string(),
        })?;
        write_json(&paths.quality_json, r)?;
    }
    if let Some(s) = stats {
        write_json(&paths.sync_stats, s)?;
    }
    Ok(())
}

/// Writes the episode, its manifest and the reports.
pub fn write_outputs(
    out_episode: &Path,
    loaded: &LoadedConfig,
    sources: Vec<String>,
    output: &ProcessOutput,
) -> Result<OutputPaths, DatasetError> {
    let paths = OutputPaths::for_episode(out_episode);
    if let Some(dir) = out_episode.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| DatasetError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    }
    write_episode(out_episode, &output.episode)?;
    let manifest = EpisodeManifest::new(
        &loaded.config.task,
        loaded.config.episode_index,
        sources,
        &loaded.text,
        &output.synced,
        &output.episode.layout,
    );
    manifest.write(&paths.manifest)?;
    write_reports(&paths, Some(&output.report), Some(&output.sync_stats))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names() {
        assert_eq!(Stage::Environment.to_string(), "environment");
        assert_eq!(Stage::Kinematics.to_string(), "kinematics");
        assert!(Stage::Smoothness.is_quality_gate());
        assert!(!Stage::Sync.is_quality_gate());
    }

    #[test]
    fn output_paths() {
        let p = OutputPaths::for_episode(Path::new("out/episode_2.hdf5"));
        assert_eq!(p.manifest, PathBuf::from("out/episode_2.json"));
        assert_eq!(p.quality_text, PathBuf::from("out/episode_2.quality.txt"));
        assert_eq!(p.sync_stats, PathBuf::from("out/episode_2.sync.json"));
    }
}
