use std::path::{Path, PathBuf};

use serde::Serialize;
use teleop_core::compensation::{compensation_distance, corrected_tcp, sweep, CompensationParams, SweepRow};
use teleop_core::config::{LoadedConfig, PipelineConfig};
use teleop_core::dataset::{
    list_episodes, read_episode, validate_episode, write_episode, EpisodeLayout, EpisodeManifest, Finding,
    ValidationReport, MAX_EPISODES_PER_DIR,
};
use teleop_core::kinematics::{inverse, JointVector};
use teleop_core::logs::{
    format_camera_log, format_pose_log, format_truth_log, parse_camera_log, parse_pose_log, parse_truth_log,
    read_text, truth_for_frames, write_text, LogError,
};
use teleop_core::pipeline::{load_chain, process, write_outputs, write_reports, OutputPaths, PipelineError};
use teleop_core::quality::{translation_error, TranslationErrorStats, Verdict};
use teleop_core::simgen::GeneratorSpec;
use teleop_core::Pose;

pub const POSE_LOG: &str = "pose_log.csv";
pub const CAMERA_LOG: &str = "camera_log.csv";
pub const TRUTH_LOG: &str = "truth.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, missing inputs or invalid configuration.
    #[error("{0}")]
    Usage(String),
    /// Data rejected by a check.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Processing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Usage(_) => 2,
            Self::Processing(_) => 3,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn processing(e: impl std::fmt::Display) -> CliError {
    CliError::Processing(e.to_string())
}

fn read_input(path: &Path) -> Result<String, CliError> {
    read_text(path).map_err(usage)
}

fn parsed<T>(path: &Path, r: Result<T, LogError>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Processing(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub pose_log: PathBuf,
    pub camera_log: PathBuf,
    pub truth_log: PathBuf,
    pub pose_samples: usize,
    pub camera_frames: usize,
    pub seed: u64,
}

/// Writes `pose_log.csv`, `camera_log.csv` and `truth.csv` into `out_dir`.
pub fn cmd_generate(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<GenerateSummary, CliError> {
    let text = read_input(spec_path)?;
    let spec = GeneratorSpec::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", spec_path.display())))?;
    let sim = spec
        .generate(seed)
        .map_err(|e| CliError::Usage(format!("{}: {e}", spec_path.display())))?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Processing(format!("{}: {e}", out_dir.display())))?;
    let summary = GenerateSummary {
        pose_log: out_dir.join(POSE_LOG),
        camera_log: out_dir.join(CAMERA_LOG),
        truth_log: out_dir.join(TRUTH_LOG),
        pose_samples: sim.poses.len(),
        camera_frames: sim.camera.len(),
        seed: seed.unwrap_or(spec.seed),
    };
    write_text(&summary.pose_log, &format_pose_log(&sim.poses)).map_err(processing)?;
    write_text(&summary.camera_log, &format_camera_log(&sim.camera)).map_err(processing)?;
    write_text(&summary.truth_log, &format_truth_log(&sim.truth)).map_err(processing)?;
    Ok(summary)
}

fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    PipelineConfig::load(path).map_err(usage)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessSummary {
    pub episode: PathBuf,
    pub manifest: PathBuf,
    pub quality_report: PathBuf,
    pub sync_stats: PathBuf,
    pub frames: usize,
    pub mode: String,
    pub verdict: Verdict,
    pub repaired_samples: usize,
    pub violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_joint_step_rad: Option<f64>,
}

/// Runs the full pipeline and writes the episode with its manifest, quality
/// report and sync statistics. On a failed gate the partial report is still
/// written.
pub fn cmd_process(
    config_path: &Path,
    pose_log: &Path,
    camera_log: &Path,
    out_episode: &Path,
) -> Result<ProcessSummary, CliError> {
    let loaded = load_config(config_path)?;
    let pose_text = read_input(pose_log)?;
    let camera_text = read_input(camera_log)?;
    let poses = parsed(pose_log, parse_pose_log(&pose_text))?;
    let camera = parsed(camera_log, parse_camera_log(&camera_text))?;
    let chain = match loaded.config.output.mode {
        teleop_core::config::OutputMode::Joint => load_chain(&loaded.config).map_err(|e| CliError::Usage(e.message))?,
        _ => None,
    };
    let paths = OutputPaths::for_episode(out_episode);
    let out = match process(&loaded.config, chain.as_ref(), &poses, &camera) {
        Ok(out) => out,
        Err(e) => return Err(pipeline_failure(&paths, e)),
    };
    let sources = vec![pose_log.display().to_string(), camera_log.display().to_string()];
    let paths = write_outputs(out_episode, &loaded, sources, &out).map_err(processing)?;
    Ok(ProcessSummary {
        episode: paths.episode,
        manifest: paths.manifest,
        quality_report: paths.quality_text,
        sync_stats: paths.sync_stats,
        frames: out.episode.len(),
        mode: out.episode.layout.name().to_string(),
        verdict: out.report.verdict,
        repaired_samples: out.report.repaired_indices.len(),
        violations: out.report.violations.len(),
        max_joint_step_rad: out.max_joint_step,
    })
}

fn pipeline_failure(paths: &OutputPaths, e: PipelineError) -> CliError {
    if let Some(dir) = paths.episode.parent().filter(|d| !d.as_os_str().is_empty()) {
        let _ = std::fs::create_dir_all(dir);
    }
    if let Err(w) = write_reports(paths, e.report.as_ref(), e.sync_stats.as_ref()) {
        log::error!("could not write reports: {w}");
    }
    if e.stage.is_quality_gate() {
        CliError::Validation(e.to_string())
    } else {
        CliError::Processing(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompensateSummary {
    pub output: PathBuf,
    pub frames: usize,
    pub dof: usize,
    /// Per-frame compensation distance, m.
    pub distances_m: Vec<f64>,
    pub min_distance_m: f64,
    pub max_distance_m: f64,
    pub mean_distance_m: f64,
    pub max_joint_step_rad: f64,
}

/// Solves IK on the width-compensated TCP of every frame and writes a
/// joint-layout episode to `out`, plus `<out>.compensation.json`.
pub fn cmd_compensate(config_path: &Path, episode: &Path, out: &Path) -> Result<CompensateSummary, CliError> {
    let loaded = load_config(config_path)?;
    let cfg = &loaded.config;
    let k = cfg
        .kinematics
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("{}: missing [kinematics] section", config_path.display())))?;
    let params: CompensationParams = cfg
        .compensation
        .ok_or_else(|| CliError::Usage(format!("{}: missing compensation parameters", config_path.display())))?;
    let chain = load_chain(cfg)
        .map_err(|e| CliError::Usage(e.message))?
        .expect("kinematics present");

    let ep = read_episode(episode).map_err(|e| CliError::Validation(e.to_string()))?;
    let widths = ep.gripper_width.as_ref().ok_or_else(|| {
        CliError::Validation(format!(
            "{}: schema error at `observations/gripper_width`: dataset missing",
            episode.display()
        ))
    })?;
    let tcp = ep
        .tcp_poses()
        .map_err(|e| CliError::Validation(format!("{}: {e}", episode.display())))?;

    let mut seed = match &k.seed {
        Some(s) => JointVector(s.clone()),
        None => chain.clamp(&JointVector::zeros(chain.dof())),
    };
    let mut joints = Vec::with_capacity(tcp.len());
    let mut distances = Vec::with_capacity(tcp.len());
    let mut failures = Vec::new();
    for (i, pose) in tcp.iter().enumerate() {
        let w = widths[(i, 0)] / 1000.0;
        let d = compensation_distance(w, &params).map_err(|e| CliError::Validation(format!("frame {i}: {e}")))?;
        distances.push(d);
        match inverse(&chain, &corrected_tcp(pose, d), &seed, &k.ik) {
            Ok(theta) => {
                seed = theta.clone();
                joints.push(theta);
            }
            Err(e) => failures.push(format!("frame {i}: {e}")),
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            log::error!("{f}");
        }
        return Err(CliError::Processing(format!(
            "IK failed on {} of {} frames; first: {}",
            failures.len(),
            tcp.len(),
            failures[0]
        )));
    }

    let dof = chain.dof();
    let mut qpos = ndarray::Array2::zeros((joints.len(), 7));
    for (i, j) in joints.iter().enumerate() {
        for (c, v) in j.0.iter().enumerate() {
            qpos[(i, c)] = *v;
        }
    }
    let mut out_ep = ep.clone();
    out_ep.action = qpos.clone();
    out_ep.qpos = qpos;
    out_ep.layout = EpisodeLayout::Joint { dof };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Processing(format!("{}: {e}", dir.display())))?;
    }
    write_episode(out, &out_ep).map_err(processing)?;

    let n = distances.len() as f64;
    let summary = CompensateSummary {
        output: out.to_path_buf(),
        frames: joints.len(),
        dof,
        min_distance_m: distances.iter().copied().fold(f64::INFINITY, f64::min),
        max_distance_m: distances.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_distance_m: distances.iter().sum::<f64>() / n,
        distances_m: distances,
        max_joint_step_rad: joints
            .windows(2)
            .map(|w| w[1].max_abs_diff(&w[0]))
            .fold(0.0, f64::max),
    };
    let json_path = PathBuf::from(format!("{}.compensation.json", out.with_extension("").display()));
    let text = serde_json::to_string_pretty(&summary).expect("serializable");
    std::fs::write(&json_path, text + "\n").map_err(|e| CliError::Processing(format!("{}: {e}", json_path.display())))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileReport {
    pub path: PathBuf,
    pub frames: Option<usize>,
    pub mode: Option<String>,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateSummary {
    pub files: Vec<FileReport>,
    /// Findings that concern the directory as a whole.
    pub aggregate: Vec<Finding>,
}

impl ValidateSummary {
    pub fn is_valid(&self) -> bool {
        self.aggregate.is_empty() && self.files.iter().all(|f| f.report.is_valid())
    }

    pub fn to_text(&self) -> String {
        let valid = self.files.iter().filter(|f| f.report.is_valid()).count();
        let mut out = format!(
            "episodes: {}\nvalid: {valid}\ninvalid: {}\nframes: {}\n",
            self.files.len(),
            self.files.len() - valid,
            self.files.iter().filter_map(|f| f.frames).sum::<usize>()
        );
        for f in &self.aggregate {
            out.push_str(&format!("finding: {} {}\n", f.check, f.message));
        }
        for f in &self.files {
            out.push_str(&format!("== {}\n", f.path.display()));
            out.push_str(&f.report.to_text());
        }
        out
    }
}

fn validate_file(path: &Path) -> FileReport {
    match read_episode(path) {
        Ok(ep) => FileReport {
            path: path.to_path_buf(),
            frames: Some(ep.len()),
            mode: Some(ep.layout.name().to_string()),
            report: validate_episode(&ep),
        },
        Err(e) => FileReport {
            path: path.to_path_buf(),
            frames: None,
            mode: None,
            report: ValidationReport {
                findings: vec![Finding {
                    check: "read".into(),
                    row: None,
                    message: e.to_string(),
                }],
            },
        },
    }
}

/// Validates one episode file or every episode directly inside a directory.
pub fn cmd_validate(path: &Path) -> Result<ValidateSummary, CliError> {
    if path.is_dir() {
        let files = list_episodes(path).map_err(usage)?;
        let mut aggregate = Vec::new();
        if files.len() > MAX_EPISODES_PER_DIR {
            aggregate.push(Finding {
                check: "directory".into(),
                row: None,
                message: format!("{} episodes, at most {MAX_EPISODES_PER_DIR} allowed", files.len()),
            });
        }
        Ok(ValidateSummary {
            files: files.iter().map(|p| validate_file(p)).collect(),
            aggregate,
        })
    } else if path.exists() {
        Ok(ValidateSummary {
            files: vec![validate_file(path)],
            aggregate: Vec::new(),
        })
    } else {
        Err(CliError::Usage(format!("{}: no such file or directory", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Matched through the manifest's camera frame indices.
    FrameIndex,
    /// Row `i` of the episode against record `i` of the truth log.
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub alignment: Alignment,
    #[serde(flatten)]
    pub stats: TranslationErrorStats,
}

/// Translation error of an episode's TCP rows against a truth log, in mm.
/// Rows are matched by camera frame index when the episode's manifest is
/// present, otherwise by position when the lengths agree.
pub fn cmd_eval(estimate_episode: &Path, truth_file: &Path) -> Result<EvalSummary, CliError> {
    let ep = read_episode(estimate_episode).map_err(|e| CliError::Validation(e.to_string()))?;
    let est = ep
        .tcp_poses()
        .map_err(|e| CliError::Validation(format!("{}: {e}", estimate_episode.display())))?;
    let truth = parsed(truth_file, parse_truth_log(&read_input(truth_file)?))?;
    let manifest_path = EpisodeManifest::path_for(estimate_episode);
    let (alignment, truth_poses): (Alignment, Vec<Pose>) = if manifest_path.is_file() {
        let manifest = EpisodeManifest::read(&manifest_path).map_err(processing)?;
        let matched = truth_for_frames(&truth, &manifest.frame_indices).map_err(|f| {
            CliError::Processing(format!("{}: no record for camera frame {f}", truth_file.display()))
        })?;
        (Alignment::FrameIndex, matched.iter().map(|r| r.tcp).collect())
    } else if truth.len() == est.len() {
        (Alignment::Index, truth.iter().map(|r| r.tcp).collect())
    } else {
        return Err(CliError::Processing(format!(
            "no manifest next to {} and lengths differ (episode {}, truth {})",
            estimate_episode.display(),
            est.len(),
            truth.len()
        )));
    };
    let stats = translation_error(&est, &truth_poses).map_err(processing)?;
    Ok(EvalSummary { alignment, stats })
}

/// Compensation distance and shifted pose over `steps + 1` widths.
pub fn cmd_sweep(config_path: &Path, steps: usize, pose: Pose) -> Result<Vec<SweepRow>, CliError> {
    let loaded = load_config(config_path)?;
    let params = loaded
        .config
        .compensation
        .ok_or_else(|| CliError::Usage(format!("{}: missing compensation parameters", config_path.display())))?;
    sweep(&pose, &params, steps).map_err(usage)
}

/// CSV rendering of a sweep: `w_m,d_m,x,y,z,qx,qy,qz,qw`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("w_m,d_m,x,y,z,qx,qy,qz,qw\n");
    for r in rows {
        let p = r.corrected.to_row();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.w, r.d, p[0], p[1], p[2], p[3], p[4], p[5], p[6]
        ));
    }
    out
}
