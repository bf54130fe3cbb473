//! Pose-confidence gating, low-confidence repair, smoothness thresholds,
//! drift verdicts and trajectory-error metrics.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::sync::PoseRecord;

/// Tracker confidence, ordered `Failed < Low < Medium < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceLevel {
    Failed = 0,
    Low = 1,
    Medium = 2,
    High = 3,
}

impl ConfidenceLevel {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Failed),
            1 => Some(Self::Low),
            2 => Some(Self::Medium),
            3 => Some(Self::High),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QualityError {
    #[error("no pose samples to assess")]
    Empty,
    #[error("smoothness check needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("timestamps not strictly increasing at index {index} ({prev} -> {next})")]
    NonMonotonic { index: usize, prev: f64, next: f64 },
    #[error("low-confidence run at samples {start}..={end} touches the {side} of the recording and cannot be interpolated")]
    Unrepairable {
        start: usize,
        end: usize,
        side: &'static str,
    },
    #[error("trajectory lengths differ: estimate {estimate}, truth {truth}")]
    LengthMismatch { estimate: usize, truth: usize },
}

/// How smoothness violations affect the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ViolationPolicy {
    /// Any violation fails.
    #[default]
    Strict,
    /// Up to `max_violations` violations are tolerated.
    Lenient { max_violations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityThresholds {
    /// m/s
    pub v_max: f64,
    /// m/s^2
    pub a_max: f64,
    /// rad per step
    pub dtheta_max: f64,
    pub high_conf_fraction: f64,
    pub policy: ViolationPolicy,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            v_max: 1.5,
            a_max: 20.0,
            dtheta_max: 0.3,
            high_conf_fraction: 0.95,
            policy: ViolationPolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Velocity,
    Acceleration,
    Orientation,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Velocity => "velocity",
            Self::Acceleration => "acceleration",
            Self::Orientation => "orientation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub sample_count: usize,
    pub high_fraction: f64,
    pub high_conf_threshold: f64,
    pub repaired_indices: Vec<usize>,
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftVerdict>,
    pub verdict: Verdict,
}

impl QualityReport {
    /// Re-evaluates `verdict` from the fraction and the violation list.
    pub fn recompute_verdict(&mut self, policy: ViolationPolicy) {
        let allowed = match policy {
            ViolationPolicy::Strict => 0,
            ViolationPolicy::Lenient { max_violations } => max_violations,
        };
        self.verdict = if self.high_fraction >= self.high_conf_threshold
            && self.violations.len() <= allowed
        {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
    }

    /// Line-oriented `key: value` rendering.
    ///
    /// Fields: `verdict`, `samples`, `high_fraction`, `high_conf_threshold`,
    /// `repaired`, `violations`, one `violation:` line per violation, and
    /// `drift_status`/`drift_residual_m` when a drift verdict is attached.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let verdict = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        };
        let _ = writeln!(out, "verdict: {verdict}");
        let _ = writeln!(out, "samples: {}", self.sample_count);
        let _ = writeln!(out, "high_fraction: {:.4}", self.high_fraction);
        let _ = writeln!(out, "high_conf_threshold: {:.4}", self.high_conf_threshold);
        let _ = writeln!(out, "repaired: {}", self.repaired_indices.len());
        let _ = writeln!(out, "violations: {}", self.violations.len());
        for v in &self.violations {
            let _ = writeln!(
                out,
                "violation: index={} kind={} value={:.6} threshold={:.6}",
                v.index, v.kind, v.value, v.threshold
            );
        }
        if let Some(d) = &self.drift {
            let _ = writeln!(out, "drift_status: {:?}", d.status);
            let _ = writeln!(out, "drift_residual_m: {:.6}", d.endpoint_residual_m);
        }
        out
    }
}

/// Confidence gate: the fraction of `High` samples must reach
/// `thr.high_conf_fraction`.
pub fn validate_environment(
    poses: &[PoseRecord],
    thr: &QualityThresholds,
) -> Result<QualityReport, QualityError> {
    if poses.is_empty() {
        return Err(QualityError::Empty);
    }
    let high = poses
        .iter()
        .filter(|r| r.payload.confidence == ConfidenceLevel::High)
        .count();
    let mut report = QualityReport {
        sample_count: poses.len(),
        high_fraction: high as f64 / poses.len() as f64,
        high_conf_threshold: thr.high_conf_fraction,
        repaired_indices: Vec::new(),
        violations: Vec::new(),
        drift: None,
        verdict: Verdict::Fail,
    };
    report.recompute_verdict(thr.policy);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub samples: Vec<PoseRecord>,
    pub repaired_indices: Vec<usize>,
}

/// Replaces every interior sample below `High` by interpolating between the
/// nearest flanking `High` samples: linear in position, slerp in orientation,
/// both parameterized by timestamp. Repaired samples are promoted to `High`.
///
/// A non-`High` run touching either end cannot be interpolated. It is kept
/// unchanged if every sample in it is at least `Medium`, otherwise the run is
/// reported as unrepairable.
pub fn repair_low_confidence(poses: &[PoseRecord]) -> Result<RepairOutcome, QualityError> {
    if poses.is_empty() {
        return Err(QualityError::Empty);
    }
    let n = poses.len();
    let mut samples = poses.to_vec();
    let mut repaired = Vec::new();

    let is_high = |i: usize| poses[i].payload.confidence == ConfidenceLevel::High;
    let mut i = 0;
    while i < n {
        if is_high(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !is_high(i) {
            i += 1;
        }
        let end = i - 1;
        if start == 0 || end == n - 1 {
            let side = if start == 0 { "start" } else { "end" };
            let all_medium = poses[start..=end]
                .iter()
                .all(|r| r.payload.confidence >= ConfidenceLevel::Medium);
            if all_medium {
                continue;
            }
            return Err(QualityError::Unrepairable { start, end, side });
        }
        let before = &poses[start - 1];
        let after = &poses[end + 1];
        let span = after.timestamp - before.timestamp;
        for (k, slot) in samples.iter_mut().enumerate().take(end + 1).skip(start) {
            let s = (poses[k].timestamp - before.timestamp) / span;
            let a = &before.payload.pose;
            let b = &after.payload.pose;
            slot.payload.pose = Pose::new(
                a.position.lerp(b.position, s),
                a.orientation.slerp(&b.orientation, s),
            );
            slot.payload.confidence = ConfidenceLevel::High;
            repaired.push(k);
        }
    }
    Ok(RepairOutcome {
        samples,
        repaired_indices: repaired,
    })
}

/// Finite-difference smoothness check.
///
/// Velocity and per-step rotation angle for step `i-1 -> i` are reported at
/// index `i`. Acceleration at interior index `i` is the change between the
/// incoming and outgoing velocities divided by half the span `t[i+1] - t[i-1]`.
pub fn smoothness_check(
    poses: &[PoseRecord],
    thr: &QualityThresholds,
) -> Result<Vec<Violation>, QualityError> {
    let n = poses.len();
    if n < 3 {
        return Err(QualityError::TooFewSamples(n));
    }
    for (i, w) in poses.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(QualityError::NonMonotonic {
                index: i + 1,
                prev: w[0].timestamp,
                next: w[1].timestamp,
            });
        }
    }
    let velocity: Vec<_> = poses
        .windows(2)
        .map(|w| {
            let dt = w[1].timestamp - w[0].timestamp;
            (w[1].payload.pose.position - w[0].payload.pose.position) * (1.0 / dt)
        })
        .collect();

    let mut out = Vec::new();
    for i in 1..n {
        let v = velocity[i - 1].norm();
        if v > thr.v_max {
            out.push(Violation {
                index: i,
                kind: ViolationKind::Velocity,
                value: v,
                threshold: thr.v_max,
            });
        }
        if i + 1 < n {
            let half_span = 0.5 * (poses[i + 1].timestamp - poses[i - 1].timestamp);
            let a = ((velocity[i] - velocity[i - 1]) * (1.0 / half_span)).norm();
            if a > thr.a_max {
                out.push(Violation {
                    index: i,
                    kind: ViolationKind::Acceleration,
                    value: a,
                    threshold: thr.a_max,
                });
            }
        }
        let dtheta = poses[i - 1]
            .payload
            .pose
            .orientation
            .angle_to(&poses[i].payload.pose.orientation);
        if dtheta > thr.dtheta_max {
            out.push(Violation {
                index: i,
                kind: ViolationKind::Orientation,
                value: dtheta,
                threshold: thr.dtheta_max,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftStatus {
    Aligned,
    LoopClosed,
    Reinitialize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftVerdict {
    pub endpoint_residual_m: f64,
    pub status: DriftStatus,
}

/// Classifies the end of a trajectory against the reference pose.
///
/// * `Aligned`: endpoint within `align_tol_m`.
/// * `LoopClosed`: endpoint within `closure_tol_m`, and the trajectory left
///   the `closure_tol_m` neighborhood and re-entered it before the last sample.
/// * `Reinitialize`: anything else.
///
/// This only classifies; poses are never corrected.
pub fn drift_check(
    traj: &[Pose],
    reference: &Pose,
    align_tol_m: f64,
    closure_tol_m: f64,
) -> Result<DriftVerdict, QualityError> {
    let last = traj.last().ok_or(QualityError::Empty)?;
    let dist = |p: &Pose| (p.position - reference.position).norm();
    let residual = dist(last);
    let status = if residual <= align_tol_m {
        DriftStatus::Aligned
    } else if residual <= closure_tol_m && revisits(traj, |p| dist(p) <= closure_tol_m) {
        DriftStatus::LoopClosed
    } else {
        DriftStatus::Reinitialize
    };
    Ok(DriftVerdict {
        endpoint_residual_m: residual,
        status,
    })
}

fn revisits(traj: &[Pose], inside: impl Fn(&Pose) -> bool) -> bool {
    let body = &traj[..traj.len() - 1];
    match body.iter().position(|p| !inside(p)) {
        Some(left) => body[left..].iter().any(inside),
        None => false,
    }
}

/// Translation-error summary, millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationErrorStats {
    pub count: usize,
    pub mean_mm: f64,
    pub max_mm: f64,
    pub rmse_mm: f64,
}

/// Per-index Euclidean position error between index-aligned trajectories.
pub fn translation_error(
    estimate: &[Pose],
    truth: &[Pose],
) -> Result<TranslationErrorStats, QualityError> {
    if estimate.len() != truth.len() {
        return Err(QualityError::LengthMismatch {
            estimate: estimate.len(),
            truth: truth.len(),
        });
    }
    if estimate.is_empty() {
        return Err(QualityError::Empty);
    }
    let errors: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.position - t.position).norm() * 1000.0)
        .collect();
    let n = errors.len() as f64;
    Ok(TranslationErrorStats {
        count: errors.len(),
        mean_mm: errors.iter().sum::<f64>() / n,
        max_mm: errors.iter().copied().fold(0.0, f64::max),
        rmse_mm: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
    })
}
