//! Serial revolute chains: parsing (URDF subset and a native TOML format),
//! forward kinematics, analytic Jacobians and damped-least-squares IK with
//! warm-started joint trajectories.
//!
//! # Native chain format
//!
//! ```toml
//! # joints in base -> flange order
//! [[joint]]
//! name = "joint1"
//! xyz = [0.0, 0.0, 0.267]    # origin translation in the parent frame, m
//! rpy = [0.0, 0.0, 0.0]      # origin fixed-axis roll/pitch/yaw, rad
//! axis = [0.0, 0.0, 1.0]
//! limits = [-6.283, 6.283]   # rad
//!
//! [tool]                     # flange -> gripper center (optional)
//! xyz = [0.0, 0.0, 0.172]
//! rpy = [0.0, 0.0, 0.0]
//! ```
//!
//! # URDF subset
//!
//! `<robot>` with `<link>` and `<joint>` elements. Joints read `type`,
//! `<parent link>`, `<child link>`, `<origin xyz rpy>`, `<axis xyz>` and
//! `<limit lower upper>`. `revolute` and `continuous` joints become chain
//! joints, `fixed` joints are folded into the next origin (or the tool offset
//! at the tip). Visuals, collisions, inertials, transmissions and other
//! elements are skipped with a warning.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{compose, Pose, UnitQuaternion, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
    #[error("joint `{name}` has unsupported type `{kind}`")]
    UnsupportedJoint { name: String, kind: String },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("joint `{joint}` value {value} outside limits [{lo}, {hi}]")]
    Domain {
        joint: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("target unreachable after {iterations} iterations: best residual {position_error:.3e} m / {orientation_error:.3e} rad")]
    Unreachable {
        iterations: usize,
        position_error: f64,
        orientation_error: f64,
        best: JointVector,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<KinematicsError>,
    },
}

impl KinematicsError {
    /// Frame index for errors raised by [`joint_trajectory`].
    pub fn frame(&self) -> Option<usize> {
        match self {
            Self::Frame { frame, .. } => Some(*frame),
            _ => None,
        }
    }
}

/// Revolute joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Fixed transform from the parent frame.
    pub origin: Pose,
    /// Unit rotation axis in the joint frame.
    pub axis: Vec3,
    /// `(lo, hi)` in radians.
    pub limits: (f64, f64),
}

impl Joint {
    pub fn new(
        name: impl Into<String>,
        origin: Pose,
        axis: Vec3,
        limits: (f64, f64),
    ) -> Result<Self, KinematicsError> {
        let name = name.into();
        let axis = axis
            .normalized()
            .filter(|a| a.is_finite())
            .ok_or_else(|| KinematicsError::InvalidChain(format!("joint `{name}` has a zero axis")))?;
        if limits.0.is_nan() || limits.1.is_nan() || !(limits.0 < limits.1) {
            return Err(KinematicsError::InvalidChain(format!(
                "joint `{name}` limits [{}, {}] are not increasing",
                limits.0, limits.1
            )));
        }
        Ok(Self {
            name,
            origin,
            axis,
            limits,
        })
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.limits.0 && value <= self.limits.1
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.limits.0, self.limits.1)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Infinity-norm distance.
    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl fmt::Display for JointVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    pub flange_to_gripper: Pose,
}

impl KinematicChain {
    pub fn new(joints: Vec<Joint>, flange_to_gripper: Pose) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidChain("chain has no joints".into()));
        }
        Ok(Self {
            joints,
            flange_to_gripper,
        })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn check_limits(&self, theta: &JointVector) -> Result<(), KinematicsError> {
        self.check_len(theta)?;
        for (j, &v) in self.joints.iter().zip(&theta.0) {
            if !j.contains(v) {
                return Err(KinematicsError::Domain {
                    joint: j.name.clone(),
                    value: v,
                    lo: j.limits.0,
                    hi: j.limits.1,
                });
            }
        }
        Ok(())
    }

    fn check_len(&self, theta: &JointVector) -> Result<(), KinematicsError> {
        if theta.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub fn clamp(&self, theta: &JointVector) -> JointVector {
        JointVector(
            self.joints
                .iter()
                .zip(&theta.0)
                .map(|(j, &v)| j.clamp(v))
                .collect(),
        )
    }

    /// TCP pose for `theta` without the limit check.
    fn forward_unchecked(&self, theta: &[f64]) -> Pose {
        let mut t = Pose::IDENTITY;
        for (j, &q) in self.joints.iter().zip(theta) {
            t = compose(&t, &j.origin);
            t = compose(&t, &Pose::from_rotation(UnitQuaternion::from_axis_angle(j.axis, q)));
        }
        compose(&t, &self.flange_to_gripper)
    }

    /// TCP pose and the 6 x n geometric Jacobian (rows: linear x,y,z then
    /// angular x,y,z, both in the base frame).
    fn forward_with_jacobian(&self, theta: &[f64]) -> (Pose, DMatrix<f64>) {
        let mut t = Pose::IDENTITY;
        let mut axes = Vec::with_capacity(self.dof());
        for (j, &q) in self.joints.iter().zip(theta) {
            t = compose(&t, &j.origin);
            axes.push((t.position, t.orientation.rotate(j.axis)));
            t = compose(&t, &Pose::from_rotation(UnitQuaternion::from_axis_angle(j.axis, q)));
        }
        let tcp = compose(&t, &self.flange_to_gripper);
        let mut jac = DMatrix::zeros(6, self.dof());
        for (c, (origin, axis)) in axes.into_iter().enumerate() {
            let lin = axis.cross(tcp.position - origin);
            for (r, v) in [lin.x, lin.y, lin.z, axis.x, axis.y, axis.z].into_iter().enumerate() {
                jac[(r, c)] = v;
            }
        }
        (tcp, jac)
    }

    /// Forward kinematics: `prod_j (origin_j * Rot(axis_j, theta_j)) * flange_to_gripper`.
    pub fn forward(&self, theta: &JointVector) -> Result<Pose, KinematicsError> {
        self.check_limits(theta)?;
        Ok(self.forward_unchecked(&theta.0))
    }

    /// Geometric Jacobian at `theta` as row-major rows
    /// `[vx, vy, vz, wx, wy, wz]` per joint column.
    pub fn jacobian(&self, theta: &JointVector) -> Result<Vec<[f64; 6]>, KinematicsError> {
        self.check_len(theta)?;
        let (_, jac) = self.forward_with_jacobian(&theta.0);
        Ok((0..self.dof())
            .map(|c| std::array::from_fn(|r| jac[(r, c)]))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub max_iters: usize,
    pub pos_tol_m: f64,
    pub rot_tol_rad: f64,
    /// Smallest damping factor lambda in `(J^T J + lambda^2 I)`. Lambda grows
    /// after a step that does not reduce the error and shrinks back after one
    /// that does.
    pub damping: f64,
    /// Largest per-joint change in one iteration.
    pub step_limit_rad: f64,
    pub position_weight: f64,
    pub orientation_weight: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            pos_tol_m: 1e-6,
            rot_tol_rad: 1e-6,
            damping: 1e-3,
            step_limit_rad: 0.5,
            position_weight: 1.0,
            orientation_weight: 1.0,
        }
    }
}

/// Upper bound for the adaptive damping factor.
const MAX_DAMPING: f64 = 1e3;

/// Residuals of an IK solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkResidual {
    pub position_m: f64,
    /// Geodesic angle of `R_target^-1 * R_fk`.
    pub orientation_rad: f64,
    pub iterations: usize,
}

fn residual(fk: &Pose, target: &Pose) -> (f64, f64) {
    (
        (target.position - fk.position).norm(),
        target.orientation.angle_to(&fk.orientation),
    )
}

/// Damped-least-squares IK started from `seed`.
pub fn inverse(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    cfg: &IkConfig,
) -> Result<JointVector, KinematicsError> {
    inverse_with_residual(chain, target, seed, cfg).map(|(theta, _)| theta)
}

/// As [`inverse`], also returning the final residual.
pub fn inverse_with_residual(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    cfg: &IkConfig,
) -> Result<(JointVector, IkResidual), KinematicsError> {
    chain.check_limits(seed)?;
    let n = chain.dof();
    let error_vector = |fk: &Pose| {
        let dp = (target.position - fk.position) * cfg.position_weight;
        let dr = (target.orientation * fk.orientation.inverse()).to_rotation_vector() * cfg.orientation_weight;
        DVector::from_column_slice(&[dp.x, dp.y, dp.z, dr.x, dr.y, dr.z])
    };
    let mut theta = seed.0.clone();
    let (mut fk, mut jac) = chain.forward_with_jacobian(&theta);
    let mut err = error_vector(&fk);
    let mut lambda = cfg.damping;
    let mut best: Option<(f64, Vec<f64>, f64, f64)> = None;

    for iter in 0..=cfg.max_iters {
        let (pos_err, rot_err) = residual(&fk, target);
        if !(pos_err.is_finite() && rot_err.is_finite()) {
            return Err(KinematicsError::Numerical(format!(
                "non-finite residual at iteration {iter}"
            )));
        }
        if pos_err <= cfg.pos_tol_m && rot_err <= cfg.rot_tol_rad {
            return Ok((
                JointVector(theta),
                IkResidual {
                    position_m: pos_err,
                    orientation_rad: rot_err,
                    iterations: iter,
                },
            ));
        }
        let score = cfg.position_weight * pos_err + cfg.orientation_weight * rot_err;
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, theta.clone(), pos_err, rot_err));
        }
        if iter == cfg.max_iters {
            break;
        }

        let mut weighted = jac.clone();
        for r in 0..6 {
            let w = if r < 3 {
                cfg.position_weight
            } else {
                cfg.orientation_weight
            };
            for c in 0..n {
                weighted[(r, c)] *= w;
            }
        }
        if weighted.iter().any(|v| !v.is_finite()) {
            return Err(KinematicsError::Numerical(format!(
                "non-finite Jacobian at iteration {iter}"
            )));
        }
        // Joints resting on a limit whose step points outward are frozen and
        // the step is solved again over the remaining joints.
        let mut frozen = vec![false; n];
        let step = loop {
            let mut active = weighted.clone();
            for (c, f) in frozen.iter().enumerate() {
                if *f {
                    active.column_mut(c).fill(0.0);
                }
            }
            let jt = active.transpose();
            let normal = &jt * &active + DMatrix::identity(n, n) * (lambda * lambda);
            let rhs = &jt * &err;
            let step = normal
                .cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or_else(|| KinematicsError::Numerical("damped normal matrix not positive definite".into()))?;
            let mut changed = false;
            for (c, j) in chain.joints().iter().enumerate() {
                let outward = (theta[c] <= j.limits.0 && step[c] < 0.0) || (theta[c] >= j.limits.1 && step[c] > 0.0);
                if outward && !frozen[c] {
                    frozen[c] = true;
                    changed = true;
                }
            }
            if !changed {
                break step;
            }
        };
        let largest = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !largest.is_finite() {
            return Err(KinematicsError::Numerical(format!(
                "non-finite step at iteration {iter}"
            )));
        }
        let scale = if largest > cfg.step_limit_rad {
            cfg.step_limit_rad / largest
        } else {
            1.0
        };
        let candidate: Vec<f64> = theta
            .iter()
            .zip(step.iter())
            .zip(chain.joints())
            .map(|((t, s), j)| j.clamp(t + s * scale))
            .collect();
        let (cand_fk, cand_jac) = chain.forward_with_jacobian(&candidate);
        let cand_err = error_vector(&cand_fk);
        // Levenberg-Marquardt style: shrink the damping after an improving
        // step, raise it and retry from the same point otherwise.
        if cand_err.norm_squared() < err.norm_squared() {
            theta = candidate;
            fk = cand_fk;
            jac = cand_jac;
            err = cand_err;
            lambda = (lambda * 0.5).max(cfg.damping);
        } else {
            lambda = (lambda * 4.0).min(MAX_DAMPING);
        }
    }

    let (_, best, position_error, orientation_error) = best.expect("at least one iteration");
    Err(KinematicsError::Unreachable {
        iterations: cfg.max_iters,
        position_error,
        orientation_error,
        best: JointVector(best),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub solutions: Vec<JointVector>,
    /// `|theta_i - theta_{i-1}|_inf` for each `i >= 1`.
    pub step_jumps: Vec<f64>,
    pub max_step_jump: f64,
}

/// Solves every TCP pose in order, seeding frame `i` with the solution of
/// frame `i - 1`. The first frame is seeded with `seed0`.
pub fn joint_trajectory(
    chain: &KinematicChain,
    tcp_traj: &[Pose],
    seed0: &JointVector,
    cfg: &IkConfig,
) -> Result<JointTrajectory, KinematicsError> {
    if tcp_traj.is_empty() {
        return Err(KinematicsError::InvalidChain("empty TCP trajectory".into()));
    }
    let mut solutions: Vec<JointVector> = Vec::with_capacity(tcp_traj.len());
    let mut step_jumps = Vec::with_capacity(tcp_traj.len().saturating_sub(1));
    for (i, target) in tcp_traj.iter().enumerate() {
        let seed = solutions.last().unwrap_or(seed0);
        let theta = inverse(chain, target, seed, cfg).map_err(|e| KinematicsError::Frame {
            frame: i,
            source: Box::new(e),
        })?;
        if let Some(prev) = solutions.last() {
            step_jumps.push(theta.max_abs_diff(prev));
        }
        solutions.push(theta);
    }
    let max_step_jump = step_jumps.iter().copied().fold(0.0, f64::max);
    Ok(JointTrajectory {
        solutions,
        step_jumps,
        max_step_jump,
    })
}

/// What to do with prismatic, planar or floating joints in a URDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonRevolutePolicy {
    #[default]
    Reject,
    /// Treat the joint as fixed at zero and emit a warning.
    SkipAsFixed,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOptions {
    pub non_revolute: NonRevolutePolicy,
    /// Extract the path from the root to this link; other branches are
    /// ignored. Without it, any branching is an error.
    pub tip_link: Option<String>,
    /// Appended after whatever the document provides at the tip.
    pub flange_to_gripper: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedChain {
    pub chain: KinematicChain,
    pub warnings: Vec<String>,
}

/// Parses either format; documents starting with `<` are treated as URDF.
pub fn parse_chain(text: &str, opts: &ParseOptions) -> Result<ParsedChain, KinematicsError> {
    let parsed = if text.trim_start().starts_with('<') {
        parse_urdf(text, opts)?
    } else {
        parse_native(text)?
    };
    let ParsedChain { mut chain, warnings } = parsed;
    if let Some(extra) = &opts.flange_to_gripper {
        chain.flange_to_gripper = compose(&chain.flange_to_gripper, extra);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ParsedChain { chain, warnings })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeDoc {
    joint: Vec<NativeJoint>,
    #[serde(default)]
    tool: Option<NativeOrigin>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeJoint {
    name: String,
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
    axis: [f64; 3],
    limits: [f64; 2],
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct NativeOrigin {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

fn origin_pose(xyz: [f64; 3], rpy: [f64; 3]) -> Pose {
    Pose::new(Vec3::from_array(xyz), UnitQuaternion::from_rpy(rpy[0], rpy[1], rpy[2]))
}

fn parse_native(text: &str) -> Result<ParsedChain, KinematicsError> {
    let doc: NativeDoc = toml::from_str(text).map_err(|e| KinematicsError::Parse {
        location: e
            .span()
            .map(|s| line_col(text, s.start))
            .unwrap_or_else(|| "document".into()),
        message: e.message().to_string(),
    })?;
    let joints = doc
        .joint
        .into_iter()
        .map(|j| {
            Joint::new(
                j.name,
                origin_pose(j.xyz, j.rpy),
                Vec3::from_array(j.axis),
                (j.limits[0], j.limits[1]),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let tool = doc.tool.unwrap_or_default();
    Ok(ParsedChain {
        chain: KinematicChain::new(joints, origin_pose(tool.xyz, tool.rpy))?,
        warnings: Vec::new(),
    })
}

fn line_col(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    format!("{line}:{col}")
}

struct UrdfJoint<'a> {
    name: &'a str,
    kind: &'a str,
    parent: &'a str,
    child: &'a str,
    origin: Pose,
    axis: Vec3,
    limits: Option<(f64, f64)>,
}

fn parse_urdf(text: &str, opts: &ParseOptions) -> Result<ParsedChain, KinematicsError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| KinematicsError::Parse {
        location: format!("{}", e.pos()),
        message: e.to_string(),
    })?;
    let at = |node: roxmltree::Node| {
        let p = doc.text_pos_at(node.range().start);
        format!("{}:{}", p.row, p.col)
    };
    let perr = |node: roxmltree::Node, message: String| KinematicsError::Parse {
        location: at(node),
        message,
    };

    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(perr(robot, format!("expected <robot>, found <{}>", robot.tag_name().name())));
    }

    let mut warnings = Vec::new();
    let mut skipped: HashMap<String, usize> = HashMap::new();
    let mut links = Vec::new();
    let mut joints = Vec::new();
    for el in robot.children().filter(|n| n.is_element()) {
        match el.tag_name().name() {
            "link" => {
                let name = el
                    .attribute("name")
                    .ok_or_else(|| perr(el, "<link> without name".into()))?;
                links.push(name);
                for sub in el.children().filter(|n| n.is_element()) {
                    *skipped.entry(format!("link/{}", sub.tag_name().name())).or_default() += 1;
                }
            }
            "joint" => joints.push(parse_urdf_joint(el, &perr)?),
            other => *skipped.entry(other.to_string()).or_default() += 1,
        }
    }
    let mut skipped: Vec<_> = skipped.into_iter().collect();
    skipped.sort();
    for (what, count) in skipped {
        warnings.push(format!("ignored {count} unsupported <{what}> element(s)"));
    }

    let by_child: HashMap<&str, usize> = joints.iter().enumerate().map(|(i, j)| (j.child, i)).collect();
    let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, j) in joints.iter().enumerate() {
        if by_child.get(j.child) != Some(&i) {
            return Err(KinematicsError::UnsupportedTopology(format!(
                "link `{}` has more than one parent joint",
                j.child
            )));
        }
        children.entry(j.parent).or_default().push(i);
    }
    let roots: Vec<&str> = links
        .iter()
        .copied()
        .filter(|l| !by_child.contains_key(l))
        .collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return Err(KinematicsError::UnsupportedTopology("no root link".into())),
        many => {
            return Err(KinematicsError::UnsupportedTopology(format!(
                "multiple root links: {}",
                many.join(", ")
            )))
        }
    };

    let path: Vec<usize> = match &opts.tip_link {
        Some(tip) => {
            let mut path = Vec::new();
            let mut link = tip.as_str();
            while link != root {
                let &j = by_child.get(link).ok_or_else(|| {
                    KinematicsError::InvalidChain(format!("tip link `{tip}` not reachable from `{root}`"))
                })?;
                path.push(j);
                link = joints[j].parent;
            }
            path.reverse();
            path
        }
        None => {
            let mut path = Vec::new();
            let mut link = root;
            loop {
                match children.get(link).map(Vec::as_slice) {
                    None | Some([]) => break,
                    Some([j]) => {
                        path.push(*j);
                        link = joints[*j].child;
                    }
                    Some(many) => {
                        let names: Vec<_> = many.iter().map(|&j| joints[j].name).collect();
                        return Err(KinematicsError::UnsupportedTopology(format!(
                            "link `{link}` branches into joints {}",
                            names.join(", ")
                        )));
                    }
                }
            }
            path
        }
    };

    let mut chain_joints = Vec::new();
    let mut pending = Pose::IDENTITY;
    for &ji in &path {
        let j = &joints[ji];
        match j.kind {
            "revolute" | "continuous" => {
                let limits = match (j.kind, j.limits) {
                    (_, Some(l)) if j.kind == "revolute" => l,
                    ("continuous", _) => (f64::NEG_INFINITY, f64::INFINITY),
                    _ => {
                        return Err(KinematicsError::InvalidChain(format!(
                            "revolute joint `{}` has no <limit>",
                            j.name
                        )))
                    }
                };
                chain_joints.push(Joint::new(j.name, compose(&pending, &j.origin), j.axis, limits)?);
                pending = Pose::IDENTITY;
            }
            "fixed" => pending = compose(&pending, &j.origin),
            other => match opts.non_revolute {
                NonRevolutePolicy::Reject => {
                    return Err(KinematicsError::UnsupportedJoint {
                        name: j.name.to_string(),
                        kind: other.to_string(),
                    })
                }
                NonRevolutePolicy::SkipAsFixed => {
                    warnings.push(format!("{other} joint `{}` treated as fixed", j.name));
                    pending = compose(&pending, &j.origin);
                }
            },
        }
    }
    Ok(ParsedChain {
        chain: KinematicChain::new(chain_joints, pending)?,
        warnings,
    })
}

fn parse_urdf_joint<'a, 'input>(
    el: roxmltree::Node<'a, 'input>,
    perr: &dyn Fn(roxmltree::Node, String) -> KinematicsError,
) -> Result<UrdfJoint<'a>, KinematicsError> {
    let attr = |node: roxmltree::Node<'a, 'input>, name: &str| {
        node.attribute(name)
            .ok_or_else(|| perr(node, format!("<{}> missing `{name}`", node.tag_name().name())))
    };
    let child_el = |tag: &str| el.children().find(|n| n.has_tag_name(tag));
    let floats = |node: roxmltree::Node<'a, 'input>, name: &str, default: [f64; 3]| -> Result<[f64; 3], KinematicsError> {
        match node.attribute(name) {
            None => Ok(default),
            Some(s) => {
                let v: Vec<f64> = s
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| perr(node, format!("`{name}` is not a list of numbers: {s:?}")))?;
                <[f64; 3]>::try_from(v)
                    .map_err(|_| perr(node, format!("`{name}` needs 3 values: {s:?}")))
            }
        }
    };
    let scalar = |node: roxmltree::Node<'a, 'input>, name: &str| -> Result<Option<f64>, KinematicsError> {
        node.attribute(name)
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| perr(node, format!("`{name}` is not a number: {s:?}")))
            })
            .transpose()
    };

    let name = attr(el, "name")?;
    let kind = attr(el, "type")?;
    let parent = child_el("parent").ok_or_else(|| perr(el, format!("joint `{name}` has no <parent>")))?;
    let child = child_el("child").ok_or_else(|| perr(el, format!("joint `{name}` has no <child>")))?;
    let origin = match child_el("origin") {
        Some(o) => origin_pose(floats(o, "xyz", [0.0; 3])?, floats(o, "rpy", [0.0; 3])?),
        None => Pose::IDENTITY,
    };
    let axis = match child_el("axis") {
        Some(a) => Vec3::from_array(floats(a, "xyz", [1.0, 0.0, 0.0])?),
        None => Vec3::UNIT_X,
    };
    let limits = match child_el("limit") {
        Some(l) => Some((
            scalar(l, "lower")?.unwrap_or(0.0),
            scalar(l, "upper")?.unwrap_or(0.0),
        )),
        None => None,
    };
    Ok(UrdfJoint {
        name,
        kind,
        parent: attr(parent, "link")?,
        child: attr(child, "link")?,
        origin,
        axis,
        limits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    pub(crate) const PLANAR: &str = r#"
[[joint]]
name = "shoulder"
axis = [0.0, 0.0, 1.0]
limits = [-3.14159, 3.14159]

[[joint]]
name = "elbow"
xyz = [1.0, 0.0, 0.0]
axis = [0.0, 0.0, 1.0]
limits = [-3.14159, 3.14159]

[tool]
xyz = [1.0, 0.0, 0.0]
"#;

    fn planar() -> KinematicChain {
        parse_chain(PLANAR, &ParseOptions::default()).unwrap().chain
    }

    #[test]
    fn planar_forward() {
        let c = planar();
        let p = c.forward(&JointVector(vec![0.0, 0.0])).unwrap();
        assert!((p.position - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
        let p = c.forward(&JointVector(vec![FRAC_PI_2, -FRAC_PI_2])).unwrap();
        assert!((p.position - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
        assert!(p.orientation.angle() < 1e-15);
    }

    #[test]
    fn forward_checks_domain() {
        let c = planar();
        assert!(matches!(
            c.forward(&JointVector(vec![4.0, 0.0])),
            Err(KinematicsError::Domain { .. })
        ));
        assert!(matches!(
            c.forward(&JointVector(vec![0.0])),
            Err(KinematicsError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn pure_translation_chain_sums_offsets() {
        let text = r#"
[[joint]]
name = "a"
xyz = [0.1, 0.2, 0.3]
axis = [0.0, 0.0, 1.0]
limits = [-1.0, 1.0]
[[joint]]
name = "b"
xyz = [0.0, -0.5, 0.25]
axis = [1.0, 0.0, 0.0]
limits = [-1.0, 1.0]
[tool]
xyz = [1.0, 1.0, 1.0]
"#;
        let c = parse_chain(text, &ParseOptions::default()).unwrap().chain;
        let p = c.forward(&JointVector::zeros(2)).unwrap();
        assert!((p.position - Vec3::new(1.1, 0.7, 1.55)).norm() < 1e-15);
    }

    #[test]
    fn ik_returns_seed_for_its_own_pose() {
        let c = planar();
        let seed = JointVector(vec![0.3, 0.9]);
        let target = c.forward(&seed).unwrap();
        let (theta, res) = inverse_with_residual(&c, &target, &seed, &IkConfig::default()).unwrap();
        assert_eq!(theta, seed);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn ik_converges_from_perturbed_seed() {
        let c = planar();
        let truth = JointVector(vec![0.7, -1.1]);
        let target = c.forward(&truth).unwrap();
        let seed = JointVector(vec![0.9, -0.8]);
        let theta = inverse(&c, &target, &seed, &IkConfig::default()).unwrap();
        let fk = c.forward(&theta).unwrap();
        assert!((fk.position - target.position).norm() <= 1e-6);
        assert!(fk.orientation.angle_to(&target.orientation) <= 1e-6);
    }

    #[test]
    fn ik_reports_unreachable() {
        let c = planar();
        let target = Pose::from_translation(Vec3::new(3.0, 0.0, 0.0));
        match inverse(&c, &target, &JointVector(vec![0.1, 0.1]), &IkConfig::default()) {
            Err(KinematicsError::Unreachable { position_error, .. }) => {
                assert!(position_error >= 1.0 - 1e-6)
            }
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    #[test]
    fn ik_respects_limits() {
        let text = PLANAR.replace("limits = [-3.14159, 3.14159]\n\n[tool]", "limits = [-0.5, 0.5]\n\n[tool]");
        let c = parse_chain(&text, &ParseOptions::default()).unwrap().chain;
        let target = planar().forward(&JointVector(vec![0.0, 1.5])).unwrap();
        let err = inverse(&c, &target, &JointVector(vec![0.0, 0.0]), &IkConfig::default()).unwrap_err();
        match err {
            KinematicsError::Unreachable { best, .. } => {
                assert!(c.check_limits(&best).is_ok());
                assert_eq!(best.0[1], 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trajectory_constant_and_failure_frame() {
        let c = planar();
        let seed = JointVector(vec![0.4, 0.4]);
        let p = c.forward(&seed).unwrap();
        let out = joint_trajectory(&c, &[p; 5], &seed, &IkConfig::default()).unwrap();
        assert!(out.solutions.iter().all(|s| *s == seed));
        assert_eq!(out.max_step_jump, 0.0);

        let traj: Vec<_> = (0..10)
            .map(|i| {
                if i < 5 {
                    let a = 0.2 + 0.1 * i as f64;
                    c.forward(&JointVector(vec![a, -a])).unwrap()
                } else {
                    Pose::from_translation(Vec3::new(2.5, 0.0, 0.0))
                }
            })
            .collect();
        let err = joint_trajectory(&c, &traj, &JointVector(vec![0.2, -0.2]), &IkConfig::default()).unwrap_err();
        assert_eq!(err.frame(), Some(5));
    }

    #[test]
    fn native_parse_errors_have_location() {
        let err = parse_chain("[[joint]]\nname = \"a\"\naxis = [0, 0\n", &ParseOptions::default()).unwrap_err();
        assert!(matches!(err, KinematicsError::Parse { .. }), "{err}");
        let err = parse_chain("[[joint]]\nname = \"a\"\naxis = [0.0, 0.0, 0.0]\nlimits = [-1.0, 1.0]\n", &ParseOptions::default())
            .unwrap_err();
        assert!(matches!(err, KinematicsError::InvalidChain(_)));
    }

    const URDF_ONE: &str = r#"<?xml version="1.0"?>
<robot name="one">
  <link name="base"><visual><geometry><mesh filename="base.stl"/></geometry></visual></link>
  <link name="l1"><inertial><mass value="1"/></inertial></link>
  <joint name="j1" type="revolute">
    <parent link="base"/>
    <child link="l1"/>
    <origin xyz="0 0 0.1" rpy="0 0 0"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.141592653589793" upper="3.141592653589793" effort="1" velocity="1"/>
  </joint>
</robot>"#;

    #[test]
    fn urdf_single_joint() {
        let parsed = parse_chain(URDF_ONE, &ParseOptions::default()).unwrap();
        assert_eq!(parsed.chain.dof(), 1);
        assert_eq!(parsed.chain.joints()[0].axis, Vec3::UNIT_Z);
        assert_eq!(parsed.chain.joints()[0].limits, (-PI, PI));
        assert_eq!(parsed.warnings.len(), 2);
    }

    #[test]
    fn urdf_prismatic_policy() {
        let doc = URDF_ONE.replace("</robot>", r#"
  <link name="l2"/>
  <joint name="slide" type="prismatic">
    <parent link="l1"/><child link="l2"/>
    <origin xyz="0.2 0 0"/>
    <limit lower="0" upper="0.1"/>
  </joint>
</robot>"#);
        let err = parse_chain(&doc, &ParseOptions::default()).unwrap_err();
        assert!(matches!(err, KinematicsError::UnsupportedJoint { ref kind, .. } if kind == "prismatic"));
        let opts = ParseOptions {
            non_revolute: NonRevolutePolicy::SkipAsFixed,
            ..Default::default()
        };
        let parsed = parse_chain(&doc, &opts).unwrap();
        assert_eq!(parsed.chain.dof(), 1);
        assert_eq!(parsed.chain.flange_to_gripper.position, Vec3::new(0.2, 0.0, 0.0));
        assert!(parsed.warnings.iter().any(|w| w.contains("slide")));
    }

    #[test]
    fn urdf_branching_and_malformed() {
        let doc = URDF_ONE.replace("</robot>", r#"
  <link name="cam"/>
  <link name="l2"/>
  <joint name="camj" type="fixed"><parent link="l1"/><child link="cam"/></joint>
  <joint name="j2" type="revolute"><parent link="l1"/><child link="l2"/><limit lower="-1" upper="1"/></joint>
</robot>"#);
        let err = parse_chain(&doc, &ParseOptions::default()).unwrap_err();
        assert!(matches!(err, KinematicsError::UnsupportedTopology(_)), "{err}");
        let opts = ParseOptions {
            tip_link: Some("l2".into()),
            ..Default::default()
        };
        assert_eq!(parse_chain(&doc, &opts).unwrap().chain.dof(), 2);

        let err = parse_chain("<robot><link name=\"a\"></robot>", &ParseOptions::default()).unwrap_err();
        match err {
            KinematicsError::Parse { location, .. } => assert!(location.starts_with("1:")),
            other => panic!("unexpected {other:?}"),
        }
        let bad = URDF_ONE.replace("xyz=\"0 0 0.1\"", "xyz=\"0 zero 0.1\"");
        match parse_chain(&bad, &ParseOptions::default()).unwrap_err() {
            KinematicsError::Parse { location, message } => {
                assert!(location.starts_with("8:"), "{location}");
                assert!(message.contains("xyz"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    pub(crate) const ARM6: &str = include_str!("../fixtures/arm6.toml");

    fn arm6() -> KinematicChain {
        parse_chain(ARM6, &ParseOptions::default()).unwrap().chain
    }

    /// Central differences of FK: linear rows from positions, angular rows
    /// from the rotation vector of `R(theta+h) R(theta-h)^-1`.
    fn numeric_jacobian(c: &KinematicChain, theta: &[f64]) -> Vec<[f64; 6]> {
        let h = 1e-6;
        (0..theta.len())
            .map(|k| {
                let mut plus = theta.to_vec();
                let mut minus = theta.to_vec();
                plus[k] += h;
                minus[k] -= h;
                let a = c.forward_unchecked(&plus);
                let b = c.forward_unchecked(&minus);
                let dp = (a.position - b.position) * (0.5 / h);
                let dr = (a.orientation * b.orientation.inverse()).to_rotation_vector() * (0.5 / h);
                [dp.x, dp.y, dp.z, dr.x, dr.y, dr.z]
            })
            .collect()
    }

    #[test]
    fn ik_slides_along_joint_limit() {
        // The seed pushes joint 3 onto its upper limit.
        let c = arm6();
        let truth = JointVector(vec![0.0, -0.4435377536309003, 0.14353948659834945, -1.4852816417979735, -0.03509408923730638, 0.0]);
        let d = [0.0, 0.0, 0.05144499580429836, 0.0, 0.07671262733227996, 0.048828862721398296];
        let seed = c.clamp(&JointVector(truth.0.iter().zip(&d).map(|(a, b)| a + b).collect()));
        assert_eq!(seed.0[2], c.joints()[2].limits.1);
        let target = c.forward(&truth).unwrap();
        let (_, res) = inverse_with_residual(&c, &target, &seed, &IkConfig::default()).unwrap();
        assert!(res.position_m <= 1e-6 && res.orientation_rad <= 1e-6);
    }

    #[test]
    fn arm6_home_pose() {
        let p = arm6().forward(&JointVector::zeros(6)).unwrap();
        // Flange at (0.207, 0, 0.112) pointing down, tool 0.172 below it.
        assert!((p.position - Vec3::new(0.207, 0.0, -0.060)).norm() < 1e-9, "{}", p.position);
        assert!((p.orientation.angle_to(&UnitQuaternion::rx(PI))) < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn jacobian_matches_finite_differences(
            t in proptest::collection::vec(-1.5f64..0.15, 6),
        ) {
            let c = arm6();
            let theta = JointVector(t);
            let analytic = c.jacobian(&theta).unwrap();
            let numeric = numeric_jacobian(&c, &theta.0);
            for (a, n) in analytic.iter().zip(&numeric) {
                for r in 0..6 {
                    proptest::prop_assert!((a[r] - n[r]).abs() < 1e-6, "{a:?} vs {n:?}");
                }
            }
        }

        #[test]
        fn ik_recovers_reachable_targets(
            t in proptest::collection::vec(-1.5f64..0.15, 6),
            d in proptest::collection::vec(-0.1f64..0.1, 6),
        ) {
            let c = arm6();
            let truth = JointVector(t);
            // Near a singularity a nearby seed can converge to the singular set.
            let (_, jac) = c.forward_with_jacobian(&truth.0);
            proptest::prop_assume!(jac.svd(false, false).singular_values.min() >= 0.02);
            let target = c.forward(&truth).unwrap();
            let seed = c.clamp(&JointVector(truth.0.iter().zip(&d).map(|(a, b)| a + b).collect()));
            let (theta, res) = inverse_with_residual(&c, &target, &seed, &IkConfig::default()).unwrap();
            proptest::prop_assert!(c.check_limits(&theta).is_ok());
            proptest::prop_assert!(res.position_m <= 1e-6 && res.orientation_rad <= 1e-6);
            let fk = c.forward(&theta).unwrap();
            proptest::prop_assert!((fk.position - target.position).norm() <= 1e-6);
        }
    }
}
