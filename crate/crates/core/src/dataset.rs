//! Episode assembly and the HDF5 episode file layout.
//!
//! ```text
//! episode_<idx>.hdf5
//! |-- observations/
//! |   |-- images/
//! |   |   `-- <camera_name> (T, H, W, 3) uint8
//! |   |-- qpos (T, 7) float64
//! |   `-- gripper_width (T, 1) float64, mm     [optional]
//! |-- action (T, 7) float64
//! `-- attributes: sim (bool), mode (string), plus `dof` (joint mode)
//!     or `initial_pose` (relative mode)
//! ```
//!
//! Column layout of `qpos` and `action` by mode:
//!
//! * `tcp_absolute`: `[x, y, z, qx, qy, qz, qw]` of the TCP in the base frame.
//! * `tcp_relative`: row `i` is the step from frame `i` to `i + 1`
//!   (base-frame translation, local rotation); the last row is the identity
//!   step. `initial_pose` holds the absolute first pose.
//! * `joint`: joint angles in chain order in the first `dof` columns, the
//!   remaining columns zero.
//!
//! `action` mirrors `qpos`. When images are stored by reference, the camera
//! dataset is a `(T,)` array of UTF-8 paths instead of pixels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hdf5::types::{FloatSize, IntSize, TypeDescriptor, VarLenUnicode};
use ndarray::{Array1, Array2, Array4, ArrayD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{relative_trajectory, Pose, RelativePose};
use crate::gripper::WidthSeries;
use crate::kinematics::JointVector;
use crate::sync::SyncedFrame;

pub const DEFAULT_CAMERA: &str = "front";
/// Image size written in metadata when nothing else is known.
pub const DEFAULT_IMAGE_HEIGHT: usize = 1920;
pub const DEFAULT_IMAGE_WIDTH: usize = 1080;
/// Episodes per task directory in batch output.
pub const MAX_EPISODES_PER_DIR: usize = 50;
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

const QPOS: &str = "observations/qpos";
const ACTION: &str = "action";
const IMAGES: &str = "observations/images";
const WIDTH: &str = "observations/gripper_width";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("{path}: schema error at `{object}`: {message}")]
    Schema {
        path: String,
        object: String,
        message: String,
    },
    #[error("invalid episode: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageData {
    Embedded(Array4<u8>),
    External(Vec<String>),
}

impl ImageData {
    pub fn len(&self) -> usize {
        match self {
            Self::Embedded(a) => a.shape()[0],
            Self::External(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All-zero frames of the given size.
    pub fn blank(frames: usize, height: usize, width: usize) -> Self {
        Self::Embedded(Array4::zeros((frames, height, width, 3)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EpisodeLayout {
    TcpAbsolute,
    TcpRelative { initial: Pose },
    Joint { dof: usize },
}

impl EpisodeLayout {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TcpAbsolute => "tcp_absolute",
            Self::TcpRelative { .. } => "tcp_relative",
            Self::Joint { .. } => "joint",
        }
    }
}

/// Extra dataset carried through read and write unchanged.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtraData {
    F64(ArrayD<f64>),
    F32(ArrayD<f32>),
    I64(ArrayD<i64>),
    I32(ArrayD<i32>),
    I16(ArrayD<i16>),
    I8(ArrayD<i8>),
    U64(ArrayD<u64>),
    U32(ArrayD<u32>),
    U16(ArrayD<u16>),
    U8(ArrayD<u8>),
    Bool(ArrayD<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub camera_name: String,
    pub images: ImageData,
    pub qpos: Array2<f64>,
    pub action: Array2<f64>,
    /// `(T, 1)`, mm.
    pub gripper_width: Option<Array2<f64>>,
    pub sim: bool,
    pub layout: EpisodeLayout,
    /// Keyed by path within the file.
    pub extras: BTreeMap<String, ExtraData>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.qpos.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `qpos` rows as poses (absolute layout only).
    pub fn tcp_poses(&self) -> Result<Vec<Pose>, DatasetError> {
        match &self.layout {
            EpisodeLayout::TcpAbsolute => rows_to_poses(&self.qpos),
            EpisodeLayout::TcpRelative { initial } => {
                let steps = rows_to_poses(&self.qpos)?;
                let steps: Vec<RelativePose> = steps[..steps.len().saturating_sub(1)]
                    .iter()
                    .map(|p| RelativePose {
                        translation: p.position,
                        rotation: p.orientation,
                    })
                    .collect();
                Ok(crate::geometry::integrate_relative(initial, &steps))
            }
            EpisodeLayout::Joint { .. } => Err(DatasetError::Invalid(
                "joint-space episode has no TCP rows".into(),
            )),
        }
    }

    pub fn joint_rows(&self) -> Result<Vec<JointVector>, DatasetError> {
        match self.layout {
            EpisodeLayout::Joint { dof } => Ok(self
                .qpos
                .rows()
                .into_iter()
                .map(|r| JointVector(r.iter().take(dof).copied().collect()))
                .collect()),
            _ => Err(DatasetError::Invalid("episode is not in joint layout".into())),
        }
    }
}

fn rows_to_poses(a: &Array2<f64>) -> Result<Vec<Pose>, DatasetError> {
    a.rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let row: [f64; 7] = r
                .iter()
                .copied()
                .collect::<Vec<_>>()
                .try_into()
                .map_err(|_| DatasetError::Invalid(format!("row {i} does not have 7 columns")))?;
            Pose::from_row(&row).map_err(|e| DatasetError::Invalid(format!("row {i}: {e}")))
        })
        .collect()
}

fn rows_array(rows: impl ExactSizeIterator<Item = [f64; 7]>) -> Array2<f64> {
    let n = rows.len();
    let flat: Vec<f64> = rows.flatten().collect();
    Array2::from_shape_vec((n, 7), flat).expect("n x 7")
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssemblyMode {
    TcpAbsolute,
    TcpRelative,
    Joint(Vec<JointVector>),
}

/// Builds an episode from index-aligned synced frames, TCP poses and widths.
/// Images are referenced by the camera `image_ref` of each frame.
pub fn assemble(
    synced: &[SyncedFrame],
    tcp: &[Pose],
    widths: Option<&WidthSeries>,
    mode: AssemblyMode,
) -> Result<Episode, DatasetError> {
    let t = synced.len();
    let width_len = widths.map(WidthSeries::len);
    let joint_len = match &mode {
        AssemblyMode::Joint(j) => Some(j.len()),
        _ => None,
    };
    if t == 0 || tcp.len() != t || width_len.is_some_and(|w| w != t) || joint_len.is_some_and(|j| j != t) {
        let mut msg = format!("synced {t}, tcp {}", tcp.len());
        if let Some(w) = width_len {
            let _ = write!(msg, ", widths {w}");
        }
        if let Some(j) = joint_len {
            let _ = write!(msg, ", joints {j}");
        }
        return Err(DatasetError::LengthMismatch(msg));
    }

    let (qpos, layout) = match mode {
        AssemblyMode::TcpAbsolute => (rows_array(tcp.iter().map(Pose::to_row)), EpisodeLayout::TcpAbsolute),
        AssemblyMode::TcpRelative => {
            let mut steps: Vec<[f64; 7]> = relative_trajectory(tcp).iter().map(RelativePose::to_row).collect();
            steps.push(Pose::IDENTITY.to_row());
            (
                rows_array(steps.into_iter()),
                EpisodeLayout::TcpRelative { initial: tcp[0] },
            )
        }
        AssemblyMode::Joint(joints) => {
            let dof = joints[0].len();
            if dof == 0 || dof > 7 || joints.iter().any(|j| j.len() != dof) {
                return Err(DatasetError::Invalid(format!(
                    "joint rows must share a length between 1 and 7, first row has {dof}"
                )));
            }
            let mut a = Array2::zeros((t, 7));
            for (i, j) in joints.iter().enumerate() {
                for (k, v) in j.0.iter().enumerate() {
                    a[(i, k)] = *v;
                }
            }
            (a, EpisodeLayout::Joint { dof })
        }
    };
    Ok(Episode {
        camera_name: DEFAULT_CAMERA.to_string(),
        images: ImageData::External(synced.iter().map(|f| f.camera.image_ref.clone()).collect()),
        action: qpos.clone(),
        qpos,
        gripper_width: widths.map(|w| Array2::from_shape_vec((t, 1), w.widths_mm.clone()).expect("t x 1")),
        sim: false,
        layout,
        extras: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub check: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, check: &str, row: Option<usize>, message: String) {
        self.findings.push(Finding {
            check: check.into(),
            row,
            message,
        });
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "verdict: {}\nfindings: {}\n",
            if self.is_valid() { "VALID" } else { "INVALID" },
            self.findings.len()
        );
        for f in &self.findings {
            let _ = match f.row {
                Some(r) => writeln!(out, "finding: {} row={} {}", f.check, r, f.message),
                None => writeln!(out, "finding: {} {}", f.check, f.message),
            };
        }
        out
    }
}

/// Shape agreement, 7-column layout and quaternion norms.
pub fn validate_episode(ep: &Episode) -> ValidationReport {
    let mut report = ValidationReport::default();
    let t = ep.qpos.nrows();
    if t == 0 {
        report.push("shape", None, "episode has no timesteps".into());
    }
    for (name, a) in [("qpos", &ep.qpos), ("action", &ep.action)] {
        if a.ncols() != 7 {
            report.push("layout", None, format!("{name} has {} columns, expected 7", a.ncols()));
        }
    }
    if ep.action.nrows() != t {
        report.push("shape", None, format!("action has {} rows, qpos {t}", ep.action.nrows()));
    }
    if ep.images.len() != t {
        report.push("shape", None, format!("images have {} frames, qpos {t}", ep.images.len()));
    }
    if let ImageData::Embedded(a) = &ep.images {
        if a.shape()[3] != 3 {
            report.push("layout", None, format!("images have {} channels, expected 3", a.shape()[3]));
        }
    }
    if let Some(w) = &ep.gripper_width {
        if w.nrows() != t || w.ncols() != 1 {
            report.push("shape", None, format!("gripper_width has shape {:?}, expected ({t}, 1)", w.shape()));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            report.push("gripper_width", Some(i), "non-finite width".into());
        }
    }
    if ep.camera_name.is_empty() || ep.camera_name.contains('/') {
        report.push("layout", None, format!("invalid camera name {:?}", ep.camera_name));
    }
    match ep.layout {
        EpisodeLayout::Joint { dof } => {
            if dof == 0 || dof > 7 {
                report.push("layout", None, format!("joint dof {dof} outside 1..=7"));
            }
        }
        _ if ep.qpos.ncols() == 7 => {
            for (name, a) in [("qpos", &ep.qpos), ("action", &ep.action)] {
                for (i, r) in a.rows().into_iter().enumerate() {
                    let n = (r[3] * r[3] + r[4] * r[4] + r[5] * r[5] + r[6] * r[6]).sqrt();
                    if !((n - 1.0).abs() <= QUATERNION_NORM_TOL) {
                        report.push("quaternion_norm", Some(i), format!("{name} quaternion norm {n}"));
                    }
                }
            }
        }
        _ => {}
    }
    if ep.qpos.iter().chain(ep.action.iter()).any(|v| !v.is_finite()) {
        report.push("finite", None, "qpos or action contains non-finite values".into());
    }
    if ep.qpos.shape() == ep.action.shape() && ep.qpos != ep.action {
        report.push("action", None, "action does not mirror qpos".into());
    }
    report
}

fn h5(path: &Path) -> impl Fn(hdf5::Error) -> DatasetError + '_ {
    move |e| io_err(path, e)
}

/// Writes the episode to `path` through a temporary file in the same
/// directory. Identical episodes produce identical bytes.
pub fn write_episode(path: &Path, ep: &Episode) -> Result<(), DatasetError> {
    let report = validate_episode(ep);
    if !report.is_valid() {
        return Err(DatasetError::Invalid(report.findings[0].message.clone()));
    }
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io_err(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = write_file(&tmp, ep).and_then(|_| std::fs::rename(&tmp, path).map_err(|e| io_err(path, e)));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn write_file(path: &Path, ep: &Episode) -> Result<(), DatasetError> {
    let e = h5(path);
    let file = hdf5::File::create(path).map_err(&e)?;
    let images = file.create_group(IMAGES).map_err(&e)?;
    match &ep.images {
        ImageData::Embedded(a) => {
            images
                .new_dataset_builder()
                .obj_track_times(false)
                .with_data(a)
                .create(ep.camera_name.as_str())
                .map_err(&e)?;
        }
        ImageData::External(paths) => {
            let refs = paths
                .iter()
                .map(|p| VarLenUnicode::from_str(p).map_err(|err| io_err(path, format!("image path {p:?}: {err}"))))
                .collect::<Result<Vec<_>, _>>()?;
            images
                .new_dataset_builder()
                .obj_track_times(false)
                .with_data(&Array1::from(refs))
                .create(ep.camera_name.as_str())
                .map_err(&e)?;
        }
    }
    for (name, a) in [(QPOS, &ep.qpos), (ACTION, &ep.action)] {
        file.new_dataset_builder()
            .obj_track_times(false)
            .with_data(a)
            .create(name)
            .map_err(&e)?;
    }
    if let Some(w) = &ep.gripper_width {
        file.new_dataset_builder()
            .obj_track_times(false)
            .with_data(w)
            .create(WIDTH)
            .map_err(&e)?;
    }
    for (name, data) in &ep.extras {
        write_extra(&file, name, data).map_err(&e)?;
    }
    file.new_attr::<bool>().create("sim").map_err(&e)?.write_scalar(&ep.sim).map_err(&e)?;
    let mode = VarLenUnicode::from_str(ep.layout.name()).expect("ascii");
    file.new_attr::<VarLenUnicode>()
        .create("mode")
        .map_err(&e)?
        .write_scalar(&mode)
        .map_err(&e)?;
    match &ep.layout {
        EpisodeLayout::Joint { dof } => {
            file.new_attr::<u32>()
                .create("dof")
                .map_err(&e)?
                .write_scalar(&(*dof as u32))
                .map_err(&e)?;
        }
        EpisodeLayout::TcpRelative { initial } => {
            file.new_attr::<f64>()
                .shape(7)
                .create("initial_pose")
                .map_err(&e)?
                .write_raw(&initial.to_row())
                .map_err(&e)?;
        }
        EpisodeLayout::TcpAbsolute => {}
    }
    file.flush().map_err(&e)?;
    file.close().map_err(&e)?;
    Ok(())
}

fn write_extra(file: &hdf5::File, name: &str, data: &ExtraData) -> hdf5::Result<()> {
    if let Some((parent, _)) = name.rsplit_once('/') {
        if !parent.is_empty() && !file.link_exists(parent) {
            file.create_group(parent)?;
        }
    }
    macro_rules! put {
        ($a:expr) => {
            file.new_dataset_builder().obj_track_times(false).with_data($a).create(name).map(|_| ())
        };
    }
    match data {
        ExtraData::F64(a) => put!(a),
        ExtraData::F32(a) => put!(a),
        ExtraData::I64(a) => put!(a),
        ExtraData::I32(a) => put!(a),
        ExtraData::I16(a) => put!(a),
        ExtraData::I8(a) => put!(a),
        ExtraData::U64(a) => put!(a),
        ExtraData::U32(a) => put!(a),
        ExtraData::U16(a) => put!(a),
        ExtraData::U8(a) => put!(a),
        ExtraData::Bool(a) => put!(a),
    }
}

fn read_extra(ds: &hdf5::Dataset) -> hdf5::Result<Option<ExtraData>> {
    let td = ds.dtype()?.to_descriptor()?;
    Ok(Some(match td {
        TypeDescriptor::Float(FloatSize::U8) => ExtraData::F64(ds.read_dyn()?),
        TypeDescriptor::Float(FloatSize::U4) => ExtraData::F32(ds.read_dyn()?),
        TypeDescriptor::Integer(IntSize::U8) => ExtraData::I64(ds.read_dyn()?),
        TypeDescriptor::Integer(IntSize::U4) => ExtraData::I32(ds.read_dyn()?),
        TypeDescriptor::Integer(IntSize::U2) => ExtraData::I16(ds.read_dyn()?),
        TypeDescriptor::Integer(IntSize::U1) => ExtraData::I8(ds.read_dyn()?),
        TypeDescriptor::Unsigned(IntSize::U8) => ExtraData::U64(ds.read_dyn()?),
        TypeDescriptor::Unsigned(IntSize::U4) => ExtraData::U32(ds.read_dyn()?),
        TypeDescriptor::Unsigned(IntSize::U2) => ExtraData::U16(ds.read_dyn()?),
        TypeDescriptor::Unsigned(IntSize::U1) => ExtraData::U8(ds.read_dyn()?),
        TypeDescriptor::Boolean => ExtraData::Bool(ds.read_dyn()?),
        _ => return Ok(None),
    }))
}

/// Every object path in the file, groups with a trailing `/`, sorted.
pub fn hierarchy(path: &Path) -> Result<Vec<String>, DatasetError> {
    let e = h5(path);
    let file = hdf5::File::open(path).map_err(&e)?;
    let mut out = Vec::new();
    walk(&file, "", &mut out).map_err(&e)?;
    out.sort();
    Ok(out)
}

fn walk(group: &hdf5::Group, prefix: &str, out: &mut Vec<String>) -> hdf5::Result<()> {
    for name in group.member_names()? {
        let full = format!("{prefix}{name}");
        match group.loc_type_by_name(&name)? {
            hdf5::LocationType::Group => {
                out.push(format!("{full}/"));
                walk(&group.group(&name)?, &format!("{full}/"), out)?;
            }
            _ => out.push(full),
        }
    }
    Ok(())
}

/// Reads an episode file. Datasets outside the known layout are returned in
/// `extras` when their element type is numeric or boolean, and skipped with a
/// warning otherwise.
pub fn read_episode(path: &Path) -> Result<Episode, DatasetError> {
    let e = h5(path);
    if !path.is_file() {
        return Err(io_err(path, "no such file"));
    }
    let file = hdf5::File::open(path).map_err(&e)?;
    let schema = |object: &str, message: String| DatasetError::Schema {
        path: path.display().to_string(),
        object: object.to_string(),
        message,
    };
    let require = |name: &str| -> Result<hdf5::Dataset, DatasetError> {
        if !file.link_exists(name) {
            return Err(schema(name, "missing".into()));
        }
        file.dataset(name).map_err(|err| schema(name, err.to_string()))
    };
    let read2 = |name: &str| -> Result<Array2<f64>, DatasetError> {
        let ds = require(name)?;
        if ds.ndim() != 2 || ds.shape()[1] != 7 && name != WIDTH {
            return Err(schema(name, format!("shape {:?}, expected (T, 7)", ds.shape())));
        }
        ds.read_2d().map_err(|err| schema(name, err.to_string()))
    };

    let qpos = read2(QPOS)?;
    let action = read2(ACTION)?;
    let gripper_width = if file.link_exists(WIDTH) {
        let ds = require(WIDTH)?;
        if ds.ndim() != 2 || ds.shape()[1] != 1 {
            return Err(schema(WIDTH, format!("shape {:?}, expected (T, 1)", ds.shape())));
        }
        Some(ds.read_2d().map_err(|err| schema(WIDTH, err.to_string()))?)
    } else {
        None
    };

    if !file.link_exists(IMAGES) {
        return Err(schema(IMAGES, "missing".into()));
    }
    let images_group = file.group(IMAGES).map_err(|err| schema(IMAGES, err.to_string()))?;
    let cameras = images_group.member_names().map_err(&e)?;
    let camera_name = match cameras.as_slice() {
        [one] => one.clone(),
        [] => return Err(schema(IMAGES, "no camera dataset".into())),
        many => return Err(schema(IMAGES, format!("expected one camera, found {}", many.join(", ")))),
    };
    let cam_path = format!("{IMAGES}/{camera_name}");
    let cam = require(&cam_path)?;
    let images = match cam.dtype().and_then(|t| t.to_descriptor()).map_err(&e)? {
        TypeDescriptor::Unsigned(IntSize::U1) if cam.ndim() == 4 => {
            ImageData::Embedded(cam.read().map_err(|err| schema(&cam_path, err.to_string()))?)
        }
        TypeDescriptor::VarLenUnicode if cam.ndim() == 1 => ImageData::External(
            cam.read_raw::<VarLenUnicode>()
                .map_err(|err| schema(&cam_path, err.to_string()))?
                .into_iter()
                .map(|s| s.as_str().to_string())
                .collect(),
        ),
        other => {
            return Err(schema(
                &cam_path,
                format!("expected uint8 (T, H, W, 3) or path strings, found {other} {:?}", cam.shape()),
            ))
        }
    };

    let attrs = file.attr_names().map_err(&e)?;
    if !attrs.iter().any(|a| a == "sim") {
        return Err(schema("sim", "missing attribute".into()));
    }
    let sim: bool = file
        .attr("sim")
        .and_then(|a| a.read_scalar())
        .map_err(|err| schema("sim", err.to_string()))?;
    let layout = if attrs.iter().any(|a| a == "mode") {
        let mode: VarLenUnicode = file
            .attr("mode")
            .and_then(|a| a.read_scalar())
            .map_err(|err| schema("mode", err.to_string()))?;
        match mode.as_str() {
            "tcp_absolute" => EpisodeLayout::TcpAbsolute,
            "tcp_relative" => {
                let row: Vec<f64> = file
                    .attr("initial_pose")
                    .and_then(|a| a.read_raw())
                    .map_err(|err| schema("initial_pose", err.to_string()))?;
                let row: [f64; 7] = row
                    .try_into()
                    .map_err(|_| schema("initial_pose", "expected 7 values".into()))?;
                EpisodeLayout::TcpRelative {
                    initial: Pose::from_row(&row).map_err(|err| schema("initial_pose", err.to_string()))?,
                }
            }
            "joint" => {
                let dof: u32 = file
                    .attr("dof")
                    .and_then(|a| a.read_scalar())
                    .map_err(|err| schema("dof", err.to_string()))?;
                EpisodeLayout::Joint { dof: dof as usize }
            }
            other => return Err(schema("mode", format!("unknown mode {other:?}"))),
        }
    } else {
        log::warn!("{}: no `mode` attribute, assuming tcp_absolute", path.display());
        EpisodeLayout::TcpAbsolute
    };

    let mut extras = BTreeMap::new();
    let mut objects = Vec::new();
    walk(&file, "", &mut objects).map_err(&e)?;
    let known = [QPOS, ACTION, WIDTH, cam_path.as_str()];
    for obj in objects.iter().filter(|o| !o.ends_with('/') && !known.contains(&o.as_str())) {
        let ds = file.dataset(obj).map_err(&e)?;
        match read_extra(&ds).map_err(&e)? {
            Some(d) => {
                extras.insert(obj.clone(), d);
            }
            None => log::warn!("{}: skipping `{obj}` with unsupported element type", path.display()),
        }
    }

    Ok(Episode {
        camera_name,
        images,
        qpos,
        action,
        gripper_width,
        sim,
        layout,
        extras,
    })
}

/// Reproducibility record written next to each episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub task: String,
    pub episode_index: u64,
    pub sources: Vec<String>,
    /// SHA-256 of the pipeline configuration text, hex.
    pub config_digest: String,
    pub mode: String,
    pub frame_indices: Vec<u64>,
    pub tick_times: Vec<f64>,
}

impl EpisodeManifest {
    pub fn new(task: &str, episode_index: u64, sources: Vec<String>, config_text: &str, synced: &[SyncedFrame], layout: &EpisodeLayout) -> Self {
        Self {
            task: task.to_string(),
            episode_index,
            sources,
            config_digest: digest_hex(config_text.as_bytes()),
            mode: layout.name().to_string(),
            frame_indices: synced.iter().map(|f| f.camera.frame_index).collect(),
            tick_times: synced.iter().map(|f| f.tick_time).collect(),
        }
    }

    /// `episode_3.hdf5` -> `episode_3.json`.
    pub fn path_for(episode: &Path) -> PathBuf {
        episode.with_extension("json")
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| io_err(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn episode_file_name(index: u64) -> String {
    format!("episode_{index}.hdf5")
}

/// Places episodes of one task into `<root>/<task>_<part>/` directories
/// holding at most [`MAX_EPISODES_PER_DIR`] episodes each.
#[derive(Debug, Clone)]
pub struct BatchWriter {
    root: PathBuf,
    task: String,
    per_dir: usize,
}

impl BatchWriter {
    pub fn new(root: impl Into<PathBuf>, task: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            task: task.into(),
            per_dir: MAX_EPISODES_PER_DIR,
        }
    }

    pub fn with_per_dir(mut self, per_dir: usize) -> Self {
        self.per_dir = per_dir.clamp(1, MAX_EPISODES_PER_DIR);
        self
    }

    pub fn path_for(&self, index: u64) -> PathBuf {
        let part = index / self.per_dir as u64;
        self.root
            .join(format!("{}_{part:03}", self.task))
            .join(episode_file_name(index))
    }

    pub fn write(&self, index: u64, ep: &Episode, manifest: Option<&EpisodeManifest>) -> Result<PathBuf, DatasetError> {
        let path = self.path_for(index);
        let dir = path.parent().expect("joined path");
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_episode(&path, ep)?;
        if let Some(m) = manifest {
            m.write(&EpisodeManifest::path_for(&path))?;
        }
        Ok(path)
    }
}

/// Episode files (`*.hdf5`) directly inside `dir`, sorted.
pub fn list_episodes(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "hdf5"))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{UnitQuaternion, Vec3};
    use crate::gripper::WidthProvenance;
    use crate::quality::ConfidenceLevel;
    use crate::sync::{CameraSample, PoseSample};

    fn frames(poses: &[Pose]) -> Vec<SyncedFrame> {
        poses
            .iter()
            .enumerate()
            .map(|(i, p)| SyncedFrame {
                tick_time: i as f64 * 0.05,
                camera: CameraSample {
                    frame_index: 3 * i as u64,
                    image_ref: format!("frame_{:06}.png", 3 * i),
                    detections: vec![],
                },
                pose: PoseSample::new(*p, ConfidenceLevel::High),
                pose_index: 10 * i,
                pair_offset_s: 0.0,
            })
            .collect()
    }

    fn traj(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let s = i as f64 * 0.1;
                Pose::new(Vec3::new(0.3 + 0.01 * s, 0.02 * s, 0.2), UnitQuaternion::from_rpy(3.1, 0.1 * s, 0.2))
            })
            .collect()
    }

    fn widths(n: usize) -> WidthSeries {
        WidthSeries {
            widths_mm: (0..n).map(|i| i as f64).collect(),
            provenance: vec![WidthProvenance::TwoMarkers; n],
        }
    }

    #[test]
    fn single_frame_episode() {
        let p = traj(1);
        let ep = assemble(&frames(&p), &p, None, AssemblyMode::TcpAbsolute).unwrap();
        assert_eq!(ep.qpos.shape(), &[1, 7]);
        assert_eq!(ep.action, ep.qpos);
        assert!(validate_episode(&ep).is_valid());
    }

    #[test]
    fn relative_constant_is_identity() {
        let p = vec![traj(1)[0]; 6];
        let ep = assemble(&frames(&p), &p, None, AssemblyMode::TcpRelative).unwrap();
        let identity = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for r in ep.action.rows() {
            assert_eq!(&r.to_vec()[..3], &identity[..3]);
            assert!(r.iter().zip(&identity).all(|(a, b)| (a - b).abs() < 1e-15), "{r}");
        }
        let back = ep.tcp_poses().unwrap();
        assert_eq!(back.len(), 6);
        assert!(back.iter().all(|q| (q.position - p[0].position).norm() == 0.0));
    }

    #[test]
    fn length_mismatch_lists_lengths() {
        let p = traj(4);
        let err = assemble(&frames(&p), &p[..3], Some(&widths(4)), AssemblyMode::TcpAbsolute).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("synced 4") && msg.contains("tcp 3") && msg.contains("widths 4"), "{msg}");
    }

    #[test]
    fn validation_findings() {
        let p = traj(5);
        let mut ep = assemble(&frames(&p), &p, Some(&widths(5)), AssemblyMode::TcpAbsolute).unwrap();
        ep.qpos[(2, 6)] = 2.0;
        let r = validate_episode(&ep);
        assert!(r.findings.iter().any(|f| f.check == "quaternion_norm" && f.row == Some(2)));

        let mut ep = assemble(&frames(&p), &p, None, AssemblyMode::TcpAbsolute).unwrap();
        ep.images = ImageData::External(vec!["a".into(); 4]);
        let r = validate_episode(&ep);
        assert!(r.findings.iter().any(|f| f.check == "shape" && f.message.contains("images have 4")));
    }

    #[test]
    fn joint_layout_padding() {
        let p = traj(3);
        let joints = vec![JointVector(vec![0.1, 0.2]), JointVector(vec![0.3, 0.4]), JointVector(vec![0.5, 0.6])];
        let ep = assemble(&frames(&p), &p, None, AssemblyMode::Joint(joints.clone())).unwrap();
        assert_eq!(ep.qpos.row(1).to_vec(), vec![0.3, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ep.joint_rows().unwrap(), joints);
        assert!(validate_episode(&ep).is_valid());
    }

    #[test]
    fn batch_paths() {
        let b = BatchWriter::new("/data", "pick_cup");
        assert_eq!(b.path_for(0), PathBuf::from("/data/pick_cup_000/episode_0.hdf5"));
        assert_eq!(b.path_for(49), PathBuf::from("/data/pick_cup_000/episode_49.hdf5"));
        assert_eq!(b.path_for(50), PathBuf::from("/data/pick_cup_001/episode_50.hdf5"));
    }

    #[test]
    fn digest_known_value() {
        assert_eq!(
            digest_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
