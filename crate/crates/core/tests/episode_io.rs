use std::collections::BTreeMap;

use ndarray::{Array2, Array4, ArrayD, IxDyn};
use teleop_core::dataset::{
    hierarchy, read_episode, write_episode, BatchWriter, DatasetError, Episode, EpisodeLayout, ExtraData, ImageData,
    DEFAULT_CAMERA,
};
use teleop_core::{Pose, UnitQuaternion, Vec3};

fn poses(n: usize) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let t = i as f64 * 0.05;
            Pose::new(
                Vec3::new(0.3 + 0.01 * t, -0.02 * t, 0.25 + t * t),
                UnitQuaternion::from_rpy(3.0 + 0.1 * t, -0.2 * t, 0.3 * t),
            )
        })
        .collect()
}

fn rows(p: &[Pose]) -> Array2<f64> {
    let flat: Vec<f64> = p.iter().flat_map(|p| p.to_row()).collect();
    Array2::from_shape_vec((p.len(), 7), flat).unwrap()
}

fn episode(n: usize) -> Episode {
    let qpos = rows(&poses(n));
    let images = Array4::from_shape_fn((n, 6, 5, 3), |(t, h, w, c)| ((t * 31 + h * 7 + w * 3 + c) % 256) as u8);
    Episode {
        camera_name: DEFAULT_CAMERA.to_string(),
        images: ImageData::Embedded(images),
        action: qpos.clone(),
        qpos,
        gripper_width: Some(Array2::from_shape_fn((n, 1), |(i, _)| 86.0 - i as f64 * 1.5)),
        sim: false,
        layout: EpisodeLayout::TcpAbsolute,
        extras: BTreeMap::new(),
    }
}

/// Episode with nothing beyond the documented layout.
fn bare_episode(n: usize) -> Episode {
    Episode {
        gripper_width: None,
        ..episode(n)
    }
}

#[test]
fn embedded_roundtrip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("episode_0.hdf5");
    let ep = episode(5);
    write_episode(&path, &ep).unwrap();
    assert_eq!(read_episode(&path).unwrap(), ep);
}

#[test]
fn extras_survive_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("episode_1.hdf5");
    let mut ep = episode(4);
    let tactile = ArrayD::from_shape_fn(IxDyn(&[4, 2, 3]), |ix| (ix[0] * 100 + ix[1] * 10 + ix[2]) as u16);
    let force = ArrayD::from_shape_fn(IxDyn(&[4, 6]), |ix| ix[0] as f32 * 0.5 - ix[1] as f32);
    let contact = ArrayD::from_shape_fn(IxDyn(&[4]), |ix| ix[0] % 2 == 0);
    ep.extras.insert("observations/tactile".into(), ExtraData::U16(tactile));
    ep.extras.insert("observations/wrench/raw".into(), ExtraData::F32(force));
    ep.extras.insert("contact".into(), ExtraData::Bool(contact));
    write_episode(&path, &ep).unwrap();
    assert_eq!(read_episode(&path).unwrap(), ep);
}

#[test]
fn external_and_layout_variants_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let n = 6;
    let p = poses(n);

    let mut ext = episode(n);
    ext.images = ImageData::External((0..n).map(|i| format!("frames/{:06}.png", i * 3)).collect());
    let path = dir.path().join("ext.hdf5");
    write_episode(&path, &ext).unwrap();
    assert_eq!(read_episode(&path).unwrap(), ext);

    let mut rel = episode(n);
    let steps: Vec<[f64; 7]> = teleop_core::geometry::relative_trajectory(&p)
        .iter()
        .map(|s| s.to_row())
        .chain(std::iter::once(Pose::IDENTITY.to_row()))
        .collect();
    rel.qpos = Array2::from_shape_vec((n, 7), steps.concat()).unwrap();
    rel.action = rel.qpos.clone();
    rel.layout = EpisodeLayout::TcpRelative { initial: p[0] };
    let path = dir.path().join("rel.hdf5");
    write_episode(&path, &rel).unwrap();
    let back = read_episode(&path).unwrap();
    assert_eq!(back, rel);
    for (a, b) in back.tcp_poses().unwrap().iter().zip(&p) {
        assert!((a.position - b.position).norm() <= 1e-12);
        assert!(a.orientation.angle_to(&b.orientation) <= 1e-9);
    }

    let mut joint = episode(n);
    joint.qpos = Array2::from_shape_fn((n, 7), |(i, k)| if k < 6 { 0.1 * i as f64 - 0.05 * k as f64 } else { 0.0 });
    joint.action = joint.qpos.clone();
    joint.layout = EpisodeLayout::Joint { dof: 6 };
    let path = dir.path().join("joint.hdf5");
    write_episode(&path, &joint).unwrap();
    let back = read_episode(&path).unwrap();
    assert_eq!(back, joint);
    assert_eq!(back.joint_rows().unwrap()[2].0.len(), 6);
}

#[test]
fn identical_inputs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.hdf5");
    let b = dir.path().join("b.hdf5");
    let ep = episode(8);
    write_episode(&a, &ep).unwrap();
    std::thread::sleep(std::time::Duration::from_millis(1100));
    write_episode(&b, &ep).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn hierarchy_matches_documented_tree() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("episode_0.hdf5");
    write_episode(&path, &bare_episode(3)).unwrap();
    assert_eq!(
        hierarchy(&path).unwrap(),
        vec![
            "action",
            "observations/",
            "observations/images/",
            "observations/images/front",
            "observations/qpos",
        ]
    );
    let file = hdf5::File::open(&path).unwrap();
    assert!(!file.attr("sim").unwrap().read_scalar::<bool>().unwrap());
    assert_eq!(file.dataset("observations/qpos").unwrap().shape(), vec![3, 7]);
    assert_eq!(file.dataset("action").unwrap().shape(), vec![3, 7]);
    assert_eq!(file.dataset("observations/images/front").unwrap().shape(), vec![3, 6, 5, 3]);
}

#[test]
fn missing_action_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("episode_0.hdf5");
    write_episode(&path, &episode(3)).unwrap();
    {
        let file = hdf5::File::open_rw(&path).unwrap();
        file.unlink("action").unwrap();
    }
    match read_episode(&path) {
        Err(DatasetError::Schema { object, .. }) => assert_eq!(object, "action"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rejected_writes_leave_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("episode_0.hdf5");
    let mut ep = episode(3);
    ep.qpos[(1, 6)] = 3.0;
    assert!(matches!(write_episode(&path, &ep), Err(DatasetError::Invalid(_))));
    let missing_dir = dir.path().join("nope").join("episode_0.hdf5");
    assert!(write_episode(&missing_dir, &episode(3)).is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn not_an_hdf5_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("episode_0.hdf5");
    std::fs::write(&path, b"definitely not hdf5").unwrap();
    assert!(read_episode(&path).is_err());
}

#[test]
fn batch_writer_splits_directories() {
    let dir = tempfile::tempdir().unwrap();
    let w = BatchWriter::new(dir.path(), "pour").with_per_dir(2);
    for i in 0..5 {
        w.write(i, &bare_episode(2), None).unwrap();
    }
    let parts: Vec<usize> = ["pour_000", "pour_001", "pour_002"]
        .iter()
        .map(|d| teleop_core::dataset::list_episodes(&dir.path().join(d)).unwrap().len())
        .collect();
    assert_eq!(parts, vec![2, 2, 1]);
}
