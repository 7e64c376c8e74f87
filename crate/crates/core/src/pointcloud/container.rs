//! The `CSPC` binary cloud container and its JSON ground-truth sidecar.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! 0   4  magic "CSPC"
//! 4   1  version (1)
//! 5   1  frame (0 = lidar, 1 = camera)
//! 6   1  flags (bit 0: intensity present)
//! 7   1  reserved, zero
//! 8   8  point count (u64)
//! 16  .. records: x, y, z [, intensity] as f64
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Frame, GroundTruthObject, Point3, PointCloud, Scene};
use crate::scalar::Real;

pub const CSPC_MAGIC: &[u8; 4] = b"CSPC";
const VERSION: u8 = 1;
const HEADER_BYTES: usize = 16;
const FLAG_INTENSITY: u8 = 1;

pub fn encode_cloud<T: Real>(cloud: &PointCloud<T>) -> Vec<u8> {
    let stride = if cloud.intensity.is_some() { 4 } else { 3 };
    let mut out = Vec::with_capacity(HEADER_BYTES + cloud.len() * stride * 8);
    out.extend_from_slice(CSPC_MAGIC);
    out.push(VERSION);
    out.push(match cloud.frame {
        Frame::Lidar => 0,
        Frame::Camera => 1,
    });
    out.push(if cloud.intensity.is_some() { FLAG_INTENSITY } else { 0 });
    out.push(0);
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for (i, p) in cloud.points.iter().enumerate() {
        for v in p.to_array() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        if let Some(intensity) = &cloud.intensity {
            out.extend_from_slice(&intensity[i].as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud<T: Real>(raw: &[u8]) -> Result<PointCloud<T>> {
    if raw.len() < HEADER_BYTES || &raw[..4] != CSPC_MAGIC {
        return Err(Error::MalformedFile("missing CSPC header".into()));
    }
    if raw[4] != VERSION {
        return Err(Error::MalformedFile(format!("unsupported CSPC version {}", raw[4])));
    }
    let frame = match raw[5] {
        0 => Frame::Lidar,
        1 => Frame::Camera,
        other => return Err(Error::MalformedFile(format!("unknown frame tag {other}"))),
    };
    let has_intensity = raw[6] & FLAG_INTENSITY != 0;
    let count = u64::from_le_bytes(raw[8..16].try_into().expect("8-byte slice")) as usize;
    let stride = if has_intensity { 32 } else { 24 };
    let expected = count
        .checked_mul(stride)
        .and_then(|n| n.checked_add(HEADER_BYTES))
        .ok_or_else(|| Error::MalformedFile("point count overflows".into()))?;
    if raw.len() != expected {
        return Err(Error::MalformedFile(format!(
            "expected {expected} bytes for {count} points, found {}",
            raw.len()
        )));
    }
    let read = |offset: usize| -> T {
        T::lit(f64::from_le_bytes(
            raw[offset..offset + 8].try_into().expect("8-byte slice"),
        ))
    };
    let mut points = Vec::with_capacity(count);
    let mut intensity = has_intensity.then(|| Vec::with_capacity(count));
    for i in 0..count {
        let base = HEADER_BYTES + i * stride;
        points.push(Point3::new(read(base), read(base + 8), read(base + 16)));
        if let Some(values) = intensity.as_mut() {
            values.push(read(base + 24));
        }
    }
    PointCloud::new(points, intensity, frame)
}

/// Ground truth stored next to a scene's `.cspc` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct SceneSidecar<T> {
    pub scene_id: String,
    pub frame: Frame,
    pub objects: Vec<GroundTruthObject<T>>,
}

fn scene_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.cspc")), dir.join(format!("{id}.gt.json")))
}

/// Writes `<dir>/<id>.cspc` and `<dir>/<id>.gt.json`.
pub fn save_scene<T: Real>(dir: &Path, scene: &Scene<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (cloud_path, gt_path) = scene_paths(dir, &scene.id);
    fs::write(cloud_path, encode_cloud(&scene.cloud))?;
    let sidecar = SceneSidecar {
        scene_id: scene.id.clone(),
        frame: scene.cloud.frame,
        objects: scene.objects.clone(),
    };
    fs::write(gt_path, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Loads a scene; a missing sidecar yields a scene without ground truth.
pub fn load_scene<T: Real>(dir: &Path, id: &str) -> Result<Scene<T>> {
    let (cloud_path, gt_path) = scene_paths(dir, id);
    let cloud = decode_cloud(&fs::read(&cloud_path)?)?;
    let objects = if gt_path.exists() {
        let sidecar: SceneSidecar<T> = serde_json::from_slice(&fs::read(&gt_path)?)?;
        sidecar.objects
    } else {
        Vec::new()
    };
    Ok(Scene {
        id: id.to_string(),
        cloud,
        objects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3D;
    use crate::pointcloud::Category;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let cloud = PointCloud::new(vec![Point3::new(1.0f64, 2.0, 3.0)], Some(vec![0.5]), Frame::Camera).unwrap();
        let raw = encode_cloud(&cloud);
        assert_eq!(&raw[..4], b"CSPC");
        assert_eq!(raw[4], 1);
        assert_eq!(raw[5], 1);
        assert_eq!(raw[6], 1);
        assert_eq!(u64::from_le_bytes(raw[8..16].try_into().unwrap()), 1);
        assert_eq!(raw.len(), 16 + 32);
    }

    #[test]
    fn rejects_truncated_and_foreign_payloads() {
        let cloud = PointCloud::new(vec![Point3::new(1.0f64, 2.0, 3.0)], None, Frame::Camera).unwrap();
        let raw = encode_cloud(&cloud);
        assert!(decode_cloud::<f64>(&raw[..raw.len() - 1]).is_err());
        assert!(decode_cloud::<f64>(b"PLY\n").is_err());
    }

    #[test]
    fn scene_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = Scene {
            id: "000007".to_string(),
            cloud: PointCloud::new(vec![Point3::new(0.25f64, 1.0, 9.5)], None, Frame::Camera).unwrap(),
            objects: vec![GroundTruthObject {
                category: Category::Cyclist,
                bbox: Box3D::new(Point3::new(0.0, 1.0, 9.0), 1.7, 0.6, 1.8, 0.3).unwrap(),
            }],
        };
        save_scene(dir.path(), &scene).unwrap();
        assert_eq!(load_scene::<f64>(dir.path(), "000007").unwrap(), scene);
    }

    proptest! {
        #[test]
        fn container_round_trip(
            pts in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64, 0.0..=1.0f64), 0..64),
            camera in any::<bool>(),
            with_intensity in any::<bool>(),
        ) {
            let points = pts.iter().map(|p| Point3::new(p.0, p.1, p.2)).collect();
            let intensity = with_intensity.then(|| pts.iter().map(|p| p.3).collect());
            let frame = if camera { Frame::Camera } else { Frame::Lidar };
            let cloud = PointCloud::new(points, intensity, frame).unwrap();
            let raw = encode_cloud(&cloud);
            let back = decode_cloud::<f64>(&raw).unwrap();
            prop_assert_eq!(&back, &cloud);
            prop_assert_eq!(encode_cloud(&back), raw);
        }
    }
}
