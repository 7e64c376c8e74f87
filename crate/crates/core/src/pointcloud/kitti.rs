//! KITTI raw formats: velodyne `.bin`, `label_2` text and `calib` text.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::pointcloud::{Category, Frame, GroundTruthObject, Point3, PointCloud};
use crate::scalar::Real;

const RECORD_BYTES: usize = 16;

/// Decodes little-endian `(x, y, z, reflectance)` float32 records.
pub fn parse_velodyne_bin<T: Real>(raw: &[u8]) -> Result<PointCloud<T>> {
    if raw.len() % RECORD_BYTES != 0 {
        return Err(Error::MalformedFile(format!(
            "velodyne payload of {} bytes is not a multiple of {RECORD_BYTES}",
            raw.len()
        )));
    }
    let n = raw.len() / RECORD_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (i, record) in raw.chunks_exact(RECORD_BYTES).enumerate() {
        let mut v = [0f32; 4];
        for (k, word) in record.chunks_exact(4).enumerate() {
            v[k] = f32::from_le_bytes([word[0], word[1], word[2], word[3]]);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedFile(format!("non-finite value in point {i}")));
        }
        points.push(Point3::new(
            T::lit(v[0] as f64),
            T::lit(v[1] as f64),
            T::lit(v[2] as f64),
        ));
        intensity.push(T::lit(v[3] as f64));
    }
    PointCloud::new(points, Some(intensity), Frame::Lidar)
}

/// Parses a KITTI `label_2` file, keeping only the three evaluated classes.
///
/// KITTI stores the bottom-center of each box; the returned boxes carry the
/// geometric centroid, i.e. `y` is raised by `h / 2` (camera `y` points down).
pub fn parse_kitti_labels<T: Real>(text: &str) -> Result<Vec<GroundTruthObject<T>>> {
    let mut objects = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 15 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected at least 15 fields, found {}", fields.len()),
            });
        }
        let category = match fields[0] {
            "Car" => Category::Car,
            "Pedestrian" => Category::Pedestrian,
            "Cyclist" => Category::Cyclist,
            _ => continue,
        };
        let num = |k: usize| -> Result<T> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::lit)
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("field {} (`{}`) is not a finite number", k + 1, fields[k]),
                })
        };
        let (h, w, l) = (num(8)?, num(9)?, num(10)?);
        let (x, y, z) = (num(11)?, num(12)?, num(13)?);
        let ry = num(14)?;
        let centroid = Point3::new(x, y - h * T::lit(0.5), z);
        let bbox = Box3D::new(centroid, h, w, l, ry).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        objects.push(GroundTruthObject { category, bbox });
    }
    Ok(objects)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration<T> {
    pub tr_velo_to_cam: [[T; 4]; 3],
    pub r0_rect: [[T; 3]; 3],
    pub p2: Option<[[T; 4]; 3]>,
}

impl<T: Real> Calibration<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            tr_velo_to_cam: [[o, z, z, z], [z, o, z, z], [z, z, o, z]],
            r0_rect: [[o, z, z], [z, o, z], [z, z, o]],
            p2: None,
        }
    }

    /// `r0_rect * (tr_velo_to_cam * [p; 1])`.
    pub fn velo_to_rect(&self, p: Point3<T>) -> Point3<T> {
        let tr = &self.tr_velo_to_cam;
        let mut cam = [T::zero(); 3];
        for (r, row) in tr.iter().enumerate() {
            cam[r] = row[0] * p.x + row[1] * p.y + row[2] * p.z + row[3];
        }
        let r0 = &self.r0_rect;
        let mut out = [T::zero(); 3];
        for (r, row) in r0.iter().enumerate() {
            out[r] = row[0] * cam[0] + row[1] * cam[1] + row[2] * cam[2];
        }
        Point3::new(out[0], out[1], out[2])
    }
}

fn rows<T: Real, const C: usize>(values: &[T]) -> [[T; C]; 3] {
    let mut m = [[T::zero(); C]; 3];
    for (i, v) in values.iter().enumerate() {
        m[i / C][i % C] = *v;
    }
    m
}

/// Parses a KITTI calibration file (`key: v0 v1 ...` per line, row-major).
pub fn parse_kitti_calib<T: Real>(text: &str) -> Result<Calibration<T>> {
    let mut entries: HashMap<&str, (usize, Vec<T>)> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let mut values = Vec::new();
        for token in rest.split_whitespace() {
            let v = token
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    message: format!("`{token}` is not a finite number"),
                })?;
            values.push(T::lit(v));
        }
        entries.insert(key.trim(), (idx + 1, values));
    }

    let take = |key: &str, arity: usize| -> Result<Option<Vec<T>>> {
        match entries.get(key) {
            None => Ok(None),
            Some((line, values)) if values.len() != arity => Err(Error::Parse {
                line: *line,
                message: format!("{key} needs {arity} values, found {}", values.len()),
            }),
            Some((_, values)) => Ok(Some(values.clone())),
        }
    };

    let tr = take("Tr_velo_to_cam", 12)?
        .ok_or_else(|| Error::CalibrationIncomplete("missing Tr_velo_to_cam".into()))?;
    let r0 = take("R0_rect", 9)?
        .ok_or_else(|| Error::CalibrationIncomplete("missing R0_rect".into()))?;
    let p2 = take("P2", 12)?.map(|v| rows::<T, 4>(&v));
    let r0_rect = rows::<T, 3>(&r0);

    // R0_rect must be a rotation up to numeric noise.
    for i in 0..3 {
        for j in 0..3 {
            let dot: T = (0..3).map(|k| r0_rect[i][k] * r0_rect[j][k]).sum();
            let expected = if i == j { T::one() } else { T::zero() };
            if (dot - expected).abs() > T::lit(1e-3) {
                return Err(Error::Parameter("R0_rect is not orthonormal".into()));
            }
        }
    }

    Ok(Calibration {
        tr_velo_to_cam: rows::<T, 4>(&tr),
        r0_rect,
        p2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::to_camera_frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent encoder: writes records with explicit byte shuffling.
    fn encode_records(records: &[[f32; 4]]) -> Vec<u8> {
        let mut out = Vec::new();
        for r in records {
            for v in r {
                let bits = v.to_bits();
                out.extend_from_slice(&[
                    (bits & 0xff) as u8,
                    ((bits >> 8) & 0xff) as u8,
                    ((bits >> 16) & 0xff) as u8,
                    (bits >> 24) as u8,
                ]);
            }
        }
        out
    }

    #[test]
    fn decodes_single_point() {
        let raw = encode_records(&[[1.0, 2.0, 3.0, 0.5]]);
        let cloud = parse_velodyne_bin::<f64>(&raw).unwrap();
        assert_eq!(cloud.points, vec![Point3::new(1.0, 2.0, 3.0)]);
        assert_eq!(cloud.intensity, Some(vec![0.5]));
        assert_eq!(cloud.frame, Frame::Lidar);
    }

    #[test]
    fn empty_payload_is_empty_cloud() {
        let cloud = parse_velodyne_bin::<f32>(&[]).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn rejects_bad_velodyne_payloads() {
        assert!(matches!(parse_velodyne_bin::<f64>(&[0u8; 17]), Err(Error::MalformedFile(_))));
        let raw = encode_records(&[[f32::NAN, 0.0, 0.0, 0.0]]);
        assert!(matches!(parse_velodyne_bin::<f64>(&raw), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn velodyne_round_trip_is_byte_identical() {
        let records = [[1.25f32, -7.5, 0.125, 0.25], [40.0, 3.0e-3, -1.75, 1.0]];
        let raw = encode_records(&records);
        let cloud = parse_velodyne_bin::<f64>(&raw).unwrap();
        let intensity = cloud.intensity.as_ref().unwrap();
        let back: Vec<[f32; 4]> = cloud
            .points
            .iter()
            .zip(intensity)
            .map(|(p, i)| [p.x as f32, p.y as f32, p.z as f32, *i as f32])
            .collect();
        assert_eq!(encode_records(&back), raw);
    }

    #[test]
    fn label_field_mapping() {
        let objs = parse_kitti_labels::<f64>("Car 0 0 0 0 0 0 0 1.5 1.6 3.9 1.0 1.5 20.0 0.0").unwrap();
        assert_eq!(objs.len(), 1);
        let b = objs[0].bbox;
        assert_eq!(objs[0].category, Category::Car);
        assert_eq!((b.h, b.w, b.l, b.ry), (1.5, 1.6, 3.9, 0.0));
        // Label location is the bottom-center; y points down.
        assert_eq!((b.cx, b.cy, b.cz), (1.0, 0.75, 20.0));
    }

    #[test]
    fn label_filtering_and_order() {
        let text = "\
Car 0 0 0 0 0 0 0 1.5 1.6 3.9 1.0 1.5 20.0 0.0
DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10
Car 0 0 0 0 0 0 0 1.5 1.6 3.9 2.0 1.5 20.0 0.0
Van 0 0 0 0 0 0 0 2.0 1.9 5.0 4.0 1.5 20.0 0.0
Pedestrian 0 0 0 0 0 0 0 1.8 0.6 0.8 3.0 1.5 10.0 0.1

Car 0 0 0 0 0 0 0 1.5 1.6 3.9 3.0 1.5 20.0 0.0
";
        let objs = parse_kitti_labels::<f64>(text).unwrap();
        let cats: Vec<_> = objs.iter().map(|o| o.category).collect();
        assert_eq!(
            cats,
            vec![Category::Car, Category::Car, Category::Pedestrian, Category::Car]
        );
        assert_eq!(objs[1].bbox.cx, 2.0);
        assert_eq!(objs[3].bbox.cx, 3.0);
        assert!(parse_kitti_labels::<f64>("DontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn label_errors_name_the_line() {
        let text = "Car 0 0 0 0 0 0 0 1.5 1.6 3.9 1.0 1.5 20.0 0.0\nCar 0 0 0 0 0 0 0 1.5 x 3.9 1.0 1.5 20.0 0.0";
        match parse_kitti_labels::<f64>(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_kitti_labels::<f64>("Car 0 0") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    const IDENTITY_CALIB: &str = "\
P2: 7.2e+02 0 6.0e+02 4.4e+01 0 7.2e+02 1.7e+02 2.1e-01 0 0 1 2.7e-03
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0
";

    #[test]
    fn calib_identity_fixture() {
        let calib = parse_kitti_calib::<f64>(IDENTITY_CALIB).unwrap();
        let id = Calibration::<f64>::identity();
        assert_eq!(calib.tr_velo_to_cam, id.tr_velo_to_cam);
        assert_eq!(calib.r0_rect, id.r0_rect);
        assert_eq!(calib.p2.unwrap()[0][3], 44.0);
    }

    #[test]
    fn calib_key_order_irrelevant() {
        let mut lines: Vec<&str> = IDENTITY_CALIB.lines().collect();
        lines.reverse();
        let permuted = lines.join("\n");
        assert_eq!(
            parse_kitti_calib::<f64>(&permuted).unwrap(),
            parse_kitti_calib::<f64>(IDENTITY_CALIB).unwrap()
        );
    }

    #[test]
    fn calib_arity_and_missing_keys() {
        let short = "R0_rect: 1 0 0 0 1 0 0 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0";
        assert!(matches!(parse_kitti_calib::<f64>(short), Err(Error::Parse { line: 1, .. })));
        let missing = "R0_rect: 1 0 0 0 1 0 0 0 1";
        assert!(matches!(
            parse_kitti_calib::<f64>(missing),
            Err(Error::CalibrationIncomplete(_))
        ));
    }

    #[test]
    fn camera_transform_cases() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)], Some(vec![0.3]), Frame::Lidar).unwrap();
        let out = to_camera_frame(&cloud, &Calibration::identity()).unwrap();
        assert_eq!(out.points, vec![Point3::new(1.0, 2.0, 3.0)]);
        assert_eq!(out.frame, Frame::Camera);
        assert_eq!(out.intensity, Some(vec![0.3]));
        assert!(matches!(to_camera_frame(&out, &Calibration::identity()), Err(Error::FrameMismatch { .. })));

        let mut shifted = Calibration::<f64>::identity();
        shifted.tr_velo_to_cam[2][3] = 5.0;
        let origin = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)], None, Frame::Lidar).unwrap();
        let out = to_camera_frame(&origin, &shifted).unwrap();
        assert_eq!(out.points[0], Point3::new(0.0, 0.0, 5.0));
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        // Gram-Schmidt on random vectors.
        let mut v: Vec<Point3<f64>> = (0..2)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let a = v[0] * (1.0 / v[0].norm());
        let b0 = v[1] - a * a.dot(v[1]);
        let b = b0 * (1.0 / b0.norm());
        let c = a.cross(b);
        v.clear();
        [a.to_array(), b.to_array(), c.to_array()]
    }

    #[test]
    fn rigid_calibration_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let mut calib = Calibration::<f64>::identity();
            for i in 0..3 {
                calib.tr_velo_to_cam[i] = [r[i][0], r[i][1], r[i][2], rng.random_range(-2.0..2.0)];
            }
            calib.r0_rect = random_rotation(&mut rng);
            let points: Vec<_> = (0..50)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-50.0..50.0),
                        rng.random_range(-50.0..50.0),
                        rng.random_range(-3.0..3.0),
                    )
                })
                .collect();
            let cloud = PointCloud::new(points, None, Frame::Lidar).unwrap();
            let cam = to_camera_frame(&cloud, &calib).unwrap();
            for i in 0..cloud.len() {
                for j in (i + 1)..cloud.len() {
                    let before = cloud.points[i].distance(cloud.points[j]);
                    let after = cam.points[i].distance(cam.points[j]);
                    assert!((before - after).abs() <= 1e-9 * before.max(1.0));
                }
            }
        }
    }
}
