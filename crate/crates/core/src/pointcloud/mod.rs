//! Point clouds, KITTI ingestion, click-centered volumes and synthetic scenes.

mod container;
mod kitti;
mod synth;

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::scalar::Real;

pub use container::{decode_cloud, encode_cloud, load_scene, save_scene, SceneSidecar, CSPC_MAGIC};
pub use kitti::{parse_kitti_calib, parse_kitti_labels, parse_velodyne_bin, Calibration};
pub use synth::{synthetic_scene, CountRange, SceneSpec, SizePrior, SyntheticScene};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Self) -> Self {
        Self::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn cast<U: Real>(self) -> Point3<U> {
        Point3::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }

    /// Arithmetic mean; `None` for an empty slice.
    pub fn mean(points: &[Self]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let sum = points.iter().fold(Self::default(), |acc, p| acc + *p);
        Some(sum * (T::one() / T::from_usize(points.len())?))
    }
}

impl<T: Real> Add for Point3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Point3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Point3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Point3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Lidar,
    Camera,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::Lidar => "lidar",
            Frame::Camera => "camera",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud<T> {
    pub points: Vec<Point3<T>>,
    pub intensity: Option<Vec<T>>,
    pub frame: Frame,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>, intensity: Option<Vec<T>>, frame: Frame) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::MalformedFile(format!("point {i} is not finite")));
        }
        if let Some(values) = &intensity {
            if values.len() != points.len() {
                return Err(Error::Dimension(format!(
                    "{} intensities for {} points",
                    values.len(),
                    points.len()
                )));
            }
            if let Some(i) = values
                .iter()
                .position(|v| !v.is_finite() || *v < T::zero() || *v > T::one())
            {
                return Err(Error::MalformedFile(format!(
                    "intensity {i} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            points,
            intensity,
            frame,
        })
    }

    pub fn empty(frame: Frame) -> Self {
        Self {
            points: Vec::new(),
            intensity: None,
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points at the given indices, in index order.
    pub fn gather(&self, indices: impl IntoIterator<Item = usize>) -> Vec<Point3<T>> {
        indices.into_iter().map(|i| self.points[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Car,
    Pedestrian,
    Cyclist,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Car, Category::Pedestrian, Category::Cyclist];

    pub fn name(self) -> &'static str {
        match self {
            Category::Car => "car",
            Category::Pedestrian => "pedestrian",
            Category::Cyclist => "cyclist",
        }
    }

    /// Default click-volume edge length in meters.
    pub fn default_k(self) -> f64 {
        match self {
            Category::Car => 8.0,
            Category::Pedestrian => 4.0,
            Category::Cyclist => 5.0,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(Category::Car),
            "pedestrian" => Ok(Category::Pedestrian),
            "cyclist" => Ok(Category::Cyclist),
            other => Err(Error::Parameter(format!("unknown category `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject<T> {
    pub category: Category,
    #[serde(rename = "box")]
    pub bbox: Box3D<T>,
}

/// A labelled frame: camera-frame cloud plus its ground-truth boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T> {
    pub id: String,
    pub cloud: PointCloud<T>,
    pub objects: Vec<GroundTruthObject<T>>,
}

/// Points of a click-centered cube, expressed relative to the click.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteredPatch<T> {
    pub points: Vec<Point3<T>>,
    pub source_indices: Vec<usize>,
    pub click: Point3<T>,
    pub k: T,
}

/// Collects every point within the closed `k`-edged cube around `click`.
pub fn crop_volume<T: Real>(cloud: &PointCloud<T>, click: Point3<T>, k: T) -> Result<CenteredPatch<T>> {
    if !(k > T::zero()) || !k.is_finite() {
        return Err(Error::Parameter(format!("volume edge must be positive, got {k}")));
    }
    if cloud.frame != Frame::Camera {
        return Err(Error::FrameMismatch {
            expected: Frame::Camera.name(),
            found: cloud.frame.name(),
        });
    }
    let half = k * T::lit(0.5);
    let mut points = Vec::new();
    let mut source_indices = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let d = *p - click;
        if d.x.abs() <= half && d.y.abs() <= half && d.z.abs() <= half {
            points.push(d);
            source_indices.push(i);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyPatch { k: k.as_f64() });
    }
    Ok(CenteredPatch {
        points,
        source_indices,
        click,
        k,
    })
}

/// Re-expresses a lidar-frame cloud in the rectified camera frame.
pub fn to_camera_frame<T: Real>(cloud: &PointCloud<T>, calib: &Calibration<T>) -> Result<PointCloud<T>> {
    if cloud.frame != Frame::Lidar {
        return Err(Error::FrameMismatch {
            expected: Frame::Lidar.name(),
            found: cloud.frame.name(),
        });
    }
    let points = cloud.points.iter().map(|p| calib.velo_to_rect(*p)).collect();
    Ok(PointCloud {
        points,
        intensity: cloud.intensity.clone(),
        frame: Frame::Camera,
    })
}
