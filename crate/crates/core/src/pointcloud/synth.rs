//! Seeded synthetic driving scenes with exact ground truth.
//!
//! Objects are boxes resting on a flat ground plane. Only the faces whose
//! outward normal points toward the sensor (at the camera origin) receive
//! points, so every object is seen as a 2.5D shell. Point density on an object
//! falls off with the squared range.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_intersection_area, Box3D};
use crate::pointcloud::{Category, Frame, GroundTruthObject, Point3, PointCloud, Scene};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub const fn exactly(n: usize) -> Self {
        Self { min: n, max: n }
    }
}

/// Gaussian prior over `(h, w, l)` in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizePrior {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub cars: CountRange,
    pub pedestrians: CountRange,
    pub cyclists: CountRange,
    /// Thin vertical clutter objects with no ground truth.
    pub poles: CountRange,
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    /// Camera-frame height of the ground plane (y points down).
    pub ground_y: f64,
    /// Object surface points per square meter at `reference_distance`.
    pub object_density: f64,
    pub reference_distance: f64,
    pub min_density_scale: f64,
    /// Ground clutter points per square meter.
    pub ground_density: f64,
    /// Minimum bird's-eye gap between any two placed objects.
    pub separation: f64,
    /// Fraction of objects aligned with the driving direction (ry near +-pi/2).
    pub aligned_fraction: f64,
    pub heading_jitter: f64,
    /// Object points are pushed up to this far inside their surface.
    pub surface_depth: f64,
    pub car_size: SizePrior,
    pub pedestrian_size: SizePrior,
    pub cyclist_size: SizePrior,
    pub max_retries: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            cars: CountRange { min: 2, max: 6 },
            pedestrians: CountRange { min: 0, max: 2 },
            cyclists: CountRange { min: 0, max: 1 },
            poles: CountRange { min: 0, max: 3 },
            x_range: (-15.0, 15.0),
            z_range: (5.0, 35.0),
            ground_y: 1.73,
            object_density: 40.0,
            reference_distance: 10.0,
            min_density_scale: 0.15,
            ground_density: 1.0,
            separation: 0.8,
            aligned_fraction: 0.7,
            heading_jitter: 0.15,
            surface_depth: 0.02,
            car_size: SizePrior {
                mean: [1.52, 1.63, 3.88],
                std: [0.08, 0.07, 0.35],
            },
            pedestrian_size: SizePrior {
                mean: [1.76, 0.66, 0.84],
                std: [0.09, 0.08, 0.12],
            },
            cyclist_size: SizePrior {
                mean: [1.74, 0.60, 1.76],
                std: [0.07, 0.06, 0.12],
            },
            max_retries: 200,
        }
    }
}

impl SceneSpec {
    /// Ground clutter only.
    pub fn empty() -> Self {
        Self {
            cars: CountRange::exactly(0),
            pedestrians: CountRange::exactly(0),
            cyclists: CountRange::exactly(0),
            poles: CountRange::exactly(0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.cars, self.pedestrians, self.cyclists, self.poles];
        if ranges.iter().any(|r| r.min > r.max) {
            return Err(Error::Parameter("count range with min > max".into()));
        }
        if !(self.x_range.0 < self.x_range.1 && self.z_range.0 < self.z_range.1) {
            return Err(Error::Parameter("empty placement region".into()));
        }
        let non_negative = [
            self.object_density,
            self.ground_density,
            self.separation,
            self.surface_depth,
            self.min_density_scale,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0)) || !(self.reference_distance > 0.0) {
            return Err(Error::Parameter("densities and distances must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.aligned_fraction) {
            return Err(Error::Parameter("aligned_fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    fn size_prior(&self, category: Category) -> &SizePrior {
        match category {
            Category::Car => &self.car_size,
            Category::Pedestrian => &self.pedestrian_size,
            Category::Cyclist => &self.cyclist_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene<T> {
    pub cloud: PointCloud<T>,
    pub objects: Vec<GroundTruthObject<T>>,
    /// Cloud index range generated for each object, aligned with `objects`.
    pub instance_ranges: Vec<Range<usize>>,
}

impl<T> SyntheticScene<T> {
    pub fn into_scene(self, id: impl Into<String>) -> Scene<T> {
        Scene {
            id: id.into(),
            cloud: self.cloud,
            objects: self.objects,
        }
    }
}

struct Generator<'a> {
    spec: &'a SceneSpec,
    rng: ChaCha8Rng,
    placed: Vec<Box3D<f64>>,
    points: Vec<Point3<f64>>,
    intensity: Vec<f64>,
}

impl Generator<'_> {
    fn sample_size(&mut self, prior: &SizePrior) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..3 {
            let normal = Normal::new(prior.mean[k], prior.std[k].max(0.0)).expect("finite prior");
            out[k] = normal.sample(&mut self.rng).max(0.2 * prior.mean[k]).max(0.05);
        }
        out
    }

    fn sample_heading(&mut self) -> f64 {
        use std::f64::consts::PI;
        if self.rng.random::<f64>() < self.spec.aligned_fraction {
            let base = if self.rng.random::<bool>() { PI / 2.0 } else { -PI / 2.0 };
            base + self.rng.random_range(-1.0..=1.0) * self.spec.heading_jitter
        } else {
            self.rng.random_range(-PI..PI)
        }
    }

    /// Places a non-overlapping box of the given size resting on the ground.
    fn place(&mut self, hwl: [f64; 3], label: &str) -> Result<Box3D<f64>> {
        let [h, w, l] = hwl;
        let pad = self.spec.separation * 0.5;
        for _ in 0..self.spec.max_retries.max(1) {
            let x = self.rng.random_range(self.spec.x_range.0..self.spec.x_range.1);
            let z = self.rng.random_range(self.spec.z_range.0..self.spec.z_range.1);
            let ry = self.sample_heading();
            let centroid = Point3::new(x, self.spec.ground_y - h / 2.0, z);
            let candidate = Box3D::new(centroid, h, w, l, ry)?;
            let padded = Box3D::new(centroid, h, w + 2.0 * pad, l + 2.0 * pad, ry)?;
            let clear = self.placed.iter().all(|other| {
                let other_padded = Box3D {
                    w: other.w + 2.0 * pad,
                    l: other.l + 2.0 * pad,
                    ..*other
                };
                bev_intersection_area(&padded, &other_padded) == 0.0
            });
            if clear {
                self.placed.push(candidate);
                return Ok(candidate);
            }
        }
        Err(Error::SpecInfeasible(format!(
            "could not place {label} after {} attempts",
            self.spec.max_retries
        )))
    }

    fn density_scale(&self, distance: f64) -> f64 {
        let r = self.spec.reference_distance / distance.max(1e-3);
        (r * r).clamp(self.spec.min_density_scale, 1.0)
    }

    fn stochastic_round(&mut self, expected: f64) -> usize {
        let base = expected.floor();
        let extra = (self.rng.random::<f64>() < expected - base) as usize;
        base as usize + extra
    }

    /// Samples the sensor-facing faces of `b`; returns the generated range.
    fn shell(&mut self, b: &Box3D<f64>, intensity: (f64, f64)) -> Range<usize> {
        let start = self.points.len();
        let (hl, hh, hw) = (b.l / 2.0, b.h / 2.0, b.w / 2.0);
        let half = [hl, hh, hw];
        let scale = self.density_scale(b.centroid().norm());
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut normal_local = [0.0; 3];
                normal_local[axis] = sign;
                let mut center_local = [0.0; 3];
                center_local[axis] = sign * half[axis];
                let center = b.local_to_world(Point3::new(center_local[0], center_local[1], center_local[2]));
                let normal = b.local_to_world(Point3::new(normal_local[0], normal_local[1], normal_local[2]))
                    - b.centroid();
                if normal.dot(-center) <= 0.0 {
                    continue;
                }
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                let area = 4.0 * half[a1] * half[a2];
                let n = self.stochastic_round(self.spec.object_density * scale * area);
                for _ in 0..n {
                    let mut local = center_local;
                    local[a1] = self.rng.random_range(-half[a1]..=half[a1]);
                    local[a2] = self.rng.random_range(-half[a2]..=half[a2]);
                    let depth = self.rng.random_range(0.0..=self.spec.surface_depth);
                    local[axis] -= sign * depth;
                    self.points
                        .push(b.local_to_world(Point3::new(local[0], local[1], local[2])));
                    self.intensity
                        .push(self.rng.random_range(intensity.0..=intensity.1));
                }
            }
        }
        start..self.points.len()
    }

    fn ground(&mut self) {
        let margin = 5.0;
        let (x0, x1) = (self.spec.x_range.0 - margin, self.spec.x_range.1 + margin);
        let (z0, z1) = ((self.spec.z_range.0 - margin).max(0.5), self.spec.z_range.1 + margin);
        let n = self.stochastic_round(self.spec.ground_density * (x1 - x0) * (z1 - z0));
        for _ in 0..n {
            let x = self.rng.random_range(x0..x1);
            let z = self.rng.random_range(z0..z1);
            // Strictly below every box bottom.
            let y = self.spec.ground_y + self.rng.random_range(0.02..0.08);
            self.points.push(Point3::new(x, y, z));
            self.intensity.push(self.rng.random_range(0.0..0.3));
        }
    }
}

/// Generates one scene. Pure function of `(spec, seed)`.
pub fn synthetic_scene<T: Real>(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene<T>> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
        placed: Vec::new(),
        points: Vec::new(),
        intensity: Vec::new(),
    };

    let mut objects = Vec::new();
    let plan = [
        (Category::Car, spec.cars),
        (Category::Pedestrian, spec.pedestrians),
        (Category::Cyclist, spec.cyclists),
    ];
    for (category, range) in plan {
        let n = g.rng.random_range(range.min..=range.max);
        for _ in 0..n {
            let prior = *spec.size_prior(category);
            let hwl = g.sample_size(&prior);
            let b = g.place(hwl, category.name())?;
            objects.push((category, b));
        }
    }
    let n_poles = g.rng.random_range(spec.poles.min..=spec.poles.max);
    let mut poles = Vec::new();
    for _ in 0..n_poles {
        let height = g.rng.random_range(2.0..4.0);
        poles.push(g.place([height, 0.15, 0.15], "pole")?);
    }

    g.ground();
    let mut instance_ranges = Vec::with_capacity(objects.len());
    for (_, b) in &objects {
        instance_ranges.push(g.shell(b, (0.2, 0.9)));
    }
    for pole in &poles {
        g.shell(pole, (0.3, 0.6));
    }

    let points = g.points.iter().map(|p| p.cast::<T>()).collect();
    let intensity = g.intensity.iter().map(|v| T::lit(*v)).collect();
    let cloud = PointCloud::new(points, Some(intensity), Frame::Camera)?;
    let objects = objects
        .into_iter()
        .map(|(category, b)| GroundTruthObject {
            category,
            bbox: Box3D {
                cx: T::lit(b.cx),
                cy: T::lit(b.cy),
                cz: T::lit(b.cz),
                h: T::lit(b.h),
                w: T::lit(b.w),
                l: T::lit(b.l),
                ry: T::lit(b.ry),
            },
        })
        .collect();
    Ok(SyntheticScene {
        cloud,
        objects,
        instance_ranges,
    })
}
