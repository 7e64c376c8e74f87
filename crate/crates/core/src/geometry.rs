//! Oriented 3D boxes in the camera frame (x right, y down, z forward).
//!
//! Boxes rotate about the vertical camera axis `y`. In box-local coordinates
//! `u` runs along the length, `v` is vertical and `s` runs along the width; the
//! world position of a local point is `R_y(ry) * (u, v, s) + centroid` with
//! `R_y = [[cos, 0, sin], [0, 1, 0], [-sin, 0, cos]]`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud};
use crate::scalar::Real;

/// BEV intersections below this area (m^2) count as empty.
const DEGENERATE_AREA: f64 = 1e-12;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(angle: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    let k = ((angle - pi) / two_pi).ceil();
    let mut wrapped = angle - two_pi * k;
    if wrapped <= -pi {
        wrapped = wrapped + two_pi;
    } else if wrapped > pi {
        wrapped = wrapped - two_pi;
    }
    wrapped
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D<T> {
    pub cx: T,
    pub cy: T,
    pub cz: T,
    pub h: T,
    pub w: T,
    pub l: T,
    pub ry: T,
}

impl<T: Real> Box3D<T> {
    /// Builds a box, rejecting non-positive or non-finite extents and wrapping
    /// the yaw into `(-pi, pi]`.
    pub fn new(centroid: Point3<T>, h: T, w: T, l: T, ry: T) -> Result<Self> {
        let dims_ok = [h, w, l].iter().all(|d| d.is_finite() && *d > T::zero());
        if !dims_ok {
            return Err(Error::Parameter(format!(
                "box dimensions must be positive and finite (h={h}, w={w}, l={l})"
            )));
        }
        if !centroid.is_finite() || !ry.is_finite() {
            return Err(Error::Parameter("box pose must be finite".into()));
        }
        Ok(Self {
            cx: centroid.x,
            cy: centroid.y,
            cz: centroid.z,
            h,
            w,
            l,
            ry: wrap_angle(ry),
        })
    }

    #[inline]
    pub fn centroid(&self) -> Point3<T> {
        Point3::new(self.cx, self.cy, self.cz)
    }

    pub fn volume(&self) -> T {
        self.h * self.w * self.l
    }

    /// Same box moved by `t`.
    pub fn translated(&self, t: Point3<T>) -> Self {
        Self {
            cx: self.cx + t.x,
            cy: self.cy + t.y,
            cz: self.cz + t.z,
            ..*self
        }
    }

    /// Box-local `(u, v, s)` coordinates of a world point.
    #[inline]
    pub fn to_local(&self, p: Point3<T>) -> Point3<T> {
        let (sin, cos) = self.ry.sin_cos();
        let dx = p.x - self.cx;
        let dz = p.z - self.cz;
        Point3::new(cos * dx - sin * dz, p.y - self.cy, sin * dx + cos * dz)
    }

    #[inline]
    pub fn local_to_world(&self, local: Point3<T>) -> Point3<T> {
        let (sin, cos) = self.ry.sin_cos();
        Point3::new(
            cos * local.x + sin * local.z + self.cx,
            local.y + self.cy,
            -sin * local.x + cos * local.z + self.cz,
        )
    }

    /// Boundary-inclusive containment.
    #[inline]
    pub fn contains(&self, p: Point3<T>) -> bool {
        let local = self.to_local(p);
        let half = T::lit(0.5);
        local.x.abs() <= self.l * half
            && local.y.abs() <= self.h * half
            && local.z.abs() <= self.w * half
    }

    /// Bottom-face corners projected to the `(x, z)` plane, counter-clockwise
    /// when viewed from above.
    pub fn bev_corners(&self) -> [[T; 2]; 4] {
        let c = self.corners();
        [
            [c[0].x, c[0].z],
            [c[1].x, c[1].z],
            [c[2].x, c[2].z],
            [c[3].x, c[3].z],
        ]
    }

    /// The eight corners: bottom face (`y = cy + h/2`, since `y` points down)
    /// counter-clockwise viewed from above starting at local `(+l/2, -w/2)`,
    /// then the top face in the same order.
    pub fn corners(&self) -> [Point3<T>; 8] {
        let half = T::lit(0.5);
        let (hl, hh, hw) = (self.l * half, self.h * half, self.w * half);
        let footprint = [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)];
        let mut out = [Point3::default(); 8];
        for (i, &(u, s)) in footprint.iter().enumerate() {
            out[i] = self.local_to_world(Point3::new(u, hh, s));
            out[i + 4] = self.local_to_world(Point3::new(u, -hh, s));
        }
        out
    }

    /// Vertical extent `(top, bottom)` in camera `y`.
    fn y_interval(&self) -> (T, T) {
        let hh = self.h * T::lit(0.5);
        (self.cy - hh, self.cy + hh)
    }
}

pub fn box_corners<T: Real>(b: &Box3D<T>) -> [Point3<T>; 8] {
    b.corners()
}

/// Sorted set of point indices into one cloud.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn intersection_len(&self, other: &IndexSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

impl FromIterator<usize> for IndexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let set: BTreeSet<usize> = iter.into_iter().collect();
        Self(set.into_iter().collect())
    }
}

/// Indices of the cloud points inside `b` (boundary inclusive).
pub fn points_in_box<T: Real>(cloud: &PointCloud<T>, b: &Box3D<T>) -> IndexSet {
    // Already sorted and unique.
    IndexSet(
        cloud
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| b.contains(**p))
            .map(|(i, _)| i)
            .collect(),
    )
}

/// Signed shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area<T: Real>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc = acc + (a[0] * b[1] - b[0] * a[1]);
    }
    acc * T::lit(0.5)
}

#[inline]
fn cross<T: Real>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn segment_line_intersection<T: Real>(p: [T; 2], q: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]
}

/// Clips `subject` by the convex counter-clockwise polygon `clip`.
pub fn clip_convex<T: Real>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut output: Vec<[T; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= T::zero();
            let prev_in = cross(a, b, prev) >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

/// Area of the intersection of the two boxes' bird's-eye-view rectangles.
pub fn bev_intersection_area<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let pa = a.bev_corners();
    let pb = b.bev_corners();
    let area = polygon_area(&clip_convex(&pa, &pb)).abs();
    if area < T::lit(DEGENERATE_AREA) {
        T::zero()
    } else {
        area
    }
}

/// Intersection volume of two yaw-rotated boxes.
pub fn intersection_volume<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let (a_top, a_bottom) = a.y_interval();
    let (b_top, b_bottom) = b.y_interval();
    let overlap = a_bottom.min(b_bottom) - a_top.max(b_top);
    if overlap <= T::zero() {
        return T::zero();
    }
    bev_intersection_area(a, b) * overlap
}

/// 3D intersection-over-union of two oriented boxes.
pub fn box_iou_3d<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

/// Point-set IoU; two empty sets count as a perfect match.
pub fn instance_iou(pred: &IndexSet, gt: &IndexSet) -> f64 {
    let inter = pred.intersection_len(gt);
    let union = pred.len() + gt.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn centroid_distance<T: Real>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    a.centroid().distance(b.centroid())
}
