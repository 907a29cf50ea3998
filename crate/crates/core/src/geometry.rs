//! Spatial primitives: camera model, rigid poses, point clouds, voxel
//! downsampling and nearest-neighbour search.
//!
//! All lengths are millimetres. Camera coordinates follow the pinhole
//! convention: x to the right, y down, z along the optical axis.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

pub type Point = Point3<f64>;

const ORTHO_TOL: f64 = 1e-9;

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::input("intrinsics need finite fx, fy > 0"));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::input(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Forward pinhole projection of a camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Point) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Direction of the ray through pixel `(u, v)`, scaled so that its z component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Rigid transform mapping camera coordinates into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal
    /// matrices to within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ORTHO_TOL)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("pose translation must be finite"));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Pose from a rotation given as roll/pitch/yaw (radians) and a translation.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation,
        }
    }

    /// Camera at `eye` looking at `target`, with image "up" along `up`.
    pub fn look_at(eye: Point, target: Point, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::input("look_at target coincides with eye"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::input("look_at up vector is parallel to the view direction"))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Pose::new(rotation, eye.coords)
    }

    /// Reads a 4×4 homogeneous matrix. Rotations within 1e-6 of orthonormal
    /// (text files with limited precision) are projected onto the nearest rotation.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::input("pose matrix last row must be 0 0 0 1"));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
        check_rotation(&r, 1e-6)?;
        let r = if check_rotation(&r, ORTHO_TOL).is_ok() {
            r
        } else {
            *Rotation3::from_matrix(&r).matrix()
        };
        Pose::new(r, t)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("rotation must be finite"));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > tol {
        return Err(Error::input(format!(
            "rotation is not orthonormal (max deviation {err:.3e})"
        )));
    }
    if (r.determinant() - 1.0).abs() > tol {
        return Err(Error::input("rotation determinant must be +1"));
    }
    Ok(())
}

/// Depth raster in millimetres; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage(Raster<f32>);

impl DepthImage {
    pub fn new(raster: Raster<f32>) -> Result<Self> {
        if raster.data().iter().any(|z| !z.is_finite() || *z < 0.0) {
            return Err(Error::input("depth values must be finite and non-negative"));
        }
        Ok(DepthImage(raster))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DepthImage(Raster::filled(width, height, 0.0))
    }

    pub fn raster(&self) -> &Raster<f32> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        *self.0.get(u, v)
    }

    pub fn valid_count(&self) -> usize {
        self.0.data().iter().filter(|&&z| z > 0.0).count()
    }

    pub fn into_raster(self) -> Raster<f32> {
        self.0
    }
}

/// An unordered set of 3-D points in millimetres.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::input("point coordinates must be finite"));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud {
            points: iter.into_iter().collect(),
        }
    }
}

/// Voxel sizes for the two downsampling stages of fusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelParams {
    /// Grid used before correspondence search.
    pub correspondence_voxel_mm: f64,
    /// Grid used for stored scene geometry.
    pub final_voxel_mm: f64,
}

impl Default for VoxelParams {
    fn default() -> Self {
        VoxelParams {
            correspondence_voxel_mm: 100.0,
            final_voxel_mm: 50.0,
        }
    }
}

impl VoxelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.final_voxel_mm > 0.0 && self.correspondence_voxel_mm > 0.0) {
            return Err(Error::input("voxel sizes must be > 0"));
        }
        if self.final_voxel_mm >= self.correspondence_voxel_mm {
            return Err(Error::input(
                "final voxel must be smaller than the correspondence voxel",
            ));
        }
        Ok(())
    }
}

/// Lifts valid depth pixels (optionally restricted to `mask`) into camera-frame
/// points, in row-major scan order.
pub fn backproject(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    mask: Option<&Mask>,
) -> Result<PointCloud> {
    if let Some(m) = mask {
        if !m.same_dims(depth.raster()) {
            return Err(Error::input(format!(
                "mask is {}x{}, depth is {}x{}",
                m.width(),
                m.height(),
                depth.width(),
                depth.height()
            )));
        }
    }
    let mut points = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let z = depth.get(u, v);
            if z <= 0.0 || mask.is_some_and(|m| !*m.get(u, v)) {
                continue;
            }
            let z = z as f64;
            points.push(Point::new(
                z * (u as f64 - k.cx) / k.fx,
                z * (v as f64 - k.cy) / k.fy,
                z,
            ));
        }
    }
    Ok(PointCloud { points })
}

pub fn transform(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    cloud.points.iter().map(|p| pose.apply(p)).collect()
}

/// Integer voxel coordinate of `p` on a grid anchored at the world origin.
#[inline]
pub fn voxel_index(p: &Point, voxel_mm: f64) -> [i64; 3] {
    [
        (p.x / voxel_mm).floor() as i64,
        (p.y / voxel_mm).floor() as i64,
        (p.z / voxel_mm).floor() as i64,
    ]
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Output points appear in the order their voxel was first encountered.
pub fn voxel_downsample(cloud: &PointCloud, voxel_mm: f64) -> Result<PointCloud> {
    if !(voxel_mm > 0.0) || !voxel_mm.is_finite() {
        return Err(Error::input(format!(
            "voxel size must be > 0, got {voxel_mm}"
        )));
    }
    let mut slot: HashMap<[i64; 3], usize> = HashMap::with_capacity(cloud.len() / 2);
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in &cloud.points {
        let idx = *slot.entry(voxel_index(p, voxel_mm)).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[idx].0 += p.coords;
        sums[idx].1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(s, n)| Point::from(s / n as f64))
        .collect())
}

#[inline]
pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Exhaustive nearest-neighbour search. Ties go to the lowest index.
pub fn nearest_neighbor(query: &Point, cloud: &PointCloud) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in cloud.points.iter().enumerate() {
        let d = dist2(query, p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, d)| (i, d.sqrt()))
        .ok_or_else(|| Error::input("nearest neighbour query on an empty cloud"))
}

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static k-d tree over a borrowed point slice.
///
/// Queries return exactly what [`nearest_neighbor`] returns, including the
/// lowest-index tie rule.
pub struct KdTree<'a> {
    points: &'a [Point],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn points(&self) -> &'a [Point] {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] <= lo[axis] {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let pts = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    /// Nearest point to `query` as `(index, distance)`.
    pub fn nearest(&self, query: &Point) -> Option<(usize, f64)> {
        self.nearest_sq(query).map(|(i, d)| (i, d.sqrt()))
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest_sq(&self, query: &Point) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                // Points equal to `value` may sit on either side.
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}
