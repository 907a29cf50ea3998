//! Deterministic synthetic scenes: ray-cast depth with ground-truth labels
//! and instances, a depth-sensor noise model, and scripted tracking sequences.
//!
//! World coordinates are millimetres with z up; cameras use the pinhole
//! convention of [`crate::geometry`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, Point, PointCloud, Pose};
use crate::raster::Raster;
use crate::semvote::{ClassId, LabelImage, UNLABELED};
use crate::tracker::{BBox, Detection, PcaProjector, POINTER_DIM};

/// Geometry of a primitive, in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Axis-aligned box.
    Box {
        min: [f64; 3],
        max: [f64; 3],
    },
    /// Axis-aligned rectangle at `coord[axis] = offset`, spanning `min..max`
    /// over the two remaining axes in increasing axis order.
    Plane {
        axis: usize,
        offset: f64,
        min: [f64; 2],
        max: [f64; 2],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePrimitive {
    pub shape: Shape,
    pub class_label: ClassId,
    /// Non-zero id written to the instance raster.
    pub instance_id: u16,
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Box { min, max } => (0..3).all(|a| min[a] < max[a]),
            Shape::Plane { axis, min, max, .. } => axis < 3 && min[0] < max[0] && min[1] < max[1],
            Shape::Sphere { radius, .. } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("degenerate primitive {self:?}")))
        }
    }

    /// Smallest positive ray parameter at which `origin + t·dir` meets the surface.
    pub fn intersect(&self, origin: &Point, dir: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            Shape::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    if dir[a].abs() < EPS {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (min[a] - origin[a]) / dir[a];
                    let tb = (max[a] - origin[a]) / dir[a];
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                if t0 > t1 {
                    None
                } else if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Plane {
                axis,
                offset,
                min,
                max,
            } => {
                if dir[axis].abs() < EPS {
                    return None;
                }
                let t = (offset - origin[axis]) / dir[axis];
                if t <= EPS {
                    return None;
                }
                let (a, b) = other_axes(axis);
                let pa = origin[a] + t * dir[a];
                let pb = origin[b] + t * dir[b];
                (pa >= min[0] && pa <= max[0] && pb >= min[1] && pb <= max[1]).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = origin.coords - Vector3::from(center);
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let near = (-b - sq) / a;
                let far = (-b + sq) / a;
                if near > EPS {
                    Some(near)
                } else if far > EPS {
                    Some(far)
                } else {
                    None
                }
            }
        }
    }

    /// Euclidean distance from `p` to the surface.
    pub fn surface_distance(&self, p: &Point) -> f64 {
        match *self {
            Shape::Box { min, max } => {
                let mut outside = Vector3::zeros();
                let mut inside_gap = f64::INFINITY;
                for a in 0..3 {
                    let below = min[a] - p[a];
                    let above = p[a] - max[a];
                    outside[a] = below.max(above).max(0.0);
                    inside_gap = inside_gap.min((-below).min(-above));
                }
                if outside.norm_squared() > 0.0 {
                    outside.norm()
                } else {
                    inside_gap
                }
            }
            Shape::Plane {
                axis,
                offset,
                min,
                max,
            } => {
                let (a, b) = other_axes(axis);
                let da = (min[0] - p[a]).max(p[a] - max[0]).max(0.0);
                let db = (min[1] - p[b]).max(p[b] - max[1]).max(0.0);
                let dn = p[axis] - offset;
                (da * da + db * db + dn * dn).sqrt()
            }
            Shape::Sphere { center, radius } => {
                ((p.coords - Vector3::from(center)).norm() - radius).abs()
            }
        }
    }

    /// Points on the surface, roughly `spacing` apart.
    pub fn sample_surface(&self, spacing: f64) -> Vec<Point> {
        let steps = |len: f64| ((len / spacing).ceil() as usize).max(1);
        let grid = |lo: f64, hi: f64| {
            let n = steps(hi - lo);
            (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
        };
        let mut out = Vec::new();
        match *self {
            Shape::Box { min, max } => {
                for axis in 0..3 {
                    let (a, b) = other_axes(axis);
                    for offset in [min[axis], max[axis]] {
                        for x in grid(min[a], max[a]) {
                            for y in grid(min[b], max[b]) {
                                let mut p = Point::origin();
                                p[axis] = offset;
                                p[a] = x;
                                p[b] = y;
                                out.push(p);
                            }
                        }
                    }
                }
            }
            Shape::Plane {
                axis,
                offset,
                min,
                max,
            } => {
                let (a, b) = other_axes(axis);
                for x in grid(min[0], max[0]) {
                    for y in grid(min[1], max[1]) {
                        let mut p = Point::origin();
                        p[axis] = offset;
                        p[a] = x;
                        p[b] = y;
                        out.push(p);
                    }
                }
            }
            Shape::Sphere { center, radius } => {
                let rings = steps(std::f64::consts::PI * radius);
                for i in 0..=rings {
                    let theta = std::f64::consts::PI * i as f64 / rings as f64;
                    let ring_r = radius * theta.sin();
                    let around = steps(2.0 * std::f64::consts::PI * ring_r);
                    for j in 0..around {
                        let phi = 2.0 * std::f64::consts::PI * j as f64 / around as f64;
                        out.push(Point::new(
                            center[0] + ring_r * phi.cos(),
                            center[1] + ring_r * phi.sin(),
                            center[2] + radius * theta.cos(),
                        ));
                    }
                }
            }
        }
        out
    }
}

/// Output of [`render_depth`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub depth: DepthImage,
    pub labels: LabelImage,
    /// Instance id of the primitive hit at each pixel, 0 where nothing was hit.
    pub instances: Raster<u16>,
}

/// Ray-casts every pixel of the camera at `pose` against `primitives`.
///
/// Depth is the camera-z distance of the nearest hit in millimetres.
pub fn render_depth(
    primitives: &[ScenePrimitive],
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<Rendered> {
    k.validate()?;
    for p in primitives {
        p.shape.validate()?;
    }
    let (w, h) = (k.width, k.height);
    let origin = Point::from(*pose.translation());
    let mut depth = Raster::filled(w, h, 0.0f32);
    let mut labels = Raster::filled(w, h, UNLABELED);
    let mut instances = Raster::filled(w, h, 0u16);
    for v in 0..h {
        for u in 0..w {
            let dir = pose.rotation() * k.ray(u as f64, v as f64);
            let mut best: Option<(f64, &ScenePrimitive)> = None;
            for prim in primitives {
                if let Some(t) = prim.shape.intersect(&origin, &dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, prim));
                    }
                }
            }
            if let Some((t, prim)) = best {
                depth.set(u, v, t as f32);
                labels.set(u, v, prim.class_label);
                instances.set(u, v, prim.instance_id);
            }
        }
    }
    Ok(Rendered {
        depth: DepthImage::new(depth)?,
        labels: LabelImage::new(labels),
        instances,
    })
}

/// Depth noise: Gaussian with a depth-quadratic standard deviation, followed
/// by quantization and a maximum-range cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Standard deviation at zero range, mm.
    pub sigma_base: f64,
    /// Additional standard deviation per squared metre of range, mm/m².
    pub sigma_quadratic: f64,
    /// Output depth resolution in mm; 0 disables quantization.
    pub quantization_step: f64,
    pub seed: u64,
    pub max_depth_mm: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma_base: 1.0,
            sigma_quadratic: 1.43,
            quantization_step: 1.0,
            seed: 0,
            max_depth_mm: 4000.0,
        }
    }
}

impl NoiseModel {
    /// A model that only applies the range cut.
    pub fn noiseless(max_depth_mm: f64) -> Self {
        NoiseModel {
            sigma_base: 0.0,
            sigma_quadratic: 0.0,
            quantization_step: 0.0,
            seed: 0,
            max_depth_mm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.sigma_base,
            self.sigma_quadratic,
            self.quantization_step,
            self.max_depth_mm,
        ];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input(
                "noise model parameters must be finite and >= 0",
            ));
        }
        Ok(())
    }

    /// Standard deviation at depth `z_mm`.
    pub fn sigma(&self, z_mm: f64) -> f64 {
        let z_m = z_mm / 1000.0;
        self.sigma_base + self.sigma_quadratic * z_m * z_m
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// RNG stream for one pixel of one frame; independent of evaluation order.
fn pixel_rng(seed: u64, frame: u64, pixel: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ frame) ^ pixel);
    ChaCha8Rng::seed_from_u64(key)
}

/// [`apply_noise_frame`] for frame 0.
pub fn apply_noise(depth: &DepthImage, model: &NoiseModel) -> Result<DepthImage> {
    apply_noise_frame(depth, model, 0)
}

/// Adds sensor noise to `depth`. Pixels whose true or noisy depth exceeds
/// `max_depth_mm` become invalid, as do invalid input pixels.
pub fn apply_noise_frame(depth: &DepthImage, model: &NoiseModel, frame: u64) -> Result<DepthImage> {
    model.validate()?;
    let mut out = depth.raster().clone();
    for (i, z) in out.data_mut().iter_mut().enumerate() {
        let truth = *z as f64;
        if truth <= 0.0 || truth > model.max_depth_mm {
            *z = 0.0;
            continue;
        }
        let sigma = model.sigma(truth);
        let mut noisy = truth;
        if sigma > 0.0 {
            let n: f64 = pixel_rng(model.seed, frame, i as u64).sample(StandardNormal);
            noisy += sigma * n;
        }
        if model.quantization_step > 0.0 {
            noisy = (noisy / model.quantization_step).round() * model.quantization_step;
        }
        *z = if noisy <= 0.0 || noisy > model.max_depth_mm {
            0.0
        } else {
            noisy as f32
        };
    }
    DepthImage::new(out)
}

/// A random 3-D subspace of pointer space that object pointers are drawn around.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerSpace {
    /// 3×256, orthonormal rows.
    basis: DMatrix<f64>,
    mean: DVector<f64>,
}

impl PointerSpace {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(POINTER_DIM, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let basis = raw.qr().q().transpose();
        let mean = DVector::from_fn(POINTER_DIM, |_, _| rng.random_range(-0.5..0.5));
        PointerSpace { basis, mean }
    }

    /// Pointer at latent coordinates `centre` plus isotropic noise of std `spread`.
    pub fn sample(&self, centre: &[f64; 3], spread: f64, rng: &mut impl Rng) -> Vec<f64> {
        let c = Vector3::from(*centre);
        let mut p = &self.mean + self.basis.transpose() * c;
        if spread > 0.0 {
            for x in p.iter_mut() {
                *x += spread * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p.iter().copied().collect()
    }

    /// The exact projector onto the latent coordinates.
    pub fn projector(&self) -> PcaProjector {
        PcaProjector::new(self.basis.clone(), self.mean.clone()).expect("orthonormal by QR")
    }
}

/// One subject of a scripted tracking sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectScript {
    /// `[x_min, y_min, x_max, y_max]` at frame 0.
    pub bbox: [f64; 4],
    /// Pixels per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Half-open frame ranges during which the subject is detected.
    pub visible: Vec<[u64; 2]>,
    /// Latent pointer cluster centre.
    pub pointer_center: [f64; 3],
    pub pointer_spread: f64,
}

impl SubjectScript {
    pub fn visible_at(&self, frame: u64) -> bool {
        self.visible.iter().any(|r| (r[0]..r[1]).contains(&frame))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingScript {
    pub frames: u64,
    pub subjects: Vec<SubjectScript>,
    pub seed: u64,
    pub pointer_seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrackingSequence {
    pub frames: Vec<Vec<Detection>>,
    /// Ground-truth subject index for every detection.
    pub truth: Vec<Vec<usize>>,
    pub space: PointerSpace,
}

impl TrackingSequence {
    pub fn counts(&self) -> Vec<usize> {
        self.frames.iter().map(Vec::len).collect()
    }
}

/// Rejects schedules where one subject leaves in the same frame another enters.
pub fn check_schedule(frames: u64, visible: &[&dyn Fn(u64) -> bool]) -> Result<()> {
    for f in 1..frames {
        let leaves = visible.iter().any(|v| v(f - 1) && !v(f));
        let enters = visible.iter().any(|v| !v(f - 1) && v(f));
        if leaves && enters {
            return Err(Error::input(format!(
                "frame {f}: a subject leaves while another enters"
            )));
        }
    }
    Ok(())
}

/// Expands a script into per-frame detections with pointers.
pub fn gen_tracking_sequence(script: &TrackingScript) -> Result<TrackingSequence> {
    let vis: Vec<Box<dyn Fn(u64) -> bool + '_>> = script
        .subjects
        .iter()
        .map(|s| Box::new(move |f| s.visible_at(f)) as Box<dyn Fn(u64) -> bool>)
        .collect();
    let refs: Vec<&dyn Fn(u64) -> bool> = vis.iter().map(|b| b.as_ref()).collect();
    check_schedule(script.frames, &refs)?;

    let space = PointerSpace::new(script.pointer_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    for f in 0..script.frames {
        let mut present: Vec<usize> = (0..script.subjects.len())
            .filter(|&s| script.subjects[s].visible_at(f))
            .collect();
        present.shuffle(&mut rng);
        let mut dets = Vec::new();
        for &s in &present {
            let sub = &script.subjects[s];
            let dx = sub.velocity[0] * f as f64;
            let dy = sub.velocity[1] * f as f64;
            let bbox = BBox::new(
                sub.bbox[0] + dx,
                sub.bbox[1] + dy,
                sub.bbox[2] + dx,
                sub.bbox[3] + dy,
            )?;
            let pointer = space.sample(&sub.pointer_center, sub.pointer_spread, &mut rng);
            dets.push(Detection::new(bbox, Some(pointer), f)?);
        }
        frames.push(dets);
        truth.push(present);
    }
    Ok(TrackingSequence {
        frames,
        truth,
        space,
    })
}

/// Camera placement for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraPose {
    LookAt {
        eye: [f64; 3],
        target: [f64; 3],
    },
    /// Row-major 4×4 camera-to-world matrix.
    Matrix {
        matrix: [f64; 16],
    },
}

impl CameraPose {
    pub fn to_pose(&self) -> Result<Pose> {
        match self {
            CameraPose::LookAt { eye, target } => {
                Pose::look_at(Point::from(*eye), Point::from(*target), Vector3::z())
            }
            CameraPose::Matrix { matrix } => {
                Pose::from_homogeneous(&nalgebra::Matrix4::from_row_slice(matrix))
            }
        }
    }
}

/// A moving box-shaped actor (a person) with an object-pointer cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub class_label: ClassId,
    pub instance_id: u16,
    pub size: [f64; 3],
    /// Centre of the footprint on the floor at frame 0.
    pub start: [f64; 3],
    /// Millimetres per frame.
    #[serde(default)]
    pub velocity: [f64; 3],
    pub visible: Vec<[u64; 2]>,
    pub pointer_center: [f64; 3],
    pub pointer_spread: f64,
}

impl ActorSpec {
    pub fn visible_at(&self, frame: u64) -> bool {
        self.visible.iter().any(|r| (r[0]..r[1]).contains(&frame))
    }

    pub fn primitive_at(&self, frame: u64) -> ScenePrimitive {
        let c = [
            self.start[0] + self.velocity[0] * frame as f64,
            self.start[1] + self.velocity[1] * frame as f64,
            self.start[2] + self.velocity[2] * frame as f64,
        ];
        ScenePrimitive {
            shape: Shape::Box {
                min: [c[0] - self.size[0] / 2.0, c[1] - self.size[1] / 2.0, c[2]],
                max: [
                    c[0] + self.size[0] / 2.0,
                    c[1] + self.size[1] / 2.0,
                    c[2] + self.size[2],
                ],
            },
            class_label: self.class_label,
            instance_id: self.instance_id,
        }
    }
}

/// Full description of a synthetic RGB-D sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    pub class_names: BTreeMap<ClassId, String>,
    pub primitives: Vec<ScenePrimitive>,
    pub camera_path: Vec<CameraPose>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub pointer_seed: u64,
    /// Minimum visible pixels for an actor to be reported as a detection.
    #[serde(default = "default_min_detection_pixels")]
    pub min_detection_pixels: usize,
}

fn default_min_detection_pixels() -> usize {
    50
}

/// Everything generated for one frame.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub index: u64,
    pub pose: Pose,
    pub depth: DepthImage,
    /// Noise-free depth, before the range cut.
    pub clean_depth: DepthImage,
    pub labels: LabelImage,
    pub instances: Raster<u16>,
    pub detections: Vec<Detection>,
    /// Actor index of every detection.
    pub detection_truth: Vec<usize>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.noise.validate()?;
        if self.camera_path.is_empty() {
            return Err(Error::input("scene spec needs at least one camera pose"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.primitives {
            p.shape.validate()?;
            if p.instance_id == 0 || !ids.insert(p.instance_id) {
                return Err(Error::input(format!(
                    "instance id {} is zero or repeated",
                    p.instance_id
                )));
            }
        }
        for a in &self.actors {
            if a.instance_id == 0 || !ids.insert(a.instance_id) {
                return Err(Error::input(format!(
                    "actor instance id {} is zero or repeated",
                    a.instance_id
                )));
            }
        }
        for id in self
            .primitives
            .iter()
            .map(|p| p.class_label)
            .chain(self.actors.iter().map(|a| a.class_label))
        {
            if id == UNLABELED || !self.class_names.contains_key(&id) {
                return Err(Error::input(format!("class {id} is unnamed or reserved")));
            }
        }
        let vis: Vec<Box<dyn Fn(u64) -> bool + '_>> = self
            .actors
            .iter()
            .map(|a| Box::new(move |f| a.visible_at(f)) as Box<dyn Fn(u64) -> bool>)
            .collect();
        let refs: Vec<&dyn Fn(u64) -> bool> = vis.iter().map(|b| b.as_ref()).collect();
        check_schedule(self.camera_path.len() as u64, &refs)
    }

    pub fn pointer_space(&self) -> PointerSpace {
        PointerSpace::new(self.pointer_seed)
    }

    /// Static primitives plus the actors visible at `frame`.
    pub fn primitives_at(&self, frame: u64) -> Vec<ScenePrimitive> {
        let mut out = self.primitives.clone();
        out.extend(
            self.actors
                .iter()
                .filter(|a| a.visible_at(frame))
                .map(|a| a.primitive_at(frame)),
        );
        out
    }

    pub fn render_frame(&self, frame: u64) -> Result<SynthFrame> {
        let pose = self
            .camera_path
            .get(frame as usize)
            .ok_or_else(|| Error::input(format!("no camera pose for frame {frame}")))?
            .to_pose()?;
        let prims = self.primitives_at(frame);
        let r = render_depth(&prims, &pose, &self.intrinsics)?;
        let depth = apply_noise_frame(&r.depth, &self.noise, frame)?;

        let space = self.pointer_space();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.noise.seed ^ 0xD1CE) ^ frame);
        let mut detections = Vec::new();
        let mut detection_truth = Vec::new();
        for (ai, actor) in self.actors.iter().enumerate() {
            if !actor.visible_at(frame) {
                continue;
            }
            let (mut n, mut lo, mut hi) = (0usize, (usize::MAX, usize::MAX), (0usize, 0usize));
            for v in 0..r.instances.height() {
                for u in 0..r.instances.width() {
                    if *r.instances.get(u, v) == actor.instance_id {
                        n += 1;
                        lo = (lo.0.min(u), lo.1.min(v));
                        hi = (hi.0.max(u), hi.1.max(v));
                    }
                }
            }
            if n < self.min_detection_pixels {
                continue;
            }
            let bbox = BBox::new(
                lo.0 as f64,
                lo.1 as f64,
                hi.0 as f64 + 1.0,
                hi.1 as f64 + 1.0,
            )?;
            let pointer = space.sample(&actor.pointer_center, actor.pointer_spread, &mut rng);
            detections.push(Detection::new(bbox, Some(pointer), frame)?);
            detection_truth.push(ai);
        }

        Ok(SynthFrame {
            index: frame,
            pose,
            depth,
            clean_depth: r.depth,
            labels: LabelImage {
                data: r.labels.data,
                class_names: self.class_names.clone(),
            },
            instances: r.instances,
            detections,
            detection_truth,
        })
    }

    /// Dense samples of the static primitives' surfaces, world frame.
    pub fn ground_truth_cloud(&self, spacing: f64) -> PointCloud {
        self.primitives
            .iter()
            .flat_map(|p| p.shape.sample_surface(spacing))
            .collect()
    }

    /// Distance from `p` to the nearest static primitive surface.
    pub fn surface_distance(&self, p: &Point) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.shape.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Samples for fitting a pointer projector, drawn from every actor's
    /// cluster with a seed unrelated to the rendered frames.
    pub fn projector_training_pointers(&self, per_actor: usize) -> Vec<Vec<f64>> {
        let space = self.pointer_space();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.pointer_seed ^ 0x7EA1));
        self.actors
            .iter()
            .flat_map(|a| {
                (0..per_actor)
                    .map(|_| space.sample(&a.pointer_center, a.pointer_spread, &mut rng))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// A furnished room: floor, a table, two chairs, a cabinet and a ball,
    /// seen from five viewpoints sweeping left to right.
    pub fn demo_room(width: usize, height: usize) -> Self {
        let f = 525.0 * width as f64 / 640.0;
        let intrinsics = CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        };
        let class_names = BTreeMap::from([
            (1, "floor".to_string()),
            (2, "table".to_string()),
            (3, "chair".to_string()),
            (4, "cabinet".to_string()),
            (5, "ball".to_string()),
            (6, "person".to_string()),
        ]);
        let boxed = |min: [f64; 3], max: [f64; 3], class_label, instance_id| ScenePrimitive {
            shape: Shape::Box { min, max },
            class_label,
            instance_id,
        };
        let primitives = vec![
            ScenePrimitive {
                shape: Shape::Plane {
                    axis: 2,
                    offset: 0.0,
                    min: [-3000.0, -500.0],
                    max: [3000.0, 5000.0],
                },
                class_label: 1,
                instance_id: 1,
            },
            boxed([-400.0, 1900.0, 0.0], [400.0, 2500.0, 750.0], 2, 2),
            boxed([-1300.0, 1500.0, 0.0], [-850.0, 1950.0, 900.0], 3, 3),
            boxed([850.0, 1500.0, 0.0], [1300.0, 1950.0, 900.0], 3, 4),
            boxed([-1100.0, 2900.0, 0.0], [-300.0, 3300.0, 1400.0], 4, 5),
            ScenePrimitive {
                shape: Shape::Sphere {
                    center: [600.0, 2900.0, 250.0],
                    radius: 250.0,
                },
                class_label: 5,
                instance_id: 6,
            },
        ];
        let camera_path = (0..5)
            .map(|i| {
                let x = -900.0 + 450.0 * i as f64;
                CameraPose::LookAt {
                    eye: [x, -600.0, 1600.0],
                    target: [x * 0.3, 2300.0, 300.0],
                }
            })
            .collect();
        SceneSpec {
            intrinsics,
            class_names,
            primitives,
            camera_path,
            noise: NoiseModel {
                sigma_base: 5.0,
                seed: 17,
                ..NoiseModel::default()
            },
            actors: Vec::new(),
            pointer_seed: 5,
            min_detection_pixels: default_min_detection_pixels(),
        }
    }
}
