//! Label-gated merging of per-frame segmented point clouds into a growing
//! scene.
//!
//! Two clouds are compared through their mutually closest points on a coarse
//! voxel grid. The overlap score is the number of such pairs divided by the
//! size of the smaller cloud; a frame cloud whose score against a scene
//! object exceeds `alpha` is merged into it. With label gating enabled only
//! clouds carrying the same class id are compared at all.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform, voxel_downsample, KdTree, PointCloud, Pose, VoxelParams};
use crate::semvote::ClassId;
use crate::tracker::TrackId;

pub type InstanceId = u64;

/// One object of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedCloud {
    /// `raw_points` downsampled at the final voxel size.
    pub points: PointCloud,
    pub class_label: ClassId,
    pub instance_id: InstanceId,
    /// Every world-frame point merged into this object so far.
    pub raw_points: PointCloud,
    /// Set for tracked dynamic actors; their geometry is replaced, not merged.
    pub track_id: Option<TrackId>,
    pub frame_last_updated: u64,
}

impl SegmentedCloud {
    pub fn new(
        raw_points: PointCloud,
        class_label: ClassId,
        instance_id: InstanceId,
        final_voxel_mm: f64,
    ) -> Result<Self> {
        let points = voxel_downsample(&raw_points, final_voxel_mm)?;
        if points.is_empty() {
            return Err(Error::input("segmented cloud needs at least one point"));
        }
        Ok(SegmentedCloud {
            points,
            class_label,
            instance_id,
            raw_points,
            track_id: None,
            frame_last_updated: 0,
        })
    }
}

/// A camera-frame segment handed to [`SceneModel::merge_frame`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSegment {
    pub points: PointCloud,
    pub class_label: ClassId,
    /// Tracked actors bypass overlap merging and are keyed by this id.
    pub track_id: Option<TrackId>,
}

impl FrameSegment {
    pub fn new(points: PointCloud, class_label: ClassId) -> Self {
        FrameSegment {
            points,
            class_label,
            track_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceMap {
    pub pairs: Vec<(usize, usize)>,
    pub cutoff_mm: f64,
}

impl CorrespondenceMap {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionParams {
    /// Merge threshold on the overlap score, in (0, 1).
    pub alpha: f64,
    pub voxels: VoxelParams,
    /// Mutually closest points farther apart than this do not count as overlap.
    pub correspondence_cutoff_mm: f64,
    /// Compare only clouds with equal class labels.
    pub use_labels: bool,
}

impl Default for FusionParams {
    fn default() -> Self {
        let voxels = VoxelParams::default();
        FusionParams {
            alpha: 0.3,
            voxels,
            correspondence_cutoff_mm: 2.0 * voxels.correspondence_voxel_mm,
            use_labels: true,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::input(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.correspondence_cutoff_mm > 0.0) {
            return Err(Error::input("correspondence cutoff must be > 0"));
        }
        self.voxels.validate()
    }
}

/// Pairs `(i, j)` where `b[j]` is the nearest point of `b` to `a[i]`, `a[i]`
/// is the nearest point of `a` to `b[j]`, and they lie within `cutoff_mm`.
/// Ties resolve to the lowest index. Pairs come out sorted by `i`.
pub fn mutual_correspondences(a: &PointCloud, b: &PointCloud, cutoff_mm: f64) -> CorrespondenceMap {
    let ta = KdTree::new(&a.points);
    let tb = KdTree::new(&b.points);
    mutual_with_trees(&ta, &tb, cutoff_mm)
}

fn mutual_with_trees(ta: &KdTree<'_>, tb: &KdTree<'_>, cutoff_mm: f64) -> CorrespondenceMap {
    let mut pairs = Vec::new();
    if !ta.is_empty() && !tb.is_empty() {
        let cutoff2 = cutoff_mm * cutoff_mm;
        for (i, p) in ta.points().iter().enumerate() {
            let (j, d2) = tb.nearest_sq(p).expect("non-empty tree");
            if d2 <= cutoff2 && ta.nearest_sq(&tb.points()[j]).map(|r| r.0) == Some(i) {
                pairs.push((i, j));
            }
        }
    }
    CorrespondenceMap { pairs, cutoff_mm }
}

/// Overlap score: mutual correspondences over the size of the smaller cloud.
pub fn overlap(a: &PointCloud, b: &PointCloud, cutoff_mm: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("overlap of an empty cloud"));
    }
    let m = mutual_correspondences(a, b, cutoff_mm);
    Ok(m.len() as f64 / a.len().min(b.len()) as f64)
}

/// Brute-force distance evaluations needed to compare two sets of clouds,
/// given `(label, point count)` for each cloud.
///
/// Without labels every scene cloud meets every frame cloud, which equals the
/// product of the pooled point counts. With labels only equal-label pairs count.
pub fn distance_computations(
    scene: &[(ClassId, usize)],
    frame: &[(ClassId, usize)],
    use_labels: bool,
) -> u64 {
    if !use_labels {
        let s: u64 = scene.iter().map(|&(_, n)| n as u64).sum();
        let f: u64 = frame.iter().map(|&(_, n)| n as u64).sum();
        return s * f;
    }
    scene
        .iter()
        .flat_map(|&(ls, ns)| {
            frame
                .iter()
                .filter(move |&&(lf, _)| lf == ls)
                .map(move |&(_, nf)| ns as u64 * nf as u64)
        })
        .sum()
}

/// Per-frame bookkeeping of the overlap search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame: u64,
    /// Coarse point count over all static scene objects before the merge.
    pub scene_points: usize,
    /// Coarse point count over all static frame segments.
    pub frame_points: usize,
    pub computations_without_labels: u64,
    pub computations_with_labels: u64,
    /// Cloud pairs whose overlap was actually evaluated.
    pub pairs_evaluated: usize,
    pub merges: usize,
    pub new_objects: usize,
    #[serde(with = "duration_secs")]
    pub overlap_time: Duration,
}

impl FrameStats {
    pub fn reduction_factor(&self) -> f64 {
        if self.computations_with_labels == 0 {
            return if self.computations_without_labels == 0 {
                1.0
            } else {
                f64::INFINITY
            };
        }
        self.computations_without_labels as f64 / self.computations_with_labels as f64
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// The merged scene: static objects fused by overlap plus tracked actors.
#[derive(Debug, Clone)]
pub struct SceneModel {
    objects: Vec<SegmentedCloud>,
    /// Correspondence-voxel downsample of each object's raw points.
    coarse: Vec<PointCloud>,
    pub frame_count: u64,
    pub params: FusionParams,
    pub stats: Vec<FrameStats>,
    next_instance_id: InstanceId,
}

struct Evaluated {
    segment: usize,
    coarse: PointCloud,
    world: PointCloud,
    label: ClassId,
}

impl SceneModel {
    pub fn new(params: FusionParams) -> Result<Self> {
        params.validate()?;
        Ok(SceneModel {
            objects: Vec::new(),
            coarse: Vec::new(),
            frame_count: 0,
            params,
            stats: Vec::new(),
            next_instance_id: 0,
        })
    }

    /// Objects ordered by instance id.
    pub fn objects(&self) -> &[SegmentedCloud] {
        &self.objects
    }

    pub fn object(&self, id: InstanceId) -> Option<&SegmentedCloud> {
        self.objects.iter().find(|o| o.instance_id == id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    fn static_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.objects.len()).filter(|&i| self.objects[i].track_id.is_none())
    }

    fn coarse_of(&self, cloud: &PointCloud) -> Result<PointCloud> {
        voxel_downsample(cloud, self.params.voxels.correspondence_voxel_mm)
    }

    /// Distance evaluations a brute-force search would need to compare the
    /// static scene against `segments` (world frame), at the correspondence
    /// voxel resolution.
    pub fn count_distance_computations(
        &self,
        segments_world: &[FrameSegment],
        use_labels: bool,
    ) -> Result<u64> {
        let scene: Vec<(ClassId, usize)> = self
            .static_indices()
            .map(|i| (self.objects[i].class_label, self.coarse[i].len()))
            .collect();
        let frame = segments_world
            .iter()
            .filter(|s| s.track_id.is_none())
            .map(|s| Ok((s.class_label, self.coarse_of(&s.points)?.len())))
            .collect::<Result<Vec<_>>>()?;
        Ok(distance_computations(&scene, &frame, use_labels))
    }

    fn fresh_id(&mut self) -> InstanceId {
        let id = self.next_instance_id;
        self.next_instance_id += 1;
        id
    }

    fn insert(&mut self, obj: SegmentedCloud) -> Result<()> {
        let coarse = self.coarse_of(&obj.raw_points)?;
        let pos = self
            .objects
            .partition_point(|o| o.instance_id < obj.instance_id);
        self.objects.insert(pos, obj);
        self.coarse.insert(pos, coarse);
        Ok(())
    }

    /// Fuses one frame of camera-frame segments, observed from `pose`, into the scene.
    pub fn merge_frame(&mut self, segments: &[FrameSegment], pose: &Pose) -> Result<&FrameStats> {
        let frame = self.frame_count;
        let use_labels = self.params.use_labels;
        let alpha = self.params.alpha;
        let cutoff = self.params.correspondence_cutoff_mm;
        let final_voxel = self.params.voxels.final_voxel_mm;

        let mut tracked = Vec::new();
        let mut evaluated = Vec::new();
        for (k, seg) in segments.iter().enumerate() {
            if seg.points.is_empty() {
                continue;
            }
            let world = transform(&seg.points, pose);
            match seg.track_id {
                Some(t) => tracked.push((t, seg.class_label, world)),
                None => evaluated.push(Evaluated {
                    segment: k,
                    coarse: self.coarse_of(&world)?,
                    world,
                    label: seg.class_label,
                }),
            }
        }

        let scene_idx: Vec<usize> = self.static_indices().collect();
        let scene_sizes: Vec<(ClassId, usize)> = scene_idx
            .iter()
            .map(|&i| (self.objects[i].class_label, self.coarse[i].len()))
            .collect();
        let frame_sizes: Vec<(ClassId, usize)> = evaluated
            .iter()
            .map(|e| (e.label, e.coarse.len()))
            .collect();

        // Union-find over scene objects [0, S) followed by frame segments [S, S+F).
        let s_count = scene_idx.len();
        let mut parent: Vec<usize> = (0..s_count + evaluated.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }

        let started = Instant::now();
        let mut pairs_evaluated = 0;
        {
            let scene_trees: Vec<KdTree<'_>> = scene_idx
                .iter()
                .map(|&i| KdTree::new(&self.coarse[i].points))
                .collect();
            for (fj, ev) in evaluated.iter().enumerate() {
                if ev.coarse.is_empty() {
                    continue;
                }
                let tf = KdTree::new(&ev.coarse.points);
                for (si, &oi) in scene_idx.iter().enumerate() {
                    if use_labels && self.objects[oi].class_label != ev.label {
                        continue;
                    }
                    pairs_evaluated += 1;
                    let m = mutual_with_trees(&scene_trees[si], &tf, cutoff);
                    let sigma = m.len() as f64 / scene_trees[si].len().min(tf.len()) as f64;
                    if sigma > alpha {
                        let (a, b) = (find(&mut parent, si), find(&mut parent, s_count + fj));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
        let overlap_time = started.elapsed();

        // Collect groups keyed by root. Roots of groups holding a scene object are scene slots.
        let mut merges = 0;
        let mut new_objects = 0;
        let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> =
            Default::default();
        for x in 0..parent.len() {
            let r = find(&mut parent, x);
            let g = groups.entry(r).or_default();
            if x < s_count {
                g.0.push(x);
            } else {
                g.1.push(x - s_count);
            }
        }

        let mut removed = Vec::new();
        let mut touched = Vec::new();
        for (_, (scene_members, frame_members)) in groups {
            if frame_members.is_empty() {
                continue;
            }
            if scene_members.is_empty() {
                // A lone frame segment: frame segments only join through scene objects.
                for fj in frame_members {
                    let ev = &evaluated[fj];
                    let id = self.fresh_id();
                    let mut obj = SegmentedCloud::new(ev.world.clone(), ev.label, id, final_voxel)?;
                    obj.frame_last_updated = frame;
                    self.insert(obj)?;
                    new_objects += 1;
                }
                continue;
            }
            // scene_members ascend with instance id, so the first is the oldest
            let keep = scene_idx[scene_members[0]];
            let label = self.objects[keep].class_label;
            let mut raw = std::mem::take(&mut self.objects[keep].raw_points);
            for &sm in &scene_members[1..] {
                let oi = scene_idx[sm];
                if use_labels && self.objects[oi].class_label != label {
                    return Err(Error::Internal(format!(
                        "merge group mixes labels {label} and {}",
                        self.objects[oi].class_label
                    )));
                }
                raw.extend(&self.objects[oi].raw_points);
                removed.push(self.objects[oi].instance_id);
            }
            for &fj in &frame_members {
                let ev = &evaluated[fj];
                if use_labels && ev.label != label {
                    return Err(Error::Internal(format!(
                        "segment {} with label {} grouped with label {label}",
                        ev.segment, ev.label
                    )));
                }
                raw.extend(&ev.world);
            }
            merges += scene_members.len() - 1 + frame_members.len();
            self.objects[keep].raw_points = raw;
            self.objects[keep].frame_last_updated = frame;
            touched.push(self.objects[keep].instance_id);
        }

        for (track, label, world) in tracked {
            match self.objects.iter().position(|o| o.track_id == Some(track)) {
                Some(i) => {
                    self.objects[i].raw_points = world;
                    self.objects[i].class_label = label;
                    self.objects[i].frame_last_updated = frame;
                    touched.push(self.objects[i].instance_id);
                }
                None => {
                    let id = self.fresh_id();
                    let mut obj = SegmentedCloud::new(world, label, id, final_voxel)?;
                    obj.track_id = Some(track);
                    obj.frame_last_updated = frame;
                    self.insert(obj)?;
                    new_objects += 1;
                }
            }
        }

        if !removed.is_empty() {
            let keep: Vec<bool> = self
                .objects
                .iter()
                .map(|o| !removed.contains(&o.instance_id))
                .collect();
            let mut it = keep.iter();
            self.objects.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            self.coarse.retain(|_| *it.next().unwrap());
        }
        for id in touched {
            let i = self
                .objects
                .iter()
                .position(|o| o.instance_id == id)
                .ok_or_else(|| Error::Internal(format!("object {id} vanished during merge")))?;
            self.objects[i].points = voxel_downsample(&self.objects[i].raw_points, final_voxel)?;
            self.coarse[i] = self.coarse_of(&self.objects[i].raw_points)?;
        }

        self.stats.push(FrameStats {
            frame,
            scene_points: scene_sizes.iter().map(|s| s.1).sum(),
            frame_points: frame_sizes.iter().map(|s| s.1).sum(),
            computations_without_labels: distance_computations(&scene_sizes, &frame_sizes, false),
            computations_with_labels: distance_computations(&scene_sizes, &frame_sizes, true),
            pairs_evaluated,
            merges,
            new_objects,
            overlap_time,
        });
        self.frame_count += 1;
        Ok(self.stats.last().expect("just pushed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        pts.iter().map(|p| Point::new(p[0], p[1], p[2])).collect()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, centre: [f64; 3], extent: f64) -> PointCloud {
        (0..n)
            .map(|_| {
                Point::new(
                    centre[0] + rng.random_range(-extent..extent),
                    centre[1] + rng.random_range(-extent..extent),
                    centre[2] + rng.random_range(-extent..extent),
                )
            })
            .collect()
    }

    /// Dense block of points filling a box, spaced `step` apart.
    fn block(min: [f64; 3], size: [f64; 3], step: f64) -> PointCloud {
        let n = |a: usize| (size[a] / step) as usize;
        let mut pts = Vec::new();
        for i in 0..n(0) {
            for j in 0..n(1) {
                for k in 0..n(2) {
                    pts.push(Point::new(
                        min[0] + (i as f64 + 0.5) * step,
                        min[1] + (j as f64 + 0.5) * step,
                        min[2] + (k as f64 + 0.5) * step,
                    ));
                }
            }
        }
        PointCloud { points: pts }
    }

    // O(n·m) oracle, independent of the k-d tree.
    fn brute_mutual(a: &PointCloud, b: &PointCloud, cutoff: f64) -> Vec<(usize, usize)> {
        let nn = |q: &Point, c: &PointCloud| {
            let mut best = (0, f64::INFINITY);
            for (i, p) in c.points.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        };
        let mut out = Vec::new();
        for (i, p) in a.points.iter().enumerate() {
            let (j, d) = nn(p, b);
            if nn(&b.points[j], a).0 == i && d.sqrt() <= cutoff {
                out.push((i, j));
            }
        }
        out
    }

    #[test]
    fn identical_clouds_fully_correspond() {
        let a = cloud(&[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0], [0.0, 300.0, 0.0]]);
        let m = mutual_correspondences(&a, &a, 200.0);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(overlap(&a, &a, 200.0).unwrap(), 1.0);
    }

    #[test]
    fn cutoff_excludes_distant_pair() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1000.0, 0.0, 0.0]]);
        assert!(mutual_correspondences(&a, &b, 200.0).is_empty());
        assert_eq!(overlap(&a, &b, 200.0).unwrap(), 0.0);
    }

    #[test]
    fn subset_overlap_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_cloud(&mut rng, 100, [0.0; 3], 500.0);
        let b = PointCloud {
            points: a.points[..50].to_vec(),
        };
        assert_eq!(mutual_correspondences(&a, &b, 200.0).len(), 50);
        assert_eq!(overlap(&a, &b, 200.0).unwrap(), 1.0);
    }

    #[test]
    fn overlap_rejects_empty() {
        let a = cloud(&[[0.0; 3]]);
        assert!(overlap(&a, &PointCloud::default(), 1.0).is_err());
        assert!(overlap(&PointCloud::default(), &a, 1.0).is_err());
    }

    #[test]
    fn mutual_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let na = rng.random_range(1..120);
            let nb = rng.random_range(1..120);
            let a = random_cloud(&mut rng, na, [0.0; 3], 800.0);
            let b = random_cloud(&mut rng, nb, [100.0, 0.0, 0.0], 800.0);
            assert_eq!(
                mutual_correspondences(&a, &b, 200.0).pairs,
                brute_mutual(&a, &b, 200.0)
            );
        }
    }

    #[test]
    fn correspondence_map_is_a_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let a = random_cloud(&mut rng, 80, [0.0; 3], 300.0);
            let b = random_cloud(&mut rng, 60, [0.0; 3], 300.0);
            let m = mutual_correspondences(&a, &b, 1e9);
            let mut seen_a = std::collections::HashSet::new();
            let mut seen_b = std::collections::HashSet::new();
            for (i, j) in m.pairs {
                assert!(seen_a.insert(i) && seen_b.insert(j));
            }
        }
    }

    #[test]
    fn computation_counts() {
        assert_eq!(
            distance_computations(&[(1, 2850)], &[(2, 3842)], false),
            10_949_700
        );
        assert_eq!(distance_computations(&[(1, 2850)], &[(2, 3842)], true), 0);
        let same = distance_computations(&[(4, 30)], &[(4, 70)], true);
        assert_eq!(same, distance_computations(&[(4, 30)], &[(4, 70)], false));
        let k = 5u16;
        let scene: Vec<_> = (0..k).map(|l| (l, 40usize)).collect();
        let frame: Vec<_> = (0..k).map(|l| (l, 60usize)).collect();
        let with = distance_computations(&scene, &frame, true);
        let without = distance_computations(&scene, &frame, false);
        assert_eq!(with, 5 * 40 * 60);
        assert_eq!(without, with * k as u64);
    }

    fn params() -> FusionParams {
        FusionParams::default()
    }

    #[test]
    fn params_validation() {
        assert!(FusionParams {
            alpha: 1.0,
            ..params()
        }
        .validate()
        .is_err());
        assert!(FusionParams {
            alpha: 0.0,
            ..params()
        }
        .validate()
        .is_err());
        let bad_voxels = VoxelParams {
            correspondence_voxel_mm: 50.0,
            final_voxel_mm: 50.0,
        };
        assert!(FusionParams {
            voxels: bad_voxels,
            ..params()
        }
        .validate()
        .is_err());
    }

    fn two_objects() -> Vec<FrameSegment> {
        vec![
            FrameSegment::new(block([0.0, 0.0, 2000.0], [600.0, 600.0, 600.0], 20.0), 1),
            FrameSegment::new(block([1500.0, 0.0, 2000.0], [400.0, 400.0, 400.0], 20.0), 2),
        ]
    }

    #[test]
    fn first_frame_populates_scene() {
        let mut scene = SceneModel::new(params()).unwrap();
        let segs = two_objects();
        scene.merge_frame(&segs, &Pose::identity()).unwrap();
        assert_eq!(scene.len(), 2);
        for (obj, seg) in scene.objects().iter().zip(&segs) {
            assert_eq!(obj.raw_points, seg.points);
            assert_eq!(obj.class_label, seg.class_label);
        }
        assert_eq!(scene.objects()[0].instance_id, 0);
        assert_eq!(scene.objects()[1].instance_id, 1);
    }

    #[test]
    fn remerging_same_frame_is_idempotent_at_voxel_resolution() {
        let mut scene = SceneModel::new(params()).unwrap();
        let segs = two_objects();
        let pose = Pose::from_euler(0.1, 0.2, 0.3, Vector3::new(10.0, 20.0, 30.0));
        scene.merge_frame(&segs, &pose).unwrap();
        let counts: Vec<usize> = scene.objects().iter().map(|o| o.points.len()).collect();
        let stats = scene.merge_frame(&segs, &pose).unwrap().clone();
        assert_eq!(stats.merges, 2);
        assert_eq!(stats.new_objects, 0);
        assert_eq!(
            scene
                .objects()
                .iter()
                .map(|o| o.points.len())
                .collect::<Vec<_>>(),
            counts
        );
    }

    #[test]
    fn label_gating_blocks_cross_label_merge() {
        let mut scene = SceneModel::new(params()).unwrap();
        let b = block([0.0, 0.0, 2000.0], [400.0, 400.0, 400.0], 20.0);
        scene
            .merge_frame(&[FrameSegment::new(b.clone(), 1)], &Pose::identity())
            .unwrap();
        let st = scene
            .merge_frame(&[FrameSegment::new(b.clone(), 2)], &Pose::identity())
            .unwrap();
        assert_eq!(st.pairs_evaluated, 0);
        assert_eq!(scene.len(), 2);

        let mut ungated = SceneModel::new(FusionParams {
            use_labels: false,
            ..params()
        })
        .unwrap();
        ungated
            .merge_frame(&[FrameSegment::new(b.clone(), 1)], &Pose::identity())
            .unwrap();
        ungated
            .merge_frame(&[FrameSegment::new(b, 2)], &Pose::identity())
            .unwrap();
        assert_eq!(ungated.len(), 1);
        assert_eq!(ungated.objects()[0].class_label, 1);
    }

    #[test]
    fn bridging_segment_merges_objects_and_keeps_oldest_id() {
        let mut scene = SceneModel::new(params()).unwrap();
        let left = block([0.0, 0.0, 2000.0], [400.0, 200.0, 200.0], 20.0);
        let right = block([1000.0, 0.0, 2000.0], [400.0, 200.0, 200.0], 20.0);
        scene
            .merge_frame(
                &[FrameSegment::new(left, 3), FrameSegment::new(right, 3)],
                &Pose::identity(),
            )
            .unwrap();
        assert_eq!(scene.len(), 2);
        let span = block([0.0, 0.0, 2000.0], [1400.0, 200.0, 200.0], 20.0);
        scene
            .merge_frame(&[FrameSegment::new(span, 3)], &Pose::identity())
            .unwrap();
        assert_eq!(scene.len(), 1);
        assert_eq!(scene.objects()[0].instance_id, 0);
    }

    #[test]
    fn tracked_segments_are_replaced_not_merged() {
        let mut scene = SceneModel::new(params()).unwrap();
        let person = |x: f64| FrameSegment {
            points: block([x, 0.0, 2000.0], [200.0, 600.0, 200.0], 20.0),
            class_label: 9,
            track_id: Some(4),
        };
        scene
            .merge_frame(&[person(0.0)], &Pose::identity())
            .unwrap();
        scene
            .merge_frame(&[person(1000.0)], &Pose::identity())
            .unwrap();
        assert_eq!(scene.len(), 1);
        let obj = &scene.objects()[0];
        assert_eq!(obj.track_id, Some(4));
        assert_eq!(obj.frame_last_updated, 1);
        assert!(obj.raw_points.points.iter().all(|p| p.x >= 1000.0));
    }

    #[test]
    fn invariant_points_match_downsampled_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut scene = SceneModel::new(params()).unwrap();
        for f in 0..6 {
            let segs: Vec<FrameSegment> = (0..4)
                .map(|k| {
                    FrameSegment::new(
                        random_cloud(&mut rng, 300, [700.0 * k as f64, 0.0, 2000.0], 250.0),
                        (k % 2) as ClassId + 1,
                    )
                })
                .collect();
            let pose = Pose::from_translation(Vector3::new(5.0 * f as f64, 0.0, 0.0));
            scene.merge_frame(&segs, &pose).unwrap();
            let ids: Vec<_> = scene.objects().iter().map(|o| o.instance_id).collect();
            let mut sorted = ids.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(ids, sorted);
            for o in scene.objects() {
                assert_eq!(o.points, voxel_downsample(&o.raw_points, 50.0).unwrap());
            }
        }
        assert_eq!(scene.len(), 4);
    }

    #[test]
    fn stats_count_gated_and_ungated_work() {
        let mut scene = SceneModel::new(params()).unwrap();
        let segs = two_objects();
        scene.merge_frame(&segs, &Pose::identity()).unwrap();
        let st = scene.merge_frame(&segs, &Pose::identity()).unwrap().clone();
        let c0 = scene.coarse[0].len() as u64;
        let c1 = scene.coarse[1].len() as u64;
        assert_eq!(st.computations_with_labels, c0 * c0 + c1 * c1);
        assert_eq!(st.computations_without_labels, (c0 + c1) * (c0 + c1));
        assert_eq!(st.pairs_evaluated, 2);
        assert_eq!(
            scene.count_distance_computations(&segs, false).unwrap(),
            st.computations_without_labels
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]
            #[test]
            fn overlap_in_unit_interval(
                a in prop::collection::vec((-500.0..500.0f64, -500.0..500.0f64, -500.0..500.0f64), 1..60),
                b in prop::collection::vec((-500.0..500.0f64, -500.0..500.0f64, -500.0..500.0f64), 1..60),
                cutoff in 1.0..2000.0f64,
            ) {
                let a: PointCloud = a.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect();
                let b: PointCloud = b.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect();
                let s = overlap(&a, &b, cutoff).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
