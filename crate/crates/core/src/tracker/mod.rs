//! Multi-object tracking across frames.
//!
//! Every frame, current detections are matched to the previous frame's
//! tracks with a Hungarian assignment on bounding-box corner distances. When
//! the detection count grows, the leftovers are compared against the pointer
//! memories of dormant tracks and either re-identified or given a new id.

mod hungarian;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hungarian::{assign_hungarian, Assignment};

pub type TrackId = u64;

/// Length of an object pointer embedding.
pub const POINTER_DIM: usize = 256;

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::input(format!("degenerate bounding box {b:?}")));
        }
        Ok(b)
    }

    pub fn scaled(&self, s: f64) -> Self {
        BBox {
            x_min: self.x_min * s,
            y_min: self.y_min * s,
            x_max: self.x_max * s,
            y_max: self.y_max * s,
        }
    }
}

/// Sum of the distances between the min corners and between the max corners.
pub fn bbox_cost(a: &BBox, b: &BBox) -> f64 {
    (a.x_min - b.x_min).hypot(a.y_min - b.y_min) + (a.x_max - b.x_max).hypot(a.y_max - b.y_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub pointer: Option<Vec<f64>>,
    pub frame_index: u64,
}

impl Detection {
    pub fn new(bbox: BBox, pointer: Option<Vec<f64>>, frame_index: u64) -> Result<Self> {
        if let Some(p) = &pointer {
            if p.len() != POINTER_DIM {
                return Err(Error::input(format!(
                    "object pointer has {} values, expected {POINTER_DIM}",
                    p.len()
                )));
            }
        }
        Ok(Detection {
            bbox,
            pointer,
            frame_index,
        })
    }
}

/// Linear map from pointer space onto a 3-D subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjector {
    components: DMatrix<f64>,
    mean: DVector<f64>,
}

impl PcaProjector {
    /// `components` is 3×D with orthonormal rows, `mean` has length D.
    pub fn new(components: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        if components.nrows() != 3 || components.ncols() != mean.len() {
            return Err(Error::input(format!(
                "projector components are {}x{}, mean has {} entries",
                components.nrows(),
                components.ncols(),
                mean.len()
            )));
        }
        let gram = &components * components.transpose();
        let dev = (gram - DMatrix::<f64>::identity(3, 3)).abs().max();
        if !(dev <= 1e-6) {
            return Err(Error::input(format!(
                "projector rows are not orthonormal (deviation {dev:.3e})"
            )));
        }
        Ok(PcaProjector { components, mean })
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `components · (p − mean)`.
pub fn project_pointer(p: &[f64], proj: &PcaProjector) -> Result<Vector3<f64>> {
    if p.len() != proj.dim() {
        return Err(Error::input(format!(
            "pointer has {} values, projector expects {}",
            p.len(),
            proj.dim()
        )));
    }
    let mut out = Vector3::zeros();
    for (r, o) in out.iter_mut().enumerate() {
        *o = p
            .iter()
            .zip(proj.mean.iter())
            .enumerate()
            .map(|(c, (x, m))| proj.components[(r, c)] * (x - m))
            .sum();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub track_id: TrackId,
    pub last_bbox: BBox,
    pub last_seen_frame: u64,
    /// Most recent projected pointers, oldest first.
    pub pointer_memory: VecDeque<Vector3<f64>>,
    /// Matched in the latest frame. Inactive tracks are dormant.
    pub active: bool,
}

impl TrackedObject {
    /// Smallest distance from `q` to any remembered pointer.
    pub fn memory_distance(&self, q: &Vector3<f64>) -> Option<f64> {
        self.pointer_memory
            .iter()
            .map(|m| (m - q).norm())
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    /// Re-identification succeeds when the projected-pointer distance is below this.
    pub tau: f64,
    /// Pointer memory capacity per track.
    #[serde(default = "default_memory")]
    pub memory: usize,
}

fn default_memory() -> usize {
    8
}

impl TrackerConfig {
    pub fn new(tau: f64) -> Self {
        TrackerConfig {
            tau,
            memory: default_memory(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::input("tracker tau must be > 0"));
        }
        if self.memory == 0 {
            return Err(Error::input(
                "tracker memory must hold at least one pointer",
            ));
        }
        Ok(())
    }
}

/// Outcome of re-identifying one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reid {
    Existing(TrackId),
    New,
}

/// Result of [`TrackState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Box-geometry matching against the tracks active in the previous frame.
    pub assignment: Assignment<TrackId>,
    /// The detection count differs from the previous frame.
    pub reset: bool,
    /// Final track id of every detection, in input order.
    pub track_ids: Vec<TrackId>,
    pub reidentified: Vec<(usize, TrackId)>,
    pub created: Vec<(usize, TrackId)>,
}

#[derive(Debug, Clone)]
pub struct TrackState {
    tracks: Vec<TrackedObject>,
    next_id: TrackId,
    config: TrackerConfig,
    projector: Option<PcaProjector>,
    prev_detection_count: usize,
}

impl TrackState {
    pub fn new(config: TrackerConfig, projector: Option<PcaProjector>) -> Result<Self> {
        config.validate()?;
        Ok(TrackState {
            tracks: Vec::new(),
            next_id: 0,
            config,
            projector,
            prev_detection_count: 0,
        })
    }

    pub fn tracks(&self) -> &[TrackedObject] {
        &self.tracks
    }

    pub fn track(&self, id: TrackId) -> Option<&TrackedObject> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    pub fn next_id(&self) -> TrackId {
        self.next_id
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    pub fn prev_detection_count(&self) -> usize {
        self.prev_detection_count
    }

    fn project(&self, d: &Detection) -> Result<Option<Vector3<f64>>> {
        match (&d.pointer, &self.projector) {
            (Some(p), Some(proj)) => project_pointer(p, proj).map(Some),
            _ => Ok(None),
        }
    }

    /// Matches detections to dormant tracks by closest pointer memory.
    ///
    /// Candidate pairs below `tau` are taken greedily in ascending distance,
    /// each track at most once. Detections without a pointer, or with nothing
    /// close enough, come back as [`Reid::New`].
    pub fn reidentify(&self, unassigned: &[&Detection]) -> Result<Vec<Reid>> {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (di, det) in unassigned.iter().enumerate() {
            let Some(q) = self.project(det)? else {
                continue;
            };
            for (ti, track) in self.tracks.iter().enumerate() {
                if track.active {
                    continue;
                }
                if let Some(d) = track.memory_distance(&q) {
                    if d < self.config.tau {
                        candidates.push((d, di, ti));
                    }
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut out = vec![Reid::New; unassigned.len()];
        let mut taken = vec![false; self.tracks.len()];
        for (_, di, ti) in candidates {
            if out[di] == Reid::New && !taken[ti] {
                out[di] = Reid::Existing(self.tracks[ti].track_id);
                taken[ti] = true;
            }
        }
        Ok(out)
    }

    fn observe(&mut self, track_idx: usize, det: &Detection, q: Option<Vector3<f64>>) {
        let cap = self.config.memory;
        let t = &mut self.tracks[track_idx];
        t.active = true;
        t.last_bbox = det.bbox;
        t.last_seen_frame = det.frame_index;
        if let Some(q) = q {
            t.pointer_memory.push_back(q);
            while t.pointer_memory.len() > cap {
                t.pointer_memory.pop_front();
            }
        }
    }

    /// Advances the tracker by one frame of detections.
    pub fn step(&mut self, detections: &[Detection]) -> Result<StepOutcome> {
        let projected: Vec<Option<Vector3<f64>>> = detections
            .iter()
            .map(|d| self.project(d))
            .collect::<Result<_>>()?;
        let active: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].active)
            .collect();
        let cost = DMatrix::from_fn(detections.len(), active.len(), |i, j| {
            bbox_cost(&detections[i].bbox, &self.tracks[active[j]].last_bbox)
        });
        let geometric = assign_hungarian(&cost)?;

        let count = detections.len();
        let reset = count != self.prev_detection_count;
        let mut track_ids: Vec<Option<TrackId>> = vec![None; count];
        for &(i, j) in &geometric.pairs {
            track_ids[i] = Some(self.tracks[active[j]].track_id);
        }
        for &j in &geometric.unassigned_previous {
            self.tracks[active[j]].active = false;
        }
        for &(i, j) in &geometric.pairs {
            self.observe(active[j], &detections[i], projected[i]);
        }

        let mut reidentified = Vec::new();
        let mut created = Vec::new();
        if !geometric.unassigned_current.is_empty() {
            let leftovers: Vec<&Detection> = geometric
                .unassigned_current
                .iter()
                .map(|&i| &detections[i])
                .collect();
            // Pointer matching only runs when the count grew; otherwise the
            // leftovers (not reachable with a consistent state) start new tracks.
            let reid = if count > self.prev_detection_count {
                self.reidentify(&leftovers)?
            } else {
                vec![Reid::New; leftovers.len()]
            };
            for (&i, r) in geometric.unassigned_current.iter().zip(reid) {
                let id = match r {
                    Reid::Existing(id) => {
                        let ti = self
                            .tracks
                            .iter()
                            .position(|t| t.track_id == id)
                            .ok_or_else(|| Error::Internal(format!("track {id} vanished")))?;
                        self.observe(ti, &detections[i], projected[i]);
                        reidentified.push((i, id));
                        id
                    }
                    Reid::New => {
                        let id = self.next_id;
                        self.next_id += 1;
                        self.tracks.push(TrackedObject {
                            track_id: id,
                            last_bbox: detections[i].bbox,
                            last_seen_frame: detections[i].frame_index,
                            pointer_memory: VecDeque::new(),
                            active: false,
                        });
                        let ti = self.tracks.len() - 1;
                        self.observe(ti, &detections[i], projected[i]);
                        created.push((i, id));
                        id
                    }
                };
                track_ids[i] = Some(id);
            }
        }
        self.prev_detection_count = count;

        let assignment = geometric.map_previous(|j| self.tracks[active[j]].track_id);
        Ok(StepOutcome {
            assignment,
            reset,
            track_ids: track_ids
                .into_iter()
                .map(|t| t.ok_or_else(|| Error::Internal("detection left without a track".into())))
                .collect::<Result<_>>()?,
            reidentified,
            created,
        })
    }
}
