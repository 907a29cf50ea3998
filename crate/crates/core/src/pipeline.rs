//! The per-frame pipeline: mask voting, actor tracking and scene fusion,
//! followed by exports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FrameData};
use crate::error::{Error, Result};
use crate::export::{export_scene, ExportGuard, Manifest};
use crate::fusion::{FrameSegment, FrameStats, FusionParams, SceneModel};
use crate::geometry::{backproject, CameraIntrinsics, PointCloud};
use crate::io;
use crate::raster::Mask;
use crate::semvote::{combine, overlap_resolve, ClassId, UNLABELED};
use crate::synthdata::NoiseModel;
use crate::tracker::{
    assign_hungarian, bbox_cost, BBox, PcaProjector, TrackId, TrackState, TrackerConfig,
};

pub const FRAME_STATS_FILE: &str = "frame_stats.jsonl";
pub const TRACKS_FILE: &str = "tracks.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModuleFlags {
    pub semvote: bool,
    pub tracker: bool,
    pub fusion: bool,
}

impl Default for ModuleFlags {
    fn default() -> Self {
        ModuleFlags {
            semvote: true,
            tracker: true,
            fusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Overrides the dataset's `intrinsics.txt`.
    pub intrinsics: Option<CameraIntrinsics>,
    pub fusion: FusionParams,
    pub tracker: TrackerConfig,
    /// Overrides the dataset's `projector.txt`.
    pub projector: Option<PathBuf>,
    /// Used by `synth` only.
    pub noise: NoiseModel,
    pub export_dir: Option<PathBuf>,
    pub modules: ModuleFlags,
    /// Segments of this class are dynamic actors routed through the tracker.
    pub human_class_id: Option<ClassId>,
    /// Segments with fewer valid depth pixels are dropped.
    pub min_segment_pixels: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            intrinsics: None,
            fusion: FusionParams::default(),
            tracker: TrackerConfig::new(1.0),
            projector: None,
            noise: NoiseModel::default(),
            export_dir: None,
            modules: ModuleFlags::default(),
            human_class_id: None,
            min_segment_pixels: 20,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = &self.intrinsics {
            k.validate()?;
        }
        self.fusion.validate()?;
        self.tracker.validate()?;
        self.noise.validate()?;
        if self.human_class_id == Some(UNLABELED) {
            return Err(Error::input("human_class_id cannot be the unlabelled id 0"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::input(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Input(m) => Error::file(path, m),
            e => e,
        })
    }
}

/// What happened in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: u64,
    pub segments: usize,
    pub tracked_segments: usize,
    pub dropped_segments: usize,
    /// Track id of every detection, in file order.
    pub track_ids: Option<Vec<TrackId>>,
    pub reset: bool,
    pub reidentified: usize,
    pub created_tracks: usize,
    pub stats: Option<FrameStats>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub scene: SceneModel,
    pub frames: Vec<FrameReport>,
    pub class_names: BTreeMap<ClassId, String>,
}

fn mask_bbox(m: &Mask) -> Option<BBox> {
    let (u0, v0, u1, v1) = m.bbox()?;
    BBox::new(u0 as f64, v0 as f64, u1 as f64 + 1.0, v1 as f64 + 1.0).ok()
}

struct Segment {
    mask: Mask,
    class_id: ClassId,
}

/// Splits a frame into class-labelled masks.
fn segment_masks(frame: &FrameData, semvote: bool) -> Result<Vec<Segment>> {
    match (&frame.masks, &frame.labels) {
        (Some(masks), Some(labels)) if semvote => {
            let voted = combine(labels, &overlap_resolve(masks))?;
            Ok(voted
                .instances
                .into_iter()
                .map(|i| Segment {
                    mask: i.mask,
                    class_id: i.class_id,
                })
                .collect())
        }
        (_, Some(labels)) => {
            let mut by_class: BTreeMap<ClassId, Mask> = BTreeMap::new();
            let (w, h) = labels.data.dims();
            for (px, &c) in labels.data.data().iter().enumerate() {
                if c != UNLABELED {
                    by_class
                        .entry(c)
                        .or_insert_with(|| Mask::filled(w, h, false))
                        .data_mut()[px] = true;
                }
            }
            Ok(by_class
                .into_iter()
                .map(|(class_id, mask)| Segment { mask, class_id })
                .collect())
        }
        (Some(masks), None) => Ok(overlap_resolve(masks)
            .masks()
            .iter()
            .map(|m| Segment {
                mask: m.clone(),
                class_id: UNLABELED,
            })
            .collect()),
        (None, None) => {
            let (w, h) = (frame.depth.width(), frame.depth.height());
            Ok(vec![Segment {
                mask: Mask::filled(w, h, true),
                class_id: UNLABELED,
            }])
        }
    }
}

/// Runs every frame of `dataset` through the pipeline.
pub fn run_pipeline(config: &PipelineConfig, dataset: &Dataset) -> Result<PipelineOutput> {
    config.validate()?;
    let k = config.intrinsics.or(dataset.intrinsics).ok_or_else(|| {
        Error::input("no intrinsics: add intrinsics.txt or set them in the config")
    })?;
    let projector: Option<PcaProjector> =
        match config.projector.as_ref().or(dataset.projector.as_ref()) {
            Some(p) if config.modules.tracker => Some(io::read_projector(p)?),
            _ => None,
        };
    let mut tracker = TrackState::new(config.tracker, projector)?;
    let mut scene = SceneModel::new(config.fusion)?;
    let mut reports = Vec::with_capacity(dataset.frames.len());

    for rec in &dataset.frames {
        let frame = rec.load(&dataset.class_names)?;
        let report = process_frame(config, &k, &frame, &mut tracker, &mut scene)
            .map_err(|e| e.in_frame(rec.index))?;
        log::info!(
            "frame {}: {} segments, {} objects in scene",
            rec.index,
            report.segments,
            scene.len()
        );
        reports.push(report);
    }
    Ok(PipelineOutput {
        scene,
        frames: reports,
        class_names: dataset.class_names.clone(),
    })
}

fn process_frame(
    config: &PipelineConfig,
    k: &CameraIntrinsics,
    frame: &FrameData,
    tracker: &mut TrackState,
    scene: &mut SceneModel,
) -> Result<FrameReport> {
    if (frame.depth.width(), frame.depth.height()) != (k.width, k.height) {
        return Err(Error::input(format!(
            "depth is {}x{}, intrinsics describe {}x{}",
            frame.depth.width(),
            frame.depth.height(),
            k.width,
            k.height
        )));
    }
    let segments = segment_masks(frame, config.modules.semvote)?;

    let mut track_ids = None;
    let mut reset = false;
    let (mut reidentified, mut created_tracks) = (0, 0);
    if let (true, Some(dets)) = (config.modules.tracker, &frame.detections) {
        let out = tracker.step(dets)?;
        reset = out.reset;
        reidentified = out.reidentified.len();
        created_tracks = out.created.len();
        track_ids = Some(out.track_ids);
    }

    // Human segments take the track id of the detection whose box fits best.
    let mut seg_track: Vec<Option<TrackId>> = vec![None; segments.len()];
    let mut dropped = vec![false; segments.len()];
    if let (Some(human), Some(ids), Some(dets)) =
        (config.human_class_id, &track_ids, &frame.detections)
    {
        let humans: Vec<(usize, BBox)> = segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.class_id == human)
            .filter_map(|(i, s)| mask_bbox(&s.mask).map(|b| (i, b)))
            .collect();
        let cost = DMatrix::from_fn(humans.len(), dets.len(), |i, j| {
            bbox_cost(&humans[i].1, &dets[j].bbox)
        });
        let a = assign_hungarian(&cost)?;
        for (i, j) in a.pairs {
            seg_track[humans[i].0] = Some(ids[j]);
        }
        for i in a.unassigned_current {
            log::debug!("human segment {} has no detection; dropped", humans[i].0);
            dropped[humans[i].0] = true;
        }
    }

    let mut frame_segments = Vec::new();
    let mut dropped_segments = 0;
    for (i, seg) in segments.iter().enumerate() {
        let cloud: PointCloud = backproject(&frame.depth, k, Some(&seg.mask))?;
        if dropped[i] || cloud.len() < config.min_segment_pixels.max(1) {
            dropped_segments += 1;
            continue;
        }
        frame_segments.push(FrameSegment {
            points: cloud,
            class_label: seg.class_id,
            track_id: seg_track[i],
        });
    }

    let stats = if config.modules.fusion {
        Some(scene.merge_frame(&frame_segments, &frame.pose)?.clone())
    } else {
        None
    };
    Ok(FrameReport {
        index: frame.index,
        segments: frame_segments.len(),
        tracked_segments: frame_segments
            .iter()
            .filter(|s| s.track_id.is_some())
            .count(),
        dropped_segments,
        track_ids,
        reset,
        reidentified,
        created_tracks,
        stats,
    })
}

/// Writes the scene exports and reports under `out_dir`. Nothing written by
/// this call survives an error.
pub fn write_outputs(output: &PipelineOutput, out_dir: &Path) -> Result<Option<Manifest>> {
    let mut guard = ExportGuard::new();
    guard.create_dir(out_dir)?;
    let manifest = if output.scene.is_empty() {
        None
    } else {
        Some(export_scene(
            &output.scene,
            &output.class_names,
            out_dir,
            &mut guard,
        )?)
    };

    let stats: String = output
        .frames
        .iter()
        .map(|f| serde_json::to_string(f).expect("plain data") + "\n")
        .collect();
    guard.write(out_dir.join(FRAME_STATS_FILE), |p| {
        fs::write(p, stats).map_err(|e| Error::file(p, e))
    })?;

    if output.frames.iter().any(|f| f.track_ids.is_some()) {
        let mut tracks = String::new();
        for f in &output.frames {
            tracks.push_str(&f.index.to_string());
            for id in f.track_ids.iter().flatten() {
                tracks.push_str(&format!(" {id}"));
            }
            tracks.push('\n');
        }
        guard.write(out_dir.join(TRACKS_FILE), |p| {
            fs::write(p, tracks).map_err(|e| Error::file(p, e))
        })?;
    }
    guard.commit();
    Ok(manifest)
}
