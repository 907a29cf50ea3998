//! Frame-directory datasets.
//!
//! ```text
//! <root>/intrinsics.txt
//! <root>/classes.txt            optional, `id<TAB>name`
//! <root>/projector.txt          optional pointer projector
//! <root>/frames/NNNNNN.depth.png
//! <root>/frames/NNNNNN.pose.txt
//! <root>/frames/NNNNNN.labels.png     optional
//! <root>/frames/NNNNNN.inst.png       optional instance raster
//! <root>/frames/NNNNNN.mask_KK.png    optional class-agnostic masks
//! <root>/frames/NNNNNN.det.txt        optional detections
//! <root>/frames/NNNNNN.time.txt       optional timestamp, seconds
//! ```
//!
//! Other files in `frames/` (RGB images, for instance) are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evalmetrics::fit_pca;
use crate::geometry::{CameraIntrinsics, DepthImage, Pose};
use crate::io;
use crate::semvote::{ClassId, LabelImage, MaskSet, MaskSource};
use crate::synthdata::SceneSpec;
use crate::tracker::Detection;

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const CLASSES_FILE: &str = "classes.txt";
pub const PROJECTOR_FILE: &str = "projector.txt";
pub const FRAMES_DIR: &str = "frames";
pub const TRUTH_DIR: &str = "truth";

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: u64,
    pub depth: PathBuf,
    pub pose: PathBuf,
    pub labels: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    /// Sorted by mask number.
    pub masks: Vec<PathBuf>,
    pub detections: Option<PathBuf>,
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub intrinsics: Option<CameraIntrinsics>,
    pub class_names: BTreeMap<ClassId, String>,
    pub projector: Option<PathBuf>,
    /// Ascending by index.
    pub frames: Vec<FrameRecord>,
}

/// A frame's decoded contents.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub index: u64,
    pub depth: DepthImage,
    pub pose: Pose,
    pub labels: Option<LabelImage>,
    /// Masks from the instance raster or the mask files, whichever is present.
    pub masks: Option<MaskSet>,
    pub detections: Option<Vec<Detection>>,
}

#[derive(Default)]
struct Partial {
    depth: Option<PathBuf>,
    pose: Option<PathBuf>,
    labels: Option<PathBuf>,
    instances: Option<PathBuf>,
    masks: BTreeMap<u32, PathBuf>,
    detections: Option<PathBuf>,
    time: Option<PathBuf>,
}

pub fn frame_file(root: &Path, index: u64, kind: &str) -> PathBuf {
    root.join(FRAMES_DIR).join(format!("{index:06}.{kind}"))
}

/// Scans `dir` and validates every frame's file set and raster dimensions.
pub fn ingest(dir: &Path) -> Result<Dataset> {
    let frames_dir = dir.join(FRAMES_DIR);
    let entries = fs::read_dir(&frames_dir).map_err(|e| Error::file(&frames_dir, e))?;
    let mut partial: BTreeMap<u64, Partial> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::file(&frames_dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some((idx, kind)) = name.split_once('.') else {
            continue;
        };
        let Ok(index) = idx.parse::<u64>() else {
            continue;
        };
        let p = partial.entry(index).or_default();
        match kind {
            "depth.png" => p.depth = Some(path),
            "pose.txt" => p.pose = Some(path),
            "labels.png" => p.labels = Some(path),
            "inst.png" => p.instances = Some(path),
            "det.txt" => p.detections = Some(path),
            "time.txt" => p.time = Some(path),
            k => match k.strip_prefix("mask_").and_then(|r| r.strip_suffix(".png")) {
                Some(n) => {
                    let n: u32 = n.parse().map_err(|_| {
                        Error::file(&path, "mask files are named NNNNNN.mask_<number>.png")
                    })?;
                    p.masks.insert(n, path);
                }
                None => log::debug!("ignoring {}", path.display()),
            },
        }
    }
    partial.retain(|_, p| {
        p.depth.is_some()
            || p.pose.is_some()
            || p.labels.is_some()
            || p.instances.is_some()
            || !p.masks.is_empty()
            || p.detections.is_some()
    });
    if partial.is_empty() {
        return Err(Error::input(format!(
            "no frames found in {}",
            frames_dir.display()
        )));
    }

    let intrinsics_path = dir.join(INTRINSICS_FILE);
    let intrinsics = if intrinsics_path.exists() {
        Some(io::read_intrinsics(&intrinsics_path)?)
    } else {
        None
    };
    let classes_path = dir.join(CLASSES_FILE);
    let class_names = if classes_path.exists() {
        io::read_class_names(&classes_path)?
    } else {
        BTreeMap::new()
    };
    let projector = Some(dir.join(PROJECTOR_FILE)).filter(|p| p.exists());

    let mut frames = Vec::with_capacity(partial.len());
    for (index, p) in partial {
        let rec = build_record(index, p, intrinsics.as_ref()).map_err(|e| e.in_frame(index))?;
        frames.push(rec);
    }
    Ok(Dataset {
        root: dir.to_path_buf(),
        intrinsics,
        class_names,
        projector,
        frames,
    })
}

fn build_record(index: u64, p: Partial, k: Option<&CameraIntrinsics>) -> Result<FrameRecord> {
    let depth = p.depth.ok_or_else(|| Error::input("depth image missing"))?;
    let pose = p.pose.ok_or_else(|| Error::input("pose file missing"))?;
    io::read_pose(&pose)?;
    let dims = io::png_dimensions(&depth)?;
    if let Some(k) = k {
        if dims != (k.width, k.height) {
            return Err(Error::input(format!(
                "depth is {}x{} but the intrinsics describe {}x{}",
                dims.0, dims.1, k.width, k.height
            )));
        }
    }
    let rasters = p.labels.iter().chain(&p.instances).chain(p.masks.values());
    for r in rasters {
        let d = io::png_dimensions(r)?;
        if d != dims {
            return Err(Error::input(format!(
                "{} is {}x{} but the depth image is {}x{}",
                r.display(),
                d.0,
                d.1,
                dims.0,
                dims.1
            )));
        }
    }
    let timestamp = match p.time {
        Some(t) => {
            let s = fs::read_to_string(&t).map_err(|e| Error::file(&t, e))?;
            Some(
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::file(&t, "timestamp is not a number"))?,
            )
        }
        None => None,
    };
    Ok(FrameRecord {
        index,
        depth,
        pose,
        labels: p.labels,
        instances: p.instances,
        masks: p.masks.into_values().collect(),
        detections: p.detections,
        timestamp,
    })
}

impl FrameRecord {
    /// Decodes the frame. Errors carry the frame index.
    pub fn load(&self, class_names: &BTreeMap<ClassId, String>) -> Result<FrameData> {
        self.load_inner(class_names)
            .map_err(|e| e.in_frame(self.index))
    }

    fn load_inner(&self, class_names: &BTreeMap<ClassId, String>) -> Result<FrameData> {
        let depth = io::read_depth_png(&self.depth)?;
        let pose = io::read_pose(&self.pose)?;
        let labels = match &self.labels {
            Some(p) => {
                let raw = io::read_id_png(p)?;
                let mut img = LabelImage::new(raw);
                img.class_names = class_names.clone();
                Some(img)
            }
            None => None,
        };
        let masks = if let Some(p) = &self.instances {
            Some(MaskSet::from_instance_raster(&io::read_id_png(p)?).0)
        } else if !self.masks.is_empty() {
            let m = self
                .masks
                .iter()
                .map(|p| io::read_mask_png(p))
                .collect::<Result<Vec<_>>>()?;
            Some(MaskSet::new(m, MaskSource::MaskBranch)?)
        } else {
            None
        };
        let detections = match &self.detections {
            Some(p) => Some(io::read_detections(p, self.index)?),
            None => None,
        };
        Ok(FrameData {
            index: self.index,
            depth,
            pose,
            labels,
            masks,
            detections,
        })
    }
}

/// What [`write_synth_dataset`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub frames: usize,
    pub detections: usize,
}

/// Surface sample spacing of the ground-truth cloud, mm.
pub const TRUTH_SPACING_MM: f64 = 10.0;

/// Renders every frame of `spec` into the dataset layout, plus ground truth
/// under `truth/`: the spec itself, a dense surface cloud, and per-frame
/// actor indices of each detection line.
pub fn write_synth_dataset(spec: &SceneSpec, dir: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    let frames_dir = dir.join(FRAMES_DIR);
    let truth_dir = dir.join(TRUTH_DIR);
    for d in [&frames_dir, &truth_dir] {
        fs::create_dir_all(d).map_err(|e| Error::file(d, e))?;
    }
    io::write_intrinsics(&dir.join(INTRINSICS_FILE), &spec.intrinsics)?;
    io::write_class_names(&dir.join(CLASSES_FILE), &spec.class_names)?;
    let scene_json = serde_json::to_string_pretty(spec)
        .map_err(|e| Error::Internal(format!("scene spec serialization: {e}")))?;
    let scene_path = truth_dir.join("scene.json");
    fs::write(&scene_path, scene_json + "\n").map_err(|e| Error::file(&scene_path, e))?;
    io::write_ply(
        &truth_dir.join("surface.ply"),
        &spec.ground_truth_cloud(TRUTH_SPACING_MM),
        &[],
    )?;
    if !spec.actors.is_empty() {
        let fit = fit_pca(&spec.projector_training_pointers(200), 3)?;
        io::write_projector(&dir.join(PROJECTOR_FILE), &fit.projector()?)?;
    }

    let mut tracks = String::new();
    let mut detections = 0;
    for f in 0..spec.camera_path.len() as u64 {
        let fr = spec.render_frame(f).map_err(|e| e.in_frame(f))?;
        io::write_depth_png(&frame_file(dir, f, "depth.png"), &fr.depth)?;
        io::write_pose(&frame_file(dir, f, "pose.txt"), &fr.pose)?;
        io::write_id_png(&frame_file(dir, f, "labels.png"), &fr.labels.data)?;
        io::write_id_png(&frame_file(dir, f, "inst.png"), &fr.instances)?;
        if !spec.actors.is_empty() {
            io::write_detections(&frame_file(dir, f, "det.txt"), &fr.detections)?;
        }
        detections += fr.detections.len();
        let ids: Vec<String> = fr.detection_truth.iter().map(|a| a.to_string()).collect();
        tracks.push_str(&format!("{f}"));
        for id in ids {
            tracks.push(' ');
            tracks.push_str(&id);
        }
        tracks.push('\n');
    }
    let tracks_path = truth_dir.join("tracks.txt");
    fs::write(&tracks_path, tracks).map_err(|e| Error::file(&tracks_path, e))?;
    Ok(SynthSummary {
        frames: spec.camera_path.len(),
        detections,
    })
}

/// Reads `truth/scene.json` of a synthetic dataset.
pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let spec: SceneSpec = serde_json::from_str(&text).map_err(|e| Error::file(path, e))?;
    spec.validate().map_err(|e| Error::file(path, e))?;
    Ok(spec)
}

/// Reads `truth/tracks.txt`: actor index of each detection, per frame.
pub fn read_track_truth(path: &Path) -> Result<BTreeMap<u64, Vec<u64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = BTreeMap::new();
    for (i, l) in text.lines().enumerate() {
        let mut toks = l.split_whitespace().map(|t| {
            t.parse::<u64>()
                .map_err(|_| Error::file(path, format!("line {}: bad integer '{t}'", i + 1)))
        });
        let Some(f) = toks.next() else { continue };
        out.insert(f?, toks.collect::<Result<Vec<_>>>()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use tempfile::tempdir;

    fn tiny_spec() -> SceneSpec {
        let mut s = SceneSpec::demo_room(64, 48);
        s.camera_path.truncate(2);
        s
    }

    #[test]
    fn synth_roundtrip() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec();
        let summary = write_synth_dataset(&spec, dir.path()).unwrap();
        assert_eq!(summary.frames, 2);
        let ds = ingest(dir.path()).unwrap();
        assert_eq!(ds.frames.len(), 2);
        assert_eq!(ds.intrinsics, Some(spec.intrinsics));
        assert_eq!(ds.class_names, spec.class_names);
        assert!(ds.projector.is_none());
        for (f, rec) in ds.frames.iter().enumerate() {
            let data = rec.load(&ds.class_names).unwrap();
            let truth = spec.render_frame(f as u64).unwrap();
            let rounded = truth.depth.raster().map(|z| z.round());
            assert_eq!(data.depth.raster(), &rounded);
            assert_eq!(data.labels.unwrap().data, truth.labels.data);
            assert!(
                (data.pose.to_homogeneous() - truth.pose.to_homogeneous())
                    .abs()
                    .max()
                    < 1e-9
            );
            assert!(data.masks.is_some());
        }
        assert_eq!(
            read_scene_spec(&dir.path().join("truth/scene.json")).unwrap(),
            spec
        );
    }

    #[test]
    fn index_gaps_are_sorted() {
        let dir = tempdir().unwrap();
        write_synth_dataset(&tiny_spec(), dir.path()).unwrap();
        for kind in ["depth.png", "pose.txt", "labels.png", "inst.png"] {
            fs::rename(
                frame_file(dir.path(), 1, kind),
                frame_file(dir.path(), 7, kind),
            )
            .unwrap();
            fs::copy(
                frame_file(dir.path(), 7, kind),
                frame_file(dir.path(), 3, kind),
            )
            .unwrap();
        }
        let ds = ingest(dir.path()).unwrap();
        let idx: Vec<u64> = ds.frames.iter().map(|f| f.index).collect();
        assert_eq!(idx, vec![0, 3, 7]);
    }

    #[test]
    fn corrupt_depth_names_frame_and_file() {
        let dir = tempdir().unwrap();
        write_synth_dataset(&tiny_spec(), dir.path()).unwrap();
        fs::write(frame_file(dir.path(), 1, "depth.png"), b"garbage").unwrap();
        let e = ingest(dir.path()).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("frame 1"), "{msg}");
        assert!(msg.contains("000001.depth.png"), "{msg}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn dimension_mismatch_names_frame() {
        let dir = tempdir().unwrap();
        write_synth_dataset(&tiny_spec(), dir.path()).unwrap();
        io::write_id_png(
            &frame_file(dir.path(), 0, "labels.png"),
            &Raster::filled(3, 3, 1),
        )
        .unwrap();
        let msg = ingest(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("frame 0") && msg.contains("3x3"), "{msg}");
    }

    #[test]
    fn missing_pose_and_empty_dataset() {
        let dir = tempdir().unwrap();
        fs::create_dir_all(dir.path().join(FRAMES_DIR)).unwrap();
        assert!(matches!(ingest(dir.path()), Err(Error::Input(_))));
        write_synth_dataset(&tiny_spec(), dir.path()).unwrap();
        fs::remove_file(frame_file(dir.path(), 0, "pose.txt")).unwrap();
        assert!(ingest(dir.path()).unwrap_err().to_string().contains("pose"));
    }

    #[test]
    fn mask_files_are_loaded_in_order() {
        let dir = tempdir().unwrap();
        write_synth_dataset(&tiny_spec(), dir.path()).unwrap();
        fs::remove_file(frame_file(dir.path(), 0, "inst.png")).unwrap();
        let a = Raster::from_fn(64, 48, |u, _| u < 10);
        let b = Raster::from_fn(64, 48, |u, _| u > 50);
        io::write_mask_png(&frame_file(dir.path(), 0, "mask_10.png"), &b).unwrap();
        io::write_mask_png(&frame_file(dir.path(), 0, "mask_2.png"), &a).unwrap();
        fs::write(frame_file(dir.path(), 0, "rgb.jpg"), b"ignored").unwrap();
        let ds = ingest(dir.path()).unwrap();
        let data = ds.frames[0].load(&ds.class_names).unwrap();
        let masks = data.masks.unwrap();
        assert_eq!(masks.masks(), &[a, b]);
        assert_eq!(masks.source, MaskSource::MaskBranch);
    }
}
