//! Scene exports: one PLY per object, a JSON manifest, and a minimal
//! USD-ASCII scene.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionParams, InstanceId, SceneModel, SegmentedCloud};
use crate::io::write_ply;
use crate::semvote::ClassId;
use crate::tracker::TrackId;

pub const MANIFEST_FILE: &str = "scene_manifest.json";
pub const USDA_FILE: &str = "scene.usda";
pub const OBJECTS_DIR: &str = "objects";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestObject {
    pub instance_id: InstanceId,
    pub label: ClassId,
    pub label_name: String,
    pub track_id: Option<TrackId>,
    pub points: usize,
    pub frame_last_updated: u64,
    pub bbox_min_mm: [f64; 3],
    pub bbox_max_mm: [f64; 3],
    /// Relative to the manifest.
    pub ply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: u64,
    pub fusion: FusionParams,
    pub objects: Vec<ManifestObject>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::file(path, e))
    }
}

pub fn label_name(names: &BTreeMap<ClassId, String>, id: ClassId) -> String {
    names
        .get(&id)
        .cloned()
        .unwrap_or_else(|| format!("class_{id}"))
}

fn ply_name(id: InstanceId) -> String {
    format!("{OBJECTS_DIR}/obj_{id}.ply")
}

fn bounds(obj: &SegmentedCloud) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &obj.points.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

pub fn build_manifest(scene: &SceneModel, names: &BTreeMap<ClassId, String>) -> Manifest {
    let objects = scene
        .objects()
        .iter()
        .map(|o| {
            let (lo, hi) = bounds(o);
            ManifestObject {
                instance_id: o.instance_id,
                label: o.class_label,
                label_name: label_name(names, o.class_label),
                track_id: o.track_id,
                points: o.points.len(),
                frame_last_updated: o.frame_last_updated,
                bbox_min_mm: lo,
                bbox_max_mm: hi,
                ply: ply_name(o.instance_id),
            }
        })
        .collect();
    Manifest {
        frames: scene.frame_count,
        fusion: scene.params,
        objects,
    }
}

fn usda_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// USD-ASCII text: one `Xform` per object named `obj_<instance_id>` holding a
/// `Points` prim in metres, ordered by instance id.
pub fn usda_text(scene: &SceneModel, names: &BTreeMap<ClassId, String>) -> Result<String> {
    if scene.is_empty() {
        return Err(Error::input("cannot export an empty scene"));
    }
    let mut objects: Vec<&SegmentedCloud> = scene.objects().iter().collect();
    objects.sort_by_key(|o| o.instance_id);
    let mut s = String::from("#usda 1.0\n(\n    metersPerUnit = 1\n    upAxis = \"Z\"\n)\n");
    for o in objects {
        let label = usda_string(&label_name(names, o.class_label));
        let _ = write!(
            s,
            "\ndef Xform \"obj_{id}\" (\n    customData = {{\n        string label = {label}\n        int instanceId = {id}\n    }}\n)\n{{\n    custom string label = {label}\n    custom int instanceId = {id}\n\n    def Points \"points\"\n    {{\n        point3f[] points = [",
            id = o.instance_id,
        );
        for (i, p) in o.points.points.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "({}, {}, {})", p.x / 1000.0, p.y / 1000.0, p.z / 1000.0);
        }
        s.push_str("]\n    }\n}\n");
    }
    Ok(s)
}

pub fn export_usda(
    scene: &SceneModel,
    names: &BTreeMap<ClassId, String>,
    path: &Path,
) -> Result<()> {
    let text = usda_text(scene, names)?;
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Files and directories created while exporting; removed again unless
/// [`ExportGuard::commit`] is called.
#[derive(Debug, Default)]
pub struct ExportGuard {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl ExportGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut d = Some(dir);
        while let Some(p) = d {
            if p.as_os_str().is_empty() || p.exists() {
                break;
            }
            missing.push(p.to_path_buf());
            d = p.parent();
        }
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        self.dirs.extend(missing.into_iter().rev());
        Ok(())
    }

    /// Records `path` before `write` runs, so a half-written file is also removed.
    pub fn write(&mut self, path: PathBuf, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        self.files.push(path.clone());
        write(&path)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for ExportGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Writes the PLY set, manifest and USD-ASCII scene under `out_dir`, through `guard`.
pub fn export_scene(
    scene: &SceneModel,
    names: &BTreeMap<ClassId, String>,
    out_dir: &Path,
    guard: &mut ExportGuard,
) -> Result<Manifest> {
    if scene.is_empty() {
        return Err(Error::input("cannot export an empty scene"));
    }
    guard.create_dir(&out_dir.join(OBJECTS_DIR))?;
    for o in scene.objects() {
        let comments = vec![
            format!("instance_id {}", o.instance_id),
            format!(
                "label {} {}",
                o.class_label,
                label_name(names, o.class_label)
            ),
            "units mm".to_string(),
        ];
        guard.write(out_dir.join(ply_name(o.instance_id)), |p| {
            write_ply(p, &o.points, &comments)
        })?;
    }
    let manifest = build_manifest(scene, names);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
    guard.write(out_dir.join(MANIFEST_FILE), |p| {
        fs::write(p, json + "\n").map_err(|e| Error::file(p, e))
    })?;
    guard.write(out_dir.join(USDA_FILE), |p| export_usda(scene, names, p))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FrameSegment;
    use crate::geometry::{Point, PointCloud, Pose};
    use tempfile::tempdir;

    fn scene_of(clouds: Vec<(PointCloud, ClassId)>) -> SceneModel {
        let mut s = SceneModel::new(FusionParams::default()).unwrap();
        let segs: Vec<FrameSegment> = clouds
            .into_iter()
            .map(|(c, l)| FrameSegment::new(c, l))
            .collect();
        s.merge_frame(&segs, &Pose::identity()).unwrap();
        s
    }

    fn blob(x: f64) -> PointCloud {
        (0..5)
            .map(|i| Point::new(x + i as f64 * 60.0, 0.0, 2000.0))
            .collect()
    }

    #[test]
    fn empty_scene_rejected() {
        let s = SceneModel::new(FusionParams::default()).unwrap();
        assert!(matches!(
            usda_text(&s, &BTreeMap::new()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn single_point_in_metres() {
        let s = scene_of(vec![(
            vec![Point::new(1000.0, 0.0, 0.0)].into_iter().collect(),
            3,
        )]);
        let names = BTreeMap::from([(3, "chair".to_string())]);
        let t = usda_text(&s, &names).unwrap();
        assert!(t.starts_with("#usda 1.0\n"));
        assert!(t.contains("def Xform \"obj_0\""));
        assert!(t.contains("point3f[] points = [(1, 0, 0)]"));
        assert!(t.contains("custom string label = \"chair\""));
        assert!(t.contains("custom int instanceId = 0"));
    }

    #[test]
    fn six_nodes_in_id_order() {
        let s = scene_of(
            (0..6)
                .map(|i| (blob(i as f64 * 5000.0), i as ClassId + 1))
                .collect(),
        );
        let t = usda_text(&s, &BTreeMap::new()).unwrap();
        let pos: Vec<usize> = (0..6)
            .map(|i| t.find(&format!("\"obj_{i}\"")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(t.matches("def Xform").count(), 6);
        assert_eq!(t.matches("def Points").count(), 6);
    }

    #[test]
    fn export_writes_consistent_set() {
        let dir = tempdir().unwrap();
        let s = scene_of(vec![(blob(0.0), 1), (blob(9000.0), 2)]);
        let mut g = ExportGuard::new();
        let m = export_scene(&s, &BTreeMap::new(), dir.path(), &mut g).unwrap();
        let files = g.commit();
        assert_eq!(files.len(), 4);
        assert_eq!(m.objects.len(), 2);
        for o in &m.objects {
            let cloud = crate::io::read_ply(&dir.path().join(&o.ply)).unwrap();
            assert_eq!(cloud.len(), o.points);
        }
        assert_eq!(Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
    }

    #[test]
    fn dropped_guard_removes_partial_output() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("out");
        {
            let s = scene_of(vec![(blob(0.0), 1)]);
            let mut g = ExportGuard::new();
            export_scene(&s, &BTreeMap::new(), &out, &mut g).unwrap();
            let _ = g.write(out.join("later.txt"), |_| Err(Error::input("boom")));
        }
        assert!(!out.exists());
    }

    #[test]
    fn label_names_are_escaped() {
        assert_eq!(usda_string("a\"b"), "\"a\\\"b\"");
    }
}
