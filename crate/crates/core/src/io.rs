//! On-disk formats: 16-bit PNG depth and label rasters, 8-bit PNG masks,
//! small text formats for poses, intrinsics, detections and projectors, and
//! binary PLY point clouds.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ColorType, ImageBuffer, Luma};
use nalgebra::{DMatrix, DVector, Matrix4};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, Point, PointCloud, Pose};
use crate::raster::{Mask, Raster};
use crate::semvote::ClassId;
use crate::tracker::{BBox, Detection, PcaProjector, POINTER_DIM};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::file(path, format!("line {line}: '{tok}' is not a finite number")))
}

/// Data lines with their 1-based line numbers; blank lines and `#` comments skipped.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_luma16(path: &Path) -> Result<Raster<u16>> {
    let img = image::open(path).map_err(|e| Error::file(path, e))?;
    if img.color() != ColorType::L16 {
        return Err(Error::file(
            path,
            format!("expected 16-bit greyscale PNG, found {:?}", img.color()),
        ));
    }
    let buf = img.into_luma16();
    let (w, h) = buf.dimensions();
    Raster::from_vec(w as usize, h as usize, buf.into_raw())
}

fn write_luma16(path: &Path, r: &Raster<u16>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(r.width() as u32, r.height() as u32, r.data().to_vec())
            .ok_or_else(|| Error::Internal("raster size mismatch".into()))?;
    buf.save(path).map_err(|e| Error::file(path, e))
}

/// PNG header dimensions without decoding the pixels.
pub fn png_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::file(path, e))?;
    Ok((w as usize, h as usize))
}

/// 16-bit greyscale PNG, one unit per millimetre.
pub fn read_depth_png(path: &Path) -> Result<DepthImage> {
    let r = read_luma16(path)?;
    DepthImage::new(r.map(|&z| z as f32))
}

/// Depths are rounded to whole millimetres; values beyond 65535 mm are stored as invalid.
pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<()> {
    let r = depth.raster().map(|&z| {
        let mm = z.round();
        if mm > u16::MAX as f32 {
            0
        } else {
            mm as u16
        }
    });
    write_luma16(path, &r)
}

/// 16-bit greyscale PNG of class or instance ids.
pub fn read_id_png(path: &Path) -> Result<Raster<u16>> {
    read_luma16(path)
}

pub fn write_id_png(path: &Path, ids: &Raster<u16>) -> Result<()> {
    write_luma16(path, ids)
}

/// 8-bit PNG; any non-zero pixel is inside the mask.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::file(path, e))?;
    let buf = img.into_luma8();
    let (w, h) = buf.dimensions();
    Raster::from_vec(
        w as usize,
        h as usize,
        buf.into_raw().into_iter().map(|p| p != 0).collect(),
    )
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.data()
            .iter()
            .map(|&b| if b { 255 } else { 0 })
            .collect(),
    )
    .ok_or_else(|| Error::Internal("mask size mismatch".into()))?;
    buf.save(path).map_err(|e| Error::file(path, e))
}

/// Four rows of four numbers: the camera-to-world transform.
pub fn read_pose(path: &Path) -> Result<Pose> {
    let text = read_text(path)?;
    let mut vals = Vec::with_capacity(16);
    for (line, l) in data_lines(&text) {
        for tok in l.split_whitespace() {
            vals.push(parse_f64(path, line, tok)?);
        }
    }
    if vals.len() != 16 {
        return Err(Error::file(
            path,
            format!("expected 16 values, found {}", vals.len()),
        ));
    }
    Pose::from_homogeneous(&Matrix4::from_row_slice(&vals)).map_err(|e| Error::file(path, e))
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    let m = pose.to_homogeneous();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

/// `key=value` lines for fx, fy, cx, cy, width and height.
pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = read_text(path)?;
    let mut kv = BTreeMap::new();
    for (line, l) in data_lines(&text) {
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::file(path, format!("line {line}: expected key=value")))?;
        let k = k.trim();
        if !["fx", "fy", "cx", "cy", "width", "height"].contains(&k) {
            return Err(Error::file(path, format!("line {line}: unknown key '{k}'")));
        }
        kv.insert(k.to_string(), (line, v.trim().to_string()));
    }
    let num = |k: &str| -> Result<f64> {
        let (line, v) = kv
            .get(k)
            .ok_or_else(|| Error::file(path, format!("missing key '{k}'")))?;
        parse_f64(path, *line, v)
    };
    let size = |k: &str| -> Result<usize> {
        let v = num(k)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(Error::file(path, format!("{k} must be a positive integer")));
        }
        Ok(v as usize)
    };
    CameraIntrinsics::new(
        num("fx")?,
        num("fy")?,
        num("cx")?,
        num("cy")?,
        size("width")?,
        size("height")?,
    )
    .map_err(|e| Error::file(path, e))
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let s = format!(
        "fx={:?}\nfy={:?}\ncx={:?}\ncy={:?}\nwidth={}\nheight={}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    write_bytes(path, s.as_bytes())
}

/// `id<TAB>name` per line.
pub fn read_class_names(path: &Path) -> Result<BTreeMap<ClassId, String>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (line, l) in data_lines(&text) {
        let (id, name) = l
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::file(path, format!("line {line}: expected '<id> <name>'")))?;
        let id: ClassId = id
            .parse()
            .map_err(|_| Error::file(path, format!("line {line}: bad class id '{id}'")))?;
        if out.insert(id, name.trim().to_string()).is_some() {
            return Err(Error::file(
                path,
                format!("line {line}: class {id} repeated"),
            ));
        }
    }
    Ok(out)
}

pub fn write_class_names(path: &Path, names: &BTreeMap<ClassId, String>) -> Result<()> {
    let s: String = names.iter().map(|(id, n)| format!("{id}\t{n}\n")).collect();
    write_bytes(path, s.as_bytes())
}

/// One detection per line: `x_min y_min x_max y_max` optionally followed by
/// the 256 pointer values.
/// Lines of `frame_idx x_min y_min x_max y_max [256 pointer values]`. Every
/// line must carry `frame_index`.
pub fn read_detections(path: &Path, frame_index: u64) -> Result<Vec<Detection>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line, l) in data_lines(&text) {
        let mut toks = l.split_whitespace();
        let frame = toks.next().unwrap_or_default();
        if frame.parse::<u64>().ok() != Some(frame_index) {
            return Err(Error::file(
                path,
                format!("line {line}: frame index '{frame}' does not match frame {frame_index}"),
            ));
        }
        let vals = toks
            .map(|t| parse_f64(path, line, t))
            .collect::<Result<Vec<_>>>()?;
        let pointer = match vals.len() {
            4 => None,
            n if n == 4 + POINTER_DIM => Some(vals[4..].to_vec()),
            n => {
                return Err(Error::file(
                    path,
                    format!(
                        "line {line}: expected 4 or {} values after the frame index, found {n}",
                        4 + POINTER_DIM
                    ),
                ))
            }
        };
        let bbox = BBox::new(vals[0], vals[1], vals[2], vals[3])
            .map_err(|e| Error::file(path, format!("line {line}: {e}")))?;
        out.push(Detection::new(bbox, pointer, frame_index).map_err(|e| Error::file(path, e))?);
    }
    Ok(out)
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let mut s = String::new();
    for d in dets {
        let b = &d.bbox;
        s.push_str(&format!(
            "{} {:?} {:?} {:?} {:?}",
            d.frame_index, b.x_min, b.y_min, b.x_max, b.y_max
        ));
        if let Some(p) = &d.pointer {
            for v in p {
                s.push_str(&format!(" {v:?}"));
            }
        }
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

/// The mean on the first line, then one line per component.
pub fn read_projector(path: &Path) -> Result<PcaProjector> {
    let text = read_text(path)?;
    let rows = data_lines(&text)
        .map(|(line, l)| {
            l.split_whitespace()
                .map(|t| parse_f64(path, line, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.len() != 4 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::file(
            path,
            "expected 4 rows of equal length (mean + 3 components)",
        ));
    }
    let d = rows[0].len();
    let mean = DVector::from_vec(rows[0].clone());
    let comps = DMatrix::from_fn(3, d, |r, c| rows[r + 1][c]);
    PcaProjector::new(comps, mean).map_err(|e| Error::file(path, e))
}

pub fn write_projector(path: &Path, p: &PcaProjector) -> Result<()> {
    let line = |it: &mut dyn Iterator<Item = f64>| {
        it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ") + "\n"
    };
    let mut s = line(&mut p.mean().iter().copied());
    for r in 0..3 {
        s.push_str(&line(&mut p.components().row(r).iter().copied()));
    }
    write_bytes(path, s.as_bytes())
}

/// Binary little-endian PLY with float32 vertices. `comments` become header
/// comment lines.
pub fn write_ply(path: &Path, cloud: &PointCloud, comments: &[String]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        header.push_str(&format!("comment {c}\n"));
    }
    header.push_str(&format!(
        "element vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    ));
    let io = |e: std::io::Error| Error::file(path, e);
    w.write_all(header.as_bytes()).map_err(io)?;
    for p in &cloud.points {
        for c in [p.x, p.y, p.z] {
            w.write_all(&(c as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a PLY written by [`write_ply`] (binary little-endian or ASCII, float xyz first).
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(f);
    let io = |e: std::io::Error| Error::file(path, e);
    let mut line = String::new();
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io)? == 0 {
            return Err(Error::file(path, "PLY header not terminated"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", f, _] => format = Some(f.to_string()),
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::file(path, "bad vertex count"))?,
                )
            }
            ["element", ..] if count.is_some() => {
                return Err(Error::file(
                    path,
                    "only a single vertex element is supported",
                ))
            }
            ["property", ty, name] if count.is_some() => {
                props.push((ty.to_string(), name.to_string()))
            }
            _ => {}
        }
    }
    let n = count.ok_or_else(|| Error::file(path, "no vertex element"))?;
    if props.len() < 3 || props[..3].iter().map(|p| p.1.as_str()).ne(["x", "y", "z"]) {
        return Err(Error::file(path, "vertex properties must start with x y z"));
    }
    let mut points = Vec::with_capacity(n);
    match format.as_deref() {
        Some("binary_little_endian") => {
            if props.iter().any(|p| p.0 != "float") {
                return Err(Error::file(path, "only float properties are supported"));
            }
            let mut buf = vec![0u8; 4 * props.len()];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(io)?;
                let c =
                    |i: usize| f32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap()) as f64;
                points.push(Point::new(c(0), c(1), c(2)));
            }
        }
        Some("ascii") => {
            let mut rest = String::new();
            r.read_to_string(&mut rest).map_err(io)?;
            let mut lines = rest.lines().filter(|l| !l.trim().is_empty());
            for i in 0..n {
                let l = lines
                    .next()
                    .ok_or_else(|| Error::file(path, format!("vertex {i} missing")))?;
                let v: Vec<f64> = l
                    .split_whitespace()
                    .take(3)
                    .map(|t| parse_f64(path, i + 1, t))
                    .collect::<Result<_>>()?;
                if v.len() < 3 {
                    return Err(Error::file(path, format!("vertex {i} is short")));
                }
                points.push(Point::new(v[0], v[1], v[2]));
            }
        }
        other => {
            return Err(Error::file(
                path,
                format!("unsupported PLY format {other:?}"),
            ))
        }
    }
    PointCloud::new(points).map_err(|e| Error::file(path, e))
}
