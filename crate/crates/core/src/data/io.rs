//! On-disk dataset format.
//!
//! A dataset directory holds `manifest.json` and `scenes.bin`. The record
//! stream starts with the magic `KPDS`, a `u32` format version and a `u64`
//! record count. Each record is a `u32` body length, the body, and the CRC-32
//! of the body. All integers and reals are little-endian; reals are `f64`.
//!
//! Body fields, in order:
//!
//! | field | type |
//! |---|---|
//! | object id, scene index, flags (bit 0: occluded) | 3 × u32 |
//! | seed count `M`, keypoint count `K` | 2 × u32 |
//! | occlusion fraction | f64 |
//! | rotation (row-major), translation, viewpoint | 9 + 3 + 3 f64 |
//! | features | M × 16 f64 |
//! | positions | M × 3 f64 |
//! | segmentation (0 or 1) | M f64 |
//! | offsets | M × K × 3 f64 |

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Matrix3;
use ndarray::{Array2, Array3};

use super::{make_object, Dataset, DatasetManifest, SceneSample};
use crate::geometry::{Pose, Vec3};
use crate::meta::FEATURE_DIM;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "scenes.bin";
const MAGIC: &[u8; 4] = b"KPDS";

fn encode_scene(s: &SceneSample) -> Vec<u8> {
    let (m, k, _) = s.offsets.dim();
    let mut out = Vec::with_capacity(20 + 8 * (16 + m * (FEATURE_DIM + 4 + 3 * k)));
    for v in [
        s.queried_object_id,
        s.scene_index,
        u32::from(s.occluded),
        m as u32,
        k as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    put(s.occlusion_fraction);
    let r = s.gt_pose.rotation();
    for i in 0..3 {
        for j in 0..3 {
            put(r[(i, j)]);
        }
    }
    s.gt_pose.translation().iter().for_each(|&v| put(v));
    s.viewpoint.iter().for_each(|&v| put(v));
    s.features.iter().for_each(|&v| put(v));
    s.positions.iter().for_each(|&v| put(v));
    s.seg.iter().for_each(|&b| put(if b { 1.0 } else { 0.0 }));
    s.offsets.iter().for_each(|&v| put(v));
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    record: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(Some(self.record), "record body is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn decode_scene(body: &[u8], record: usize) -> Result<SceneSample> {
    let mut c = Cursor {
        buf: body,
        pos: 0,
        record,
    };
    let queried_object_id = c.u32()?;
    let scene_index = c.u32()?;
    let flags = c.u32()?;
    let m = c.u32()? as usize;
    let k = c.u32()? as usize;
    let occlusion_fraction = c.f64()?;
    let r = c.f64s(9)?;
    let t = c.f64s(3)?;
    let vp = c.f64s(3)?;
    let gt_pose = Pose::new(Matrix3::from_row_slice(&r), Vec3::from_column_slice(&t))
        .map_err(|e| Error::format(Some(record), format!("invalid pose: {e}")))?;
    let shape_err = |e: ndarray::ShapeError| Error::format(Some(record), e.to_string());
    let features = Array2::from_shape_vec((m, FEATURE_DIM), c.f64s(m * FEATURE_DIM)?).map_err(shape_err)?;
    let positions = Array2::from_shape_vec((m, 3), c.f64s(m * 3)?).map_err(shape_err)?;
    let seg = c
        .f64s(m)?
        .into_iter()
        .map(|v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(Error::format(
                Some(record),
                format!("segmentation label {v} is not 0 or 1"),
            )),
        })
        .collect::<Result<Vec<bool>>>()?;
    let offsets = Array3::from_shape_vec((m, k, 3), c.f64s(m * k * 3)?).map_err(shape_err)?;
    if c.pos != body.len() {
        return Err(Error::format(Some(record), "record body has trailing bytes"));
    }
    Ok(SceneSample {
        queried_object_id,
        scene_index,
        occluded: flags & 1 == 1,
        gt_pose,
        viewpoint: Vec3::from_column_slice(&vp),
        features,
        positions,
        seg,
        offsets,
        occlusion_fraction,
    })
}

/// Writes the manifest and record stream into directory `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    if dataset.manifest.record_count != dataset.scenes.len() {
        return Err(Error::invalid("manifest record count does not match the scenes"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&dataset.manifest).map_err(|e| Error::format(None, e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    let path = dir.join(RECORDS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(&path, e));
    write(MAGIC)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(dataset.scenes.len() as u64).to_le_bytes())?;
    for s in &dataset.scenes {
        let body = encode_scene(s);
        write(&(body.len() as u32).to_le_bytes())?;
        write(&body)?;
        write(&crc32fast::hash(&body).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Reads a dataset directory. Objects are regenerated from their recorded
/// seeds and checked against the manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(None, format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            None,
            format!(
                "manifest version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            ),
        ));
    }

    let path = dir.join(RECORDS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::format(None, "record stream has no valid header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(
            None,
            format!("record stream version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if count != manifest.record_count {
        return Err(Error::format(
            None,
            format!("stream holds {count} records, manifest lists {}", manifest.record_count),
        ));
    }

    let mut pos = 16;
    let mut scenes = Vec::with_capacity(count);
    for record in 0..count {
        let truncated = || Error::format(Some(record), "record is truncated");
        let len_bytes = bytes.get(pos..pos + 4).ok_or_else(truncated)?;
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let body = bytes.get(pos + 4..pos + 4 + len).ok_or_else(truncated)?;
        let crc_bytes = bytes.get(pos + 4 + len..pos + 8 + len).ok_or_else(truncated)?;
        if crc32fast::hash(body) != u32::from_le_bytes(crc_bytes.try_into().unwrap()) {
            return Err(Error::format(Some(record), "checksum mismatch"));
        }
        scenes.push(decode_scene(body, record)?);
        pos += 8 + len;
    }
    if pos != bytes.len() {
        return Err(Error::format(None, "trailing bytes after the last record"));
    }

    let mut objects = Vec::with_capacity(manifest.objects.len());
    for entry in &manifest.objects {
        let obj = make_object(entry.id, entry.family, entry.seed)?;
        if obj.diameter.to_bits() != entry.diameter.to_bits() {
            return Err(Error::format(
                None,
                format!("object {} does not regenerate to its recorded diameter", entry.id),
            ));
        }
        let clean = scenes
            .iter()
            .filter(|s| s.queried_object_id == entry.id && !s.occluded)
            .count();
        let occluded = scenes
            .iter()
            .filter(|s| s.queried_object_id == entry.id && s.occluded)
            .count();
        if clean != entry.clean_scenes || occluded != entry.occluded_scenes {
            return Err(Error::format(
                None,
                format!("object {}: manifest scene counts differ from the records", entry.id),
            ));
        }
        objects.push(obj);
    }
    if let Some((i, s)) = scenes
        .iter()
        .enumerate()
        .find(|(_, s)| !manifest.objects.iter().any(|o| o.id == s.queried_object_id))
    {
        return Err(Error::format(
            Some(i),
            format!("unknown object id {}", s.queried_object_id),
        ));
    }
    Ok(Dataset {
        manifest,
        objects,
        scenes,
    })
}
