//! Best-effort import of the Biwi Kinect head pose layout:
//! `<root>/<NN>/depth.cal` and `<root>/<NN>/frame_<FFFFF>_{depth.bin,pose.txt}`.
//!
//! The run-length depth layout decoded here (i32 width, i32 height, then
//! repeated `i32 empty, i32 full, full x i16`) follows the public reference
//! reader; results are checked against the announced 640x480 size and the
//! calibration and rejected loudly otherwise.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::canonical::{Dataset, DatasetMeta};
use super::sample::{Sample, SampleKey};
use crate::error::{Error, Result};
use crate::geometry::{camera_rotation_to_pose, CameraIntrinsics};
use crate::image::Image;

pub const BIWI_COLS: usize = 640;
pub const BIWI_ROWS: usize = 480;

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Data(format!("{}: {}", path.display(), msg.into()))
}

fn read_i32(bytes: &[u8], pos: &mut usize) -> Option<i32> {
    let v = bytes.get(*pos..*pos + 4)?;
    *pos += 4;
    Some(i32::from_le_bytes(v.try_into().ok()?))
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut pos = 0;
    let cols = read_i32(bytes, &mut pos).ok_or_else(|| bad(path, "missing width"))?;
    let rows = read_i32(bytes, &mut pos).ok_or_else(|| bad(path, "missing height"))?;
    if cols as usize != BIWI_COLS || rows as usize != BIWI_ROWS {
        return Err(bad(path, format!("decoded size {cols}x{rows}, expected {BIWI_COLS}x{BIWI_ROWS}")));
    }
    let n = BIWI_COLS * BIWI_ROWS;
    let mut data = vec![0.0; n];
    let mut p = 0usize;
    while p < n {
        let empty = read_i32(bytes, &mut pos).ok_or_else(|| bad(path, "truncated run header"))?;
        let full = read_i32(bytes, &mut pos).ok_or_else(|| bad(path, "truncated run header"))?;
        if empty < 0 || full < 0 || p + empty as usize + full as usize > n {
            return Err(bad(path, format!("run ({empty}, {full}) overflows the frame at pixel {p}")));
        }
        p += empty as usize;
        for _ in 0..full {
            let v = bytes.get(pos..pos + 2).ok_or_else(|| bad(path, "truncated run data"))?;
            data[p] = i16::from_le_bytes([v[0], v[1]]).max(0) as f64;
            pos += 2;
            p += 1;
        }
    }
    if pos != bytes.len() {
        return Err(bad(path, format!("{} trailing bytes", bytes.len() - pos)));
    }
    Image::new(BIWI_ROWS, BIWI_COLS, data)
}

fn numbers(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| bad(path, format!("non-numeric token `{t}`"))))
        .collect()
}

/// Intrinsics and principal point from the first three rows of `depth.cal`.
pub fn read_calibration(path: &Path) -> Result<(CameraIntrinsics, (f64, f64))> {
    let v = numbers(path)?;
    if v.len() < 9 {
        return Err(bad(path, "calibration needs a 3x3 intrinsic matrix"));
    }
    let (fx, fy, ppx, ppy) = (v[0], v[4], v[2], v[5]);
    if !(ppx > 0.0 && ppx < BIWI_COLS as f64 && ppy > 0.0 && ppy < BIWI_ROWS as f64) {
        return Err(bad(path, format!("principal point ({ppx}, {ppy}) outside the 640x480 frame")));
    }
    let intr = CameraIntrinsics::new(fx, fy).map_err(|e| bad(path, e.to_string()))?;
    Ok((intr, (ppx, ppy)))
}

/// Row-major rotation followed by the head center in mm.
pub fn read_pose(path: &Path) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let v = numbers(path)?;
    if v.len() != 12 {
        return Err(bad(path, format!("expected 12 numbers, found {}", v.len())));
    }
    Ok((Matrix3::from_row_slice(&v[..9]), Vector3::new(v[9], v[10], v[11])))
}

/// Converts every numbered sequence folder under `root`. The sequence number
/// is used as the subject too. Frames whose head center projects outside the
/// image are skipped.
pub fn convert_biwi(root: &Path) -> Result<Dataset> {
    let mut folders: Vec<(u32, std::path::PathBuf)> = fs::read_dir(root)
        .map_err(|e| Error::file(root, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let n = name.parse::<u32>().ok()?;
            e.path().is_dir().then_some((n, e.path()))
        })
        .collect();
    folders.sort();
    if folders.is_empty() {
        return Err(bad(root, "no numbered sequence folders"));
    }
    let mut samples = Vec::new();
    for (seq, dir) in folders {
        let (intrinsics, (ppx, ppy)) = read_calibration(&dir.join("depth.cal"))?;
        let mut frames: Vec<u32> = fs::read_dir(&dir)
            .map_err(|e| Error::file(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_prefix("frame_")?.strip_suffix("_depth.bin")?.parse().ok()
            })
            .collect();
        frames.sort_unstable();
        for frame in frames {
            let depth_path = dir.join(format!("frame_{frame:05}_depth.bin"));
            let bytes = fs::read(&depth_path).map_err(|e| Error::file(&depth_path, e))?;
            let depth = decode_depth(&bytes, &depth_path)?;
            let (rot, center) = read_pose(&dir.join(format!("frame_{frame:05}_pose.txt")))?;
            if !(center.z > 0.0) {
                continue;
            }
            let head_center = (ppx + intrinsics.fx * center.x / center.z, ppy + intrinsics.fy * center.y / center.z);
            if !(head_center.0 >= 0.0
                && head_center.1 >= 0.0
                && head_center.0 < BIWI_COLS as f64
                && head_center.1 < BIWI_ROWS as f64)
            {
                continue;
            }
            let pose = camera_rotation_to_pose(&rot)?.angles;
            samples.push(Sample {
                id: SampleKey {
                    subject: seq,
                    sequence: seq,
                    frame,
                }
                .id(),
                depth,
                gray: None,
                intrinsics,
                head_center,
                head_depth: center.z,
                pose,
                shoulder: None,
                files: None,
            });
        }
    }
    Dataset::new(
        samples,
        DatasetMeta {
            source: format!("biwi import of {}", root.display()),
            ..DatasetMeta::default()
        },
    )
}
