//! Dense optical flow between consecutive depth crops and its adaptation to
//! the motion branch.

mod expansion;
mod farneback;

use std::fs;
use std::path::Path;

use depthpose_tensor::Tensor;

pub use expansion::{polynomial_expansion, PolyExpansion};
pub use farneback::{farneback_flow, FlowField, FlowParams};

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_CLIP_PX: f64 = 8.0;
/// Depth band (mm) around the head center mapped onto the flow input range.
pub const DEPTH_BAND_MM: f64 = 500.0;

/// Maps valid depth into `[0.05, 1]` over a band centered on `center_mm`
/// (nearer is darker); holes stay 0.
pub fn normalize_depth_for_flow(depth: &Image, center_mm: f64) -> Image {
    let lo = center_mm - DEPTH_BAND_MM / 2.0;
    depth.map(|v| {
        if v == 0.0 {
            0.0
        } else {
            0.05 + 0.95 * ((v - lo) / DEPTH_BAND_MM).clamp(0.0, 1.0)
        }
    })
}

/// `[2, rows, cols]` tensor with each component clamped to `+-clip` and
/// divided by `clip`.
pub fn flow_to_branch_input(flow: &FlowField, clip: f64) -> Result<Tensor> {
    if !(clip > 0.0 && clip.is_finite()) {
        return Err(Error::InvalidArgument(format!("flow clip must be positive, got {clip}")));
    }
    let scale = |x: f64| x.clamp(-clip, clip) / clip;
    let data = flow.u.iter().chain(&flow.v).map(|&x| scale(x)).collect();
    Ok(Tensor::new(&[2, flow.rows, flow.cols], data)?)
}

const DUMP_MAGIC: &str = "DPFLOW1";

/// Text header `DPFLOW1\n`, optional `# comment` lines, `<rows> <cols>\n`,
/// then the u plane and the v plane as row-major little-endian f32.
pub fn encode_flow_dump(flow: &FlowField, comment: Option<&str>) -> Vec<u8> {
    let comment = comment.map(|c| format!("# {}\n", c.replace('\n', " "))).unwrap_or_default();
    let mut out = format!("{DUMP_MAGIC}\n{comment}{} {}\n", flow.rows, flow.cols).into_bytes();
    for x in flow.u.iter().chain(&flow.v) {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    out
}

pub fn decode_flow_dump(bytes: &[u8]) -> Result<FlowField> {
    let bad = |m: &str| Error::Data(format!("flow dump: {m}"));
    let mut rest = bytes;
    let mut next_line = || -> Result<&[u8]> {
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        let line = &rest[..end];
        rest = &rest[end + 1..];
        Ok(line)
    };
    if next_line()? != DUMP_MAGIC.as_bytes() {
        return Err(bad("bad magic"));
    }
    let mut dims = next_line()?;
    while dims.starts_with(b"#") {
        dims = next_line()?;
    }
    let dims = std::str::from_utf8(dims).map_err(|_| bad("size line"))?;
    let (rows, cols) = dims
        .split_once(' ')
        .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
        .ok_or_else(|| bad("size line"))?;
    let payload = rest;
    let n = rows * cols;
    if payload.len() != 8 * n {
        return Err(bad(&format!("expected {} payload bytes, found {}", 8 * n, payload.len())));
    }
    let vals: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(FlowField {
        rows,
        cols,
        u: vals[..n].to_vec(),
        v: vals[n..].to_vec(),
    })
}

pub fn write_flow_dump(path: &Path, flow: &FlowField, comment: Option<&str>) -> Result<()> {
    fs::write(path, encode_flow_dump(flow, comment)).map_err(|e| Error::file(path, e))
}

pub fn read_flow_dump(path: &Path) -> Result<FlowField> {
    decode_flow_dump(&fs::read(path).map_err(|e| Error::file(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_input_mapping() {
        let mut f = FlowField::zeros(3, 4);
        let t = flow_to_branch_input(&f, 8.0).unwrap();
        assert_eq!(t.shape(), &[2, 3, 4]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        f.u.iter_mut().for_each(|u| *u = 8.0);
        let t = flow_to_branch_input(&f, 8.0).unwrap();
        assert!(t.data()[..12].iter().all(|&v| v == 1.0));
        assert!(flow_to_branch_input(&f, 0.0).is_err());
        let mut prev = -1.0;
        for k in 0..=20 {
            let mut g = FlowField::zeros(1, 1);
            g.u[0] = k as f64 * 0.5;
            let x = flow_to_branch_input(&g, 8.0).unwrap().data()[0];
            assert!(x >= prev);
            prev = x;
        }
    }

    #[test]
    fn dump_round_trip() {
        let mut f = FlowField::zeros(2, 3);
        f.u[1] = 1.5;
        f.v[5] = -0.25;
        let bytes = encode_flow_dump(&f, None);
        assert!(bytes.starts_with(b"DPFLOW1\n2 3\n"));
        assert_eq!(decode_flow_dump(&bytes).unwrap(), f);
        assert!(decode_flow_dump(&bytes[..bytes.len() - 1]).is_err());
        let tagged = encode_flow_dump(&f, Some("config 0123"));
        assert!(tagged.starts_with(b"DPFLOW1\n# config 0123\n2 3\n"));
        assert_eq!(decode_flow_dump(&tagged).unwrap(), f);
    }

    #[test]
    fn depth_normalization() {
        let img = Image::new(1, 4, vec![0.0, 750.0, 1000.0, 5000.0]).unwrap();
        let n = normalize_depth_for_flow(&img, 1000.0);
        assert_eq!(n.data(), &[0.0, 0.05, 0.05 + 0.95 * 0.5, 1.0]);
    }
}
