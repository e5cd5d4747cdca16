//! Binary portable graymap (P5) with 8- or 16-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

fn malformed(path: &Path, msg: impl Into<String>) -> Error {
    Error::Data(format!("{}: {}", path.display(), msg.into()))
}

/// Pixel values must be integers in `0..=maxval`; anything else is rounded
/// and clamped.
pub fn encode(img: &Image, maxval: u16) -> Vec<u8> {
    encode_commented(img, maxval, None)
}

/// As [`encode`], with an optional single-line header comment.
pub fn encode_commented(img: &Image, maxval: u16, comment: Option<&str>) -> Vec<u8> {
    let comment = comment.map(|c| format!("# {}\n", c.replace('\n', " "))).unwrap_or_default();
    let mut out = format!("P5\n{comment}{} {}\n{}\n", img.cols(), img.rows(), maxval).into_bytes();
    let quant = |v: f64| v.round().clamp(0.0, maxval as f64) as u16;
    if maxval < 256 {
        out.extend(img.data().iter().map(|&v| quant(v) as u8));
    } else {
        for &v in img.data() {
            out.extend_from_slice(&quant(v).to_be_bytes());
        }
    }
    out
}

/// Returns the image and its maxval.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Image, u16)> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(malformed(path, "not a binary graymap (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse::<usize>()
            .map_err(|_| malformed(path, format!("bad {what} in header")))
    };
    let cols = num("width")?;
    let rows = num("height")?;
    let maxval = num("maxval")?;
    if cols == 0 || rows == 0 || maxval == 0 || maxval > 65535 {
        return Err(malformed(path, format!("unsupported header {cols}x{rows} maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = rows * cols * bps;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| malformed(path, format!("raster truncated: need {need} bytes")))?;
    let data = if bps == 1 {
        raster.iter().map(|&b| b as f64).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    Ok((Image::new(rows, cols, data)?, maxval as u16))
}

pub fn read(path: &Path) -> Result<(Image, u16)> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, img: &Image, maxval: u16) -> Result<()> {
    write_commented(path, img, maxval, None)
}

pub fn write_commented(path: &Path, img: &Image, maxval: u16, comment: Option<&str>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    fs::write(path, encode_commented(img, maxval, comment)).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_is_big_endian() {
        let img = Image::new(1, 2, vec![258.0, 65535.0]).unwrap();
        let bytes = encode(&img, 65535);
        assert!(bytes.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[1, 2, 255, 255]);
        let (back, maxval) = decode(&bytes, Path::new("t")).unwrap();
        assert_eq!((back, maxval), (img, 65535));
    }

    #[test]
    fn eight_bit_with_comment() {
        let bytes = b"P5\n# made by hand\n3 1\n255\n\x00\x7f\xff";
        let (img, maxval) = decode(bytes, Path::new("t")).unwrap();
        assert_eq!(maxval, 255);
        assert_eq!(img.data(), &[0.0, 127.0, 255.0]);
    }

    #[test]
    fn written_comment_round_trips() {
        let img = Image::new(1, 2, vec![4.0, 9.0]).unwrap();
        let bytes = encode_commented(&img, 255, Some("config abc"));
        assert!(bytes.starts_with(b"P5\n# config abc\n2 1\n255\n"));
        assert_eq!(decode(&bytes, Path::new("t")).unwrap().0, img);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode(b"P2\n1 1\n255\n0", Path::new("t")).is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00", Path::new("t")).is_err());
        assert!(decode(b"P5\n2", Path::new("t")).is_err());
    }
}
