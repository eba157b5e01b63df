//! Binary PPM (P6, maxval 255) reading and writing. PNG is available behind
//! the `png` feature.

use std::fs;
use std::path::Path;

use super::{quantize, Frame};
use crate::error::{Error, Result};

const PNG_MAGIC: &[u8] = b"\x89PNG";

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.reserve(frame.data().len());
    out.extend(frame.data().iter().map(|&v| quantize(v)));
    out
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::CorruptImage("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CorruptImage(format!("bad {what} in header")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::UnsupportedFormat(format!(
            "expected binary PPM (P6), found {:?}",
            String::from_utf8_lossy(&magic[..magic.len().min(4)])
        )));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PPM maxval {maxval}, only 255 supported")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() {
        return Err(Error::CorruptImage("truncated header".into()));
    }
    pos += 1;
    let need = width * height * 3;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::CorruptImage(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    Frame::from_u8(height, width, &payload[..need])
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<Frame> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::CorruptImage(e.to_string()))?
        .to_rgb8();
    Frame::from_u8(img.height() as usize, img.width() as usize, img.as_raw())
}

#[cfg(not(feature = "png"))]
fn decode_png(_bytes: &[u8]) -> Result<Frame> {
    Err(Error::UnsupportedFormat("PNG support requires the `png` feature".into()))
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(PNG_MAGIC) {
        decode_png(&bytes)
    } else {
        decode_ppm(&bytes)
    }
}

/// Loads a frame and checks it has the declared dimensions.
pub fn load_frame_expect(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Frame> {
    let frame = load_frame(path)?;
    if frame.height() != height || frame.width() != width {
        return Err(Error::ShapeMismatch(format!(
            "image is {}x{}, expected {height}x{width}",
            frame.height(),
            frame.width()
        )));
    }
    Ok(frame)
}

/// Writes a frame; the format follows the extension (`.png` needs the `png`
/// feature, everything else is written as P6).
pub fn save_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(frame)? } else { encode_ppm(frame) };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(feature = "png")]
fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let img = image::RgbImage::from_raw(frame.width() as u32, frame.height() as u32, frame.to_u8())
        .ok_or_else(|| Error::ShapeMismatch("png encode".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    Ok(out.into_inner())
}

#[cfg(not(feature = "png"))]
fn encode_png(_frame: &Frame) -> Result<Vec<u8>> {
    Err(Error::UnsupportedFormat("PNG support requires the `png` feature".into()))
}
