//! Raster frames, file I/O, resampling, corruption models and procedural
//! scene synthesis.

mod ops;
mod ppm;
mod scene;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ops::{
    blur_kernel, blur_sigma, crop_resize, gaussian_blur, gaussian_noise, light_factor, relight, resize,
};
pub use ppm::{decode_ppm, encode_ppm, load_frame, load_frame_expect, save_frame};
pub use scene::{
    generate_scene, BackgroundKind, BackgroundSpec, ObjectShape, ObjectSpec, SceneManifest,
    SceneTextures, WorldSpec,
};

pub const CHANNELS: usize = 3;

/// Direction of the dominant light source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Light {
    Left,
    Right,
    Above,
}

impl Light {
    pub const ALL: [Light; 3] = [Light::Left, Light::Right, Light::Above];

    pub fn name(self) -> &'static str {
        match self {
            Light::Left => "left",
            Light::Right => "right",
            Light::Above => "above",
        }
    }

    pub fn parse(s: &str) -> Option<Light> {
        match s {
            "left" => Some(Light::Left),
            "right" => Some(Light::Right),
            "above" => Some(Light::Above),
            _ => None,
        }
    }
}

/// Height × width × RGB raster, row-major with interleaved channels, values
/// in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Frame> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "frame {height}x{width}x3 needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Frame {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Frame {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Frame {
        Frame::filled(height, width, [0.0; 3])
    }

    /// Builds a frame from a per-pixel function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Frame {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Frame {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * CHANNELS + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * CHANNELS + ch] = v;
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Per-channel quantization `round(v * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Frame> {
        Frame::new(
            height,
            width,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    /// Per-channel mean over the pixel rectangle `[r0, r1) × [c0, c1)`.
    pub fn mean_rect(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for r in r0..r1.min(self.height) {
            for c in c0..c1.min(self.width) {
                let p = self.pixel(r, c);
                for k in 0..3 {
                    acc[k] += f64::from(p[k]);
                }
                n += 1;
            }
        }
        if n > 0 {
            for a in &mut acc {
                *a /= n as f64;
            }
        }
        acc
    }

    pub fn mean(&self) -> [f64; 3] {
        self.mean_rect(0, self.height, 0, self.width)
    }

    /// Mean over the three channels of every pixel.
    pub fn mean_luminance(&self) -> f64 {
        let m = self.mean();
        (m[0] + m[1] + m[2]) / 3.0
    }

    /// Draws a one-pixel rectangle outline (clipped to the frame).
    pub fn draw_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [f32; 3]) {
        let (h, w) = (self.height as i64, self.width as i64);
        let mut put = |r: i64, c: i64| {
            if r >= 0 && r < h && c >= 0 && c < w {
                self.set_pixel(r as usize, c as usize, rgb);
            }
        };
        for c in x0..=x1 {
            put(y0, c);
            put(y1, c);
        }
        for r in y0..=y1 {
            put(r, x0);
            put(r, x1);
        }
    }

    /// Places frames side by side; all must share the same height.
    pub fn hstack(frames: &[Frame]) -> Result<Frame> {
        let Some(first) = frames.first() else {
            return Ok(Frame::zeros(0, 0));
        };
        let height = first.height;
        if frames.iter().any(|f| f.height != height) {
            return Err(Error::ShapeMismatch("hstack: frame heights differ".into()));
        }
        let width: usize = frames.iter().map(|f| f.width).sum();
        let mut out = Frame::zeros(height, width);
        let mut offset = 0;
        for f in frames {
            for r in 0..height {
                let src = &f.data[r * f.width * CHANNELS..(r + 1) * f.width * CHANNELS];
                let start = (r * width + offset) * CHANNELS;
                out.data[start..start + src.len()].copy_from_slice(src);
            }
            offset += f.width;
        }
        Ok(out)
    }
}

/// An 8-bit copy of a frame, used where many states must be kept around.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedFrame {
    height: usize,
    width: usize,
    bytes: Vec<u8>,
}

impl PackedFrame {
    pub fn from_frame(frame: &Frame) -> PackedFrame {
        PackedFrame {
            height: frame.height,
            width: frame.width,
            bytes: frame.to_u8(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn to_frame(&self) -> Frame {
        Frame::from_u8(self.height, self.width, &self.bytes).expect("packed frame has a valid length")
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Frame::new(2, 2, vec![0.0; 12]).is_ok());
        assert!(matches!(
            Frame::new(2, 2, vec![0.0; 11]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn hstack_widths_add() {
        let a = Frame::filled(4, 3, [1.0, 0.0, 0.0]);
        let b = Frame::filled(4, 5, [0.0, 1.0, 0.0]);
        let s = Frame::hstack(&[a, b]).unwrap();
        assert_eq!(s.width(), 8);
        assert_eq!(s.pixel(2, 2), [1.0, 0.0, 0.0]);
        assert_eq!(s.pixel(2, 3), [0.0, 1.0, 0.0]);
    }
}
