use rand_distr::{Distribution, Normal};

use super::{Frame, Light, CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::rng::seeded;

/// Source coordinates and weights for one output axis of a bilinear resize
/// of the source span `[start, start + len)` onto `out` samples, using
/// pixel-center alignment.
fn axis_taps(start: usize, len: usize, out: usize) -> Vec<(usize, usize, f32)> {
    let scale = len as f64 / out as f64;
    (0..out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            let t = (s - i0 as f64) as f32;
            (start + i0, start + i1, t)
        })
        .collect()
}

fn resample(frame: &Frame, r0: usize, rows: usize, c0: usize, cols: usize, out_h: usize, out_w: usize) -> Frame {
    let ys = axis_taps(r0, rows, out_h);
    let xs = axis_taps(c0, cols, out_w);
    let w = frame.width();
    let src = frame.data();
    let mut out = Vec::with_capacity(out_h * out_w * CHANNELS);
    for &(ya, yb, ty) in &ys {
        for &(xa, xb, tx) in &xs {
            let p00 = (ya * w + xa) * CHANNELS;
            let p01 = (ya * w + xb) * CHANNELS;
            let p10 = (yb * w + xa) * CHANNELS;
            let p11 = (yb * w + xb) * CHANNELS;
            for ch in 0..CHANNELS {
                let top = src[p00 + ch] + (src[p01 + ch] - src[p00 + ch]) * tx;
                let bot = src[p10 + ch] + (src[p11 + ch] - src[p10 + ch]) * tx;
                out.push(top + (bot - top) * ty);
            }
        }
    }
    Frame::new(out_h, out_w, out).expect("resample output length")
}

/// Crops the box (rounded to whole pixels, clamped to the frame) and
/// bilinearly resamples it to `out_size × out_size`.
pub fn crop_resize(frame: &Frame, bbox: &BoundingBox, out_size: usize) -> Result<Frame> {
    if out_size == 0 {
        return Err(Error::InvalidArgument("crop_resize: out_size must be >= 1".into()));
    }
    bbox.validate()?;
    let (h, w) = (frame.height() as f64, frame.width() as f64);
    let x0 = bbox.x.round().clamp(0.0, w);
    let y0 = bbox.y.round().clamp(0.0, h);
    let x1 = (bbox.x + bbox.w).round().clamp(0.0, w);
    let y1 = (bbox.y + bbox.w).round().clamp(0.0, h);
    if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
        return Err(Error::InvalidBox(format!(
            "box {bbox:?} does not cover any pixel of a {}x{} frame",
            frame.height(),
            frame.width()
        )));
    }
    Ok(resample(
        frame,
        y0 as usize,
        (y1 - y0) as usize,
        x0 as usize,
        (x1 - x0) as usize,
        out_size,
        out_size,
    ))
}

/// Bilinear resize of the whole frame.
pub fn resize(frame: &Frame, out_h: usize, out_w: usize) -> Result<Frame> {
    if out_h == 0 || out_w == 0 || frame.height() == 0 || frame.width() == 0 {
        return Err(Error::InvalidArgument("resize: empty frame or output".into()));
    }
    Ok(resample(frame, 0, frame.height(), 0, frame.width(), out_h, out_w))
}

pub fn blur_sigma(kernel_size: usize) -> f64 {
    0.3 * ((kernel_size as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian kernel for an odd `kernel_size >= 3`.
pub fn blur_kernel(kernel_size: usize) -> Result<Vec<f64>> {
    if kernel_size < 3 || kernel_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "blur kernel size must be odd and >= 3, got {kernel_size}"
        )));
    }
    let sigma = blur_sigma(kernel_size);
    let half = (kernel_size / 2) as f64;
    let mut k: Vec<f64> = (0..kernel_size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    Ok(k)
}

/// Mirror index without repeating the edge sample (`gfedcb|abcdefgh|gfedcba`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(frame: &Frame, kernel_size: usize) -> Result<Frame> {
    let k = blur_kernel(kernel_size)?;
    let half = (kernel_size / 2) as isize;
    let (h, w) = (frame.height(), frame.width());
    let src = frame.data();
    let mut tmp = vec![0.0f64; src.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0f64; 3];
            for (t, &kv) in k.iter().enumerate() {
                let cc = reflect(c as isize + t as isize - half, w);
                let p = (r * w + cc) * CHANNELS;
                for ch in 0..CHANNELS {
                    acc[ch] += kv * f64::from(src[p + ch]);
                }
            }
            let o = (r * w + c) * CHANNELS;
            tmp[o..o + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0f64; 3];
            for (t, &kv) in k.iter().enumerate() {
                let rr = reflect(r as isize + t as isize - half, h);
                let p = (rr * w + c) * CHANNELS;
                for ch in 0..CHANNELS {
                    acc[ch] += kv * tmp[p + ch];
                }
            }
            let o = (r * w + c) * CHANNELS;
            for ch in 0..CHANNELS {
                out[o + ch] = (acc[ch] as f32).clamp(0.0, 1.0);
            }
        }
    }
    Frame::new(h, w, out)
}

/// Adds zero-mean Gaussian noise whose variance is given on the 0..255 scale.
pub fn gaussian_noise(frame: &Frame, variance_8bit: f64, seed: u64) -> Result<Frame> {
    if !(variance_8bit >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be >= 0, got {variance_8bit}"
        )));
    }
    if variance_8bit == 0.0 {
        return Ok(frame.clone());
    }
    let std = variance_8bit.sqrt() / 255.0;
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seeded(seed);
    let mut out = frame.clone();
    for v in out.data_mut() {
        let n: f64 = normal.sample(&mut rng);
        *v = (f64::from(*v) + n).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Brightness factor at normalized position `(tx, ty)` in `[0, 1]²`
/// (left to right, top to bottom); positions outside are clamped.
pub fn light_factor(light: Light, strength: f64, tx: f64, ty: f64) -> f32 {
    let t = match light {
        Light::Left => tx,
        Light::Right => 1.0 - tx,
        Light::Above => ty,
    };
    (1.0 - strength * t.clamp(0.0, 1.0)) as f32
}

/// Multiplies by a linear brightness ramp that is 1 on the lit edge and
/// `1 - strength` on the opposite edge.
pub fn relight(frame: &Frame, light: Light, strength: f64) -> Result<Frame> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidArgument(format!(
            "light strength must be in [0, 1], got {strength}"
        )));
    }
    if strength == 0.0 {
        return Ok(frame.clone());
    }
    let (h, w) = (frame.height(), frame.width());
    let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut out = frame.clone();
    for r in 0..h {
        for c in 0..w {
            let f = light_factor(light, strength, frac(c, w), frac(r, h));
            let p = out.pixel(r, c);
            out.set_pixel(r, c, [
                (p[0] * f).clamp(0.0, 1.0),
                (p[1] * f).clamp(0.0, 1.0),
                (p[2] * f).clamp(0.0, 1.0),
            ]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |r, c| {
            let v = ((r * 31 + c * 17) % 97) as f32 / 96.0;
            [v, 1.0 - v, (v * 0.5 + 0.25)]
        })
    }

    #[test]
    fn identity_crop() {
        let f = textured(360, 360);
        let g = crop_resize(&f, &BoundingBox::new(0.0, 0.0, 360.0), 360).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn uniform_frame_stays_uniform() {
        let f = Frame::filled(50, 60, [0.2, 0.4, 0.8]);
        for b in [
            BoundingBox::new(3.3, 7.7, 20.0),
            BoundingBox::new(0.0, 0.0, 50.0),
            BoundingBox::new(40.0, 30.0, 35.0),
        ] {
            let g = crop_resize(&f, &b, 84).unwrap();
            for p in g.data().chunks(3) {
                assert!((p[0] - 0.2).abs() < 1e-6 && (p[1] - 0.4).abs() < 1e-6 && (p[2] - 0.8).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn checker_2x2_to_4x4_matches_hand_weights() {
        // pixel-center alignment puts output samples at source offsets
        // -0.25, 0.25, 0.75, 1.25 which clamp to 0, 0.25, 0.75, 1
        let f = Frame::from_fn(2, 2, |r, c| {
            let v = if (r + c) % 2 == 0 { 1.0 } else { 0.0 };
            [v, v, v]
        });
        let g = crop_resize(&f, &BoundingBox::new(0.0, 0.0, 2.0), 4).unwrap();
        let t = [0.0f32, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                let (ty, tx) = (t[i], t[j]);
                // corners: (0,0)=1 (0,1)=0 (1,0)=0 (1,1)=1
                let expect = (1.0 - ty) * (1.0 - tx) + ty * tx;
                assert!((g.get(i, j, 0) - expect).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn box_outside_frame_is_an_error() {
        let f = textured(10, 10);
        assert!(crop_resize(&f, &BoundingBox::new(20.0, 20.0, 5.0), 4).is_err());
        assert!(crop_resize(&f, &BoundingBox::new(0.0, 0.0, 5.0), 0).is_err());
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let f = Frame::filled(40, 30, [0.3, 0.6, 0.9]);
        for k in [3, 7, 15] {
            let g = gaussian_blur(&f, k).unwrap();
            for (a, b) in f.data().iter().zip(g.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_kernel_normalized_and_sigma_heuristic() {
        let k = blur_kernel(7).unwrap();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((blur_sigma(7) - 1.4).abs() < 1e-12);
        assert!((blur_sigma(15) - 2.6).abs() < 1e-12);
        assert!(blur_kernel(8).is_err());
        assert!(blur_kernel(1).is_err());
        assert!(gaussian_blur(&textured(5, 5), 4).is_err());
    }

    #[test]
    fn blur_single_pixel_matches_dense_convolution() {
        let n = 21;
        let mut f = Frame::zeros(n, n);
        f.set_pixel(10, 10, [1.0, 0.5, 0.25]);
        let k = blur_kernel(7).unwrap();
        let g = gaussian_blur(&f, 7).unwrap();
        // dense 2-D convolution with the outer-product kernel
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for i in 0..7 {
                    for j in 0..7 {
                        let (sr, sc) = (r as isize + i as isize - 3, c as isize + j as isize - 3);
                        if sr == 10 && sc == 10 {
                            acc += k[i] * k[j];
                        }
                    }
                }
                assert!((f64::from(g.get(r, c, 0)) - acc).abs() < 1e-6);
                assert!((f64::from(g.get(r, c, 1)) - 0.5 * acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_preserves_mean() {
        let f = textured(64, 48);
        for k in [7, 15] {
            let g = gaussian_blur(&f, k).unwrap();
            let (a, b) = (f.mean(), g.mean());
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() < 1e-3, "k={k} ch={ch}");
            }
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(-9, 3), 1);
        assert_eq!(reflect(4, 1), 0);
    }

    #[test]
    fn noise_zero_variance_and_determinism() {
        let f = textured(20, 20);
        assert_eq!(gaussian_noise(&f, 0.0, 3).unwrap(), f);
        let a = gaussian_noise(&f, 10.0, 3).unwrap();
        let b = gaussian_noise(&f, 10.0, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gaussian_noise(&f, 10.0, 4).unwrap());
        assert!(gaussian_noise(&f, -1.0, 3).is_err());
    }

    #[test]
    fn noise_std_matches_variance() {
        let f = Frame::filled(360, 360, [0.5; 3]);
        let g = gaussian_noise(&f, 10.0, 11).unwrap();
        for ch in 0..3 {
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for p in 0..360 * 360 {
                let d = f64::from(g.data()[p * 3 + ch]) - 0.5;
                s += d;
                s2 += d * d;
                n += 1.0;
            }
            let var = s2 / n - (s / n).powi(2);
            let expect = 10f64.sqrt() / 255.0;
            assert!((var.sqrt() - expect).abs() / expect < 0.10);
        }
    }

    #[test]
    fn relight_ramp() {
        let f = Frame::filled(10, 11, [0.8; 3]);
        assert_eq!(relight(&f, Light::Left, 0.0).unwrap(), f);
        let s = 0.4;
        let g = relight(&f, Light::Left, s).unwrap();
        for r in 0..10 {
            for c in 0..11 {
                let expect = 0.8 * (1.0 - s * c as f64 / 10.0);
                assert!((f64::from(g.get(r, c, 0)) - expect).abs() < 1e-6);
            }
        }
        let right = relight(&f, Light::Right, s).unwrap();
        assert!(right.get(0, 10, 0) > right.get(0, 0, 0));
        let above = relight(&f, Light::Above, s).unwrap();
        let top = above.mean_rect(0, 1, 0, 11)[0];
        for r in 1..10 {
            assert!(above.mean_rect(r, r + 1, 0, 11)[0] < top);
        }
        assert!(relight(&f, Light::Above, 1.5).is_err());
    }
}
