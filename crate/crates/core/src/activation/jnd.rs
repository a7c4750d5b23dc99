//! Just-noticeable-difference map: luminance adaptation combined with
//! contrast masking, scaled per channel.

use crate::imagelab::Image;

/// Luma mixing coefficients; the per-channel scales are their inverses.
pub const LUMA_MIX: [f64; 3] = [0.299, 0.587, 0.114];
pub const CHANNEL_SCALE_NUMERATOR: f64 = 0.072;
pub const MASKING_GAIN: f64 = 0.115;
pub const MASKING_ALPHA: f64 = 16.0;
pub const MASKING_BETA: f64 = 26.0;
pub const OVERLAP: f64 = 0.3;
/// Side of the square patch averaged for the background luminance.
pub const BACKGROUND_PATCH: usize = 5;

/// Per-pixel, per-channel JND amplitudes in pixel units, laid out like
/// [`Image`] data.
#[derive(Clone, Debug, PartialEq)]
pub struct JndMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl JndMap {
    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }
}

pub fn channel_scales() -> [f64; 3] {
    LUMA_MIX.map(|m| CHANNEL_SCALE_NUMERATOR / m)
}

pub fn luminance_adaptation(background: f64) -> f64 {
    if background < 127.0 {
        17.0 * (1.0 - (background / 127.0).sqrt())
    } else {
        3.0 * (background - 127.0) / 128.0 + 3.0
    }
}

pub fn contrast_masking(gradient: f64) -> f64 {
    MASKING_GAIN * MASKING_ALPHA * gradient.powf(2.4) / (gradient * gradient + MASKING_BETA * MASKING_BETA)
}

/// Nonlinear additivity of the two effects.
pub fn combine(la: f64, mc: f64) -> f64 {
    la + mc - OVERLAP * la.min(mc)
}

/// Sobel gradient magnitude with edge-clamped borders.
pub fn sobel_magnitude(values: &[f64], height: usize, width: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, height as isize - 1) as usize;
        let xx = x.clamp(0, width as isize - 1) as usize;
        values[yy * width + xx]
    };
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Mean over a centred `BACKGROUND_PATCH²` window with edge-clamped borders.
pub fn background_luminance(values: &[f64], height: usize, width: usize) -> Vec<f64> {
    let r = (BACKGROUND_PATCH / 2) as isize;
    let norm = (BACKGROUND_PATCH * BACKGROUND_PATCH) as f64;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut sum = 0.0;
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, height as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, width as isize - 1) as usize;
                    sum += values[yy * width + xx];
                }
            }
            out.push(sum / norm);
        }
    }
    out
}

/// Luminance-domain map `H` before channel scaling.
pub fn jnd_luma(image: &Image) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let y = image.luminance();
    let grad = sobel_magnitude(&y, h, w);
    let bg = background_luminance(&y, h, w);
    grad.iter()
        .zip(&bg)
        .map(|(&g, &b)| combine(luminance_adaptation(b), contrast_masking(g)))
        .collect()
}

pub fn jnd_map(image: &Image) -> JndMap {
    let scales = channel_scales();
    let data = jnd_luma(image)
        .into_iter()
        .flat_map(|v| scales.map(|s| s * v))
        .collect();
    JndMap {
        height: image.height(),
        width: image.width(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_gray_closed_form() {
        let img = Image::filled(16, 16, [127.0; 3]).unwrap();
        let map = jnd_map(&img);
        let expect = [3.0 * 0.072 / 0.299, 3.0 * 0.072 / 0.587, 3.0 * 0.072 / 0.114];
        for px in map.data.chunks_exact(3) {
            for c in 0..3 {
                assert!((px[c] - expect[c]).abs() < 1e-9);
            }
        }
        assert!((expect[0] - 0.7224).abs() < 1e-4);
    }

    #[test]
    fn black_closed_form() {
        let img = Image::filled(12, 9, [0.0; 3]).unwrap();
        assert!(jnd_luma(&img).iter().all(|&v| (v - 17.0).abs() < 1e-12));
    }

    #[test]
    fn edges_raise_the_threshold() {
        let img = Image::from_fn(16, 16, |_, x, _| if x < 8 { 127.0 } else { 200.0 }).unwrap();
        let h = jnd_luma(&img);
        assert!(h[8 * 16 + 8] > h[8 * 16 + 1]);
        assert!(h.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn masking_is_increasing() {
        let mut prev = contrast_masking(0.0);
        assert_eq!(prev, 0.0);
        for g in 1..500 {
            let v = contrast_masking(g as f64);
            assert!(v > prev);
            prev = v;
        }
    }
}
