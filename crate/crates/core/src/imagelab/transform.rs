use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::resample::{blur, blur_adjoint, SamplingPlan};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    /// Multiply every channel by `parameter`.
    Brightness,
    /// Blend toward the mean luminance: `p * x + (1 - p) * mean`.
    Contrast,
    /// Rotate hue in HSV space by `parameter` turns.
    Hue,
    /// Gaussian blur with standard deviation `parameter` pixels.
    Blur,
    /// Counter-clockwise rotation by `parameter` degrees, black fill.
    Rotate,
    /// Keep the centered window whose area is `parameter` of the original.
    CenterCrop,
    /// Bilinear rescale so the area becomes `parameter` of the original.
    Resize,
    /// Additive N(0, parameter^2) noise, seeded.
    GaussianNoise,
}

/// A transformation applied to query images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    #[serde(default)]
    pub parameter: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, parameter: f64) -> Self {
        TransformSpec {
            kind,
            parameter,
            seed: 0,
        }
    }

    pub fn identity() -> Self {
        Self::new(TransformKind::Identity, 0.0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.parameter;
        if !p.is_finite() {
            return Err(Error::invalid(format!("non-finite parameter for {self}")));
        }
        let ok = match self.kind {
            TransformKind::Brightness | TransformKind::Contrast => p > 0.0,
            TransformKind::CenterCrop | TransformKind::Resize => p > 0.0 && p <= 1.0,
            TransformKind::Blur | TransformKind::GaussianNoise => p >= 0.0,
            TransformKind::Identity | TransformKind::Hue | TransformKind::Rotate => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("parameter out of range for {self}")))
        }
    }

    /// Short label used in reports, e.g. `blur_2` or `contrast_0.5`.
    pub fn label(&self) -> String {
        let name = match self.kind {
            TransformKind::Identity => return "identity".into(),
            TransformKind::Brightness => "brightness",
            TransformKind::Contrast => "contrast",
            TransformKind::Hue => "hue",
            TransformKind::Blur => "blur",
            TransformKind::Rotate => "rotate",
            TransformKind::CenterCrop => "crop",
            TransformKind::Resize => "resize",
            TransformKind::GaussianNoise => "noise",
        };
        format!("{name}_{}", self.parameter)
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn scaled_dims(h: usize, w: usize, area_ratio: f64) -> (usize, usize) {
    let s = area_ratio.sqrt();
    let nh = ((h as f64 * s).round() as usize).max(1);
    let nw = ((w as f64 * s).round() as usize).max(1);
    (nh, nw)
}

/// The linear part of a geometric transform, if any.
fn geometric_plan(h: usize, w: usize, spec: &TransformSpec) -> Result<Option<SamplingPlan>> {
    Ok(match spec.kind {
        TransformKind::Rotate => Some(SamplingPlan::rotate(h, w, spec.parameter)),
        TransformKind::CenterCrop => {
            let (nh, nw) = scaled_dims(h, w, spec.parameter);
            super::image::check_dims(nh, nw)?;
            Some(SamplingPlan::crop(h, w, (h - nh) / 2, (w - nw) / 2, nh, nw))
        }
        TransformKind::Resize => {
            let (nh, nw) = scaled_dims(h, w, spec.parameter);
            super::image::check_dims(nh, nw)?;
            Some(SamplingPlan::resize(h, w, nh, nw))
        }
        _ => None,
    })
}

fn is_exact_identity(spec: &TransformSpec) -> bool {
    let p = spec.parameter;
    match spec.kind {
        TransformKind::Identity => true,
        TransformKind::Brightness | TransformKind::Contrast => p == 1.0,
        TransformKind::Hue => p.fract() == 0.0,
        TransformKind::Blur | TransformKind::GaussianNoise => p == 0.0,
        TransformKind::Rotate => p.rem_euclid(360.0) == 0.0,
        TransformKind::CenterCrop | TransformKind::Resize => p == 1.0,
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Unclamped output of the transform plus its dimensions.
fn forward_raw(image: &Image, spec: &TransformSpec) -> Result<(Vec<f64>, usize, usize)> {
    let (h, w) = (image.height(), image.width());
    let x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let p = spec.parameter;
    let out = match spec.kind {
        TransformKind::Identity => x,
        TransformKind::Brightness => x.iter().map(|v| v * p).collect(),
        TransformKind::Contrast => {
            let mean = mean_luminance(&x);
            x.iter().map(|v| p * v + (1.0 - p) * mean).collect()
        }
        TransformKind::Hue => {
            let mut out = x;
            for px in out.chunks_exact_mut(3) {
                let (hh, s, v) = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
                let (r, g, b) = hsv_to_rgb((hh + p).rem_euclid(1.0), s, v);
                px[0] = r * 255.0;
                px[1] = g * 255.0;
                px[2] = b * 255.0;
            }
            out
        }
        TransformKind::Blur => blur(&x, h, w, 3, p),
        TransformKind::GaussianNoise => {
            let normal = Normal::new(0.0, p).map_err(|e| Error::invalid(e.to_string()))?;
            let mut rng = crate::seed::rng_for(spec.seed, "noise", 0);
            x.iter().map(|v| v + normal.sample(&mut rng)).collect()
        }
        TransformKind::Rotate | TransformKind::CenterCrop | TransformKind::Resize => {
            let plan = geometric_plan(h, w, spec)?.expect("geometric kind");
            let out = plan.apply(&x, 3);
            return Ok((out, plan.out_h, plan.out_w));
        }
    };
    Ok((out, h, w))
}

fn mean_luminance(x: &[f64]) -> f64 {
    let n = x.len() / 3;
    x.chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .sum::<f64>()
        / n as f64
}

/// Applies `spec` to `image`. The output is clamped to `[0, 255]`; identity
/// parameter settings return an exact copy.
pub fn apply_transform(image: &Image, spec: &TransformSpec) -> Result<Image> {
    spec.validate()?;
    if is_exact_identity(spec) {
        return Ok(image.clone());
    }
    let (out, h, w) = forward_raw(image, spec)?;
    Image::from_f64(h, w, &out)
}

/// Vector-Jacobian product of [`apply_transform`]: the gradient of
/// `<apply_transform(image), upstream>` with respect to `image`.
///
/// Clamped output values contribute no gradient. Hue rotation is not
/// differentiable here and is rejected.
pub fn transform_vjp(image: &Image, spec: &TransformSpec, upstream: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if is_exact_identity(spec) {
        if upstream.len() != image.len() {
            return Err(Error::invalid("upstream gradient shape mismatch"));
        }
        return Ok(upstream.to_vec());
    }
    if spec.kind == TransformKind::Hue {
        return Err(Error::invalid("hue rotation has no gradient implementation"));
    }
    let (raw, _, _) = forward_raw(image, spec)?;
    if upstream.len() != raw.len() {
        return Err(Error::invalid("upstream gradient shape mismatch"));
    }
    let g: Vec<f64> = raw
        .iter()
        .zip(upstream)
        .map(|(&r, &u)| if (0.0..=255.0).contains(&r) { u } else { 0.0 })
        .collect();
    let (h, w) = (image.height(), image.width());
    let p = spec.parameter;
    Ok(match spec.kind {
        TransformKind::Brightness => g.iter().map(|v| v * p).collect(),
        TransformKind::Contrast => {
            let total: f64 = g.iter().sum();
            let n = (h * w) as f64;
            g.chunks_exact(3)
                .flat_map(|px| {
                    (0..3).map(move |c| p * px[c] + (1.0 - p) * LUMA[c] * total / n)
                })
                .collect()
        }
        TransformKind::Blur => blur_adjoint(&g, h, w, 3, p),
        TransformKind::Rotate | TransformKind::CenterCrop | TransformKind::Resize => {
            geometric_plan(h, w, spec)?
                .expect("geometric kind")
                .apply_adjoint(&g, 3)
        }
        TransformKind::Identity | TransformKind::GaussianNoise => g,
        TransformKind::Hue => unreachable!(),
    })
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (sector as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagelab::generate_image;
    use rand::{Rng, SeedableRng};

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _, _| rng.random_range(0.0..255.0)).unwrap()
    }

    #[test]
    fn identity_parameters_are_exact() {
        let img = generate_image(3, 0, 32).unwrap();
        let specs = [
            TransformSpec::identity(),
            TransformSpec::new(TransformKind::Brightness, 1.0),
            TransformSpec::new(TransformKind::Contrast, 1.0),
            TransformSpec::new(TransformKind::Hue, 0.0),
            TransformSpec::new(TransformKind::Blur, 0.0),
            TransformSpec::new(TransformKind::Rotate, 0.0),
            TransformSpec::new(TransformKind::CenterCrop, 1.0),
            TransformSpec::new(TransformKind::Resize, 1.0),
            TransformSpec::new(TransformKind::GaussianNoise, 0.0),
        ];
        for spec in specs {
            assert_eq!(apply_transform(&img, &spec).unwrap(), img, "{spec}");
        }
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = random_image(16, 16, 9);
        let spec = TransformSpec::new(TransformKind::Rotate, 90.0);
        let mut out = img.clone();
        for _ in 0..4 {
            out = apply_transform(&out, &spec).unwrap();
        }
        assert_eq!(out, img);
        // a single quarter turn is a permutation, not an identity
        assert_ne!(apply_transform(&img, &spec).unwrap(), img);
    }

    #[test]
    fn blur_matches_dense_convolution() {
        let img = random_image(16, 16, 4);
        let sigma = 2.0;
        let out = apply_transform(&img, &TransformSpec::new(TransformKind::Blur, sigma)).unwrap();
        // dense 2-D oracle with clamped borders
        let r = (3.0f64 * sigma).ceil() as isize;
        let g = |i: isize| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-r..=r).map(g).sum();
        for y in 0..16isize {
            for x in 0..16isize {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let sy = (y + dy).clamp(0, 15) as usize;
                            let sx = (x + dx).clamp(0, 15) as usize;
                            acc += g(dy) * g(dx) / (norm * norm) * img.get(sy, sx, c) as f64;
                        }
                    }
                    let got = out.get(y as usize, x as usize, c) as f64;
                    assert!((got - acc).abs() < 1e-4, "({y},{x},{c}): {got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn brightness_and_contrast_semantics() {
        let img = Image::filled(8, 8, [100.0, 50.0, 20.0]).unwrap();
        let b = apply_transform(&img, &TransformSpec::new(TransformKind::Brightness, 2.0)).unwrap();
        assert_eq!(&b.data()[..3], &[200.0, 100.0, 40.0]);
        let b = apply_transform(&img, &TransformSpec::new(TransformKind::Brightness, 3.0)).unwrap();
        assert_eq!(b.data()[0], 255.0);
        let mean = 0.299 * 100.0 + 0.587 * 50.0 + 0.114 * 20.0;
        let c = apply_transform(&img, &TransformSpec::new(TransformKind::Contrast, 0.5)).unwrap();
        assert!((c.data()[0] as f64 - (50.0 + 0.5 * mean)).abs() < 1e-4);
    }

    #[test]
    fn hue_rotation_by_third_turn_cycles_primaries() {
        let img = Image::filled(8, 8, [255.0, 0.0, 0.0]).unwrap();
        let out = apply_transform(&img, &TransformSpec::new(TransformKind::Hue, 1.0 / 3.0)).unwrap();
        let px = &out.data()[..3];
        assert!(px[0] < 1e-3 && (px[1] - 255.0).abs() < 1e-3 && px[2] < 1e-3, "{px:?}");
    }

    #[test]
    fn geometric_output_sizes() {
        let img = random_image(64, 48, 1);
        let crop = apply_transform(&img, &TransformSpec::new(TransformKind::CenterCrop, 0.5)).unwrap();
        assert_eq!((crop.height(), crop.width()), (45, 34));
        let rs = apply_transform(&img, &TransformSpec::new(TransformKind::Resize, 0.25)).unwrap();
        assert_eq!((rs.height(), rs.width()), (32, 24));
        let rot = apply_transform(&img, &TransformSpec::new(TransformKind::Rotate, 25.0)).unwrap();
        assert_eq!((rot.height(), rot.width()), (64, 48));
        assert!(apply_transform(&img, &TransformSpec::new(TransformKind::CenterCrop, 0.01)).is_err());
    }

    #[test]
    fn crop_keeps_the_center() {
        let img = random_image(20, 20, 2);
        let out = apply_transform(&img, &TransformSpec::new(TransformKind::CenterCrop, 0.25)).unwrap();
        assert_eq!((out.height(), out.width()), (10, 10));
        assert_eq!(out.get(0, 0, 1), img.get(5, 5, 1));
        assert_eq!(out.get(9, 9, 2), img.get(14, 14, 2));
    }

    #[test]
    fn noise_is_seeded() {
        let img = random_image(8, 8, 3);
        let spec = TransformSpec::new(TransformKind::GaussianNoise, 5.0).with_seed(11);
        let a = apply_transform(&img, &spec).unwrap();
        assert_eq!(a, apply_transform(&img, &spec).unwrap());
        assert_ne!(a, apply_transform(&img, &spec.with_seed(12)).unwrap());
    }

    #[test]
    fn rejects_invalid_parameters() {
        let img = random_image(8, 8, 3);
        for spec in [
            TransformSpec::new(TransformKind::Blur, f64::NAN),
            TransformSpec::new(TransformKind::Brightness, 0.0),
            TransformSpec::new(TransformKind::Contrast, -1.0),
            TransformSpec::new(TransformKind::CenterCrop, 1.5),
            TransformSpec::new(TransformKind::Resize, 0.0),
            TransformSpec::new(TransformKind::Blur, -0.1),
            TransformSpec::new(TransformKind::Rotate, f64::INFINITY),
        ] {
            assert!(matches!(apply_transform(&img, &spec), Err(Error::InvalidArgument(_))), "{spec}");
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        // keep values away from the clamp boundaries so the map is linear
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let img = Image::from_fn(12, 12, |_, _, _| rng.random_range(60.0..190.0)).unwrap();
        let specs = [
            TransformSpec::new(TransformKind::Brightness, 1.2),
            TransformSpec::new(TransformKind::Contrast, 0.6),
            TransformSpec::new(TransformKind::Blur, 1.0),
            TransformSpec::new(TransformKind::Rotate, 17.0),
            TransformSpec::new(TransformKind::CenterCrop, 0.6),
            TransformSpec::new(TransformKind::Resize, 0.7),
        ];
        for spec in specs {
            let out = apply_transform(&img, &spec).unwrap();
            let up: Vec<f64> = (0..out.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let grad = transform_vjp(&img, &spec, &up).unwrap();
            let f = |im: &Image| -> f64 {
                let o = apply_transform(im, &spec).unwrap();
                o.data().iter().zip(&up).map(|(&a, &b)| a as f64 * b).sum()
            };
            for &i in &[0usize, 37, 200, 431] {
                let mut plus = img.data().to_vec();
                let mut minus = img.data().to_vec();
                plus[i] += 0.5;
                minus[i] -= 0.5;
                let fd = (f(&Image::new(12, 12, plus).unwrap()) - f(&Image::new(12, 12, minus).unwrap())) / 1.0;
                assert!((fd - grad[i]).abs() < 1e-2 * (1.0 + fd.abs()), "{spec} @ {i}: {fd} vs {}", grad[i]);
            }
        }
        let hue = TransformSpec::new(TransformKind::Hue, 0.2);
        assert!(transform_vjp(&img, &hue, &vec![0.0; img.len()]).is_err());
    }
}
