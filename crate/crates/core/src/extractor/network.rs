use std::ops::Deref;

use rayon::prelude::*;

use super::conv;
use super::weights::{ExtractorWeights, ARCHITECTURE, FEATURE_DIM};
use crate::imagelab::resample::SamplingPlan;
use crate::imagelab::Image;
use crate::{Error, Result};

/// Per-channel input normalization applied after scaling pixels to `[0, 1]`.
const CHANNEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const CHANNEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// A unit-norm embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numeric("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(FeatureVector(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    /// Wraps raw values without renormalizing.
    pub fn from_raw(values: Vec<f32>) -> Self {
        FeatureVector(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// Gradient with respect to every input pixel, laid out like [`Image`] data.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGradient {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    height: usize,
    width: usize,
    resize: Option<SamplingPlan>,
    /// post-tanh activations of the three convolutions (CHW)
    activations: [Vec<f64>; 3],
    raw_norm: f64,
    feature: Vec<f64>,
}

impl ForwardTape {
    /// The unit-norm output in full precision.
    pub fn feature(&self) -> &[f64] {
        &self.feature
    }
}

impl ExtractorWeights {
    pub fn forward(&self, image: &Image) -> Result<ForwardTape> {
        let (h, w) = (image.height(), image.width());
        let res = self.input_resolution();
        let pixels: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
        let (resize, pixels) = if (h, w) == (res, res) {
            (None, pixels)
        } else {
            let plan = SamplingPlan::resize(h, w, res, res);
            let resized = plan.apply(&pixels, 3);
            (Some(plan), resized)
        };

        let n = res * res;
        let mut x = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                x[c * n + p] = (pixels[p * 3 + c] / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
            }
        }

        let mut size = res;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(3);
        for (i, layer) in ARCHITECTURE[..3].iter().enumerate() {
            let (wt, b) = self.layer(i);
            let mut z = conv::forward(&x, size, layer, wt, b);
            z.iter_mut().for_each(|v| *v = v.tanh());
            size = conv::out_size(size, layer);
            x = z.clone();
            acts.push(z);
        }

        let spatial = size * size;
        let pooled: Vec<f64> = x.chunks_exact(spatial).map(|ch| ch.iter().sum::<f64>() / spatial as f64).collect();
        let (fw, fb) = self.layer(3);
        let raw: Vec<f64> = (0..FEATURE_DIM)
            .map(|o| fb[o] + fw[o * pooled.len()..(o + 1) * pooled.len()].iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(raw_norm.is_finite() && raw_norm > 0.0) {
            return Err(Error::Internal(format!("degenerate pre-normalization feature (norm {raw_norm})")));
        }
        let feature: Vec<f64> = raw.iter().map(|v| v / raw_norm).collect();
        let [a1, a2, a3]: [Vec<f64>; 3] = acts.try_into().expect("three conv layers");
        Ok(ForwardTape {
            height: h,
            width: w,
            resize,
            activations: [a1, a2, a3],
            raw_norm,
            feature,
        })
    }

    pub fn extract(&self, image: &Image) -> Result<FeatureVector> {
        let tape = self.forward(image)?;
        Ok(FeatureVector(tape.feature.iter().map(|&v| v as f32).collect()))
    }

    /// Extracts every image in parallel; output order matches input order.
    pub fn extract_batch(&self, images: &[Image]) -> Result<Vec<FeatureVector>> {
        images.par_iter().map(|im| self.extract(im)).collect()
    }

    /// Gradient of `<f(image), upstream>` with respect to the pixels of the
    /// image the tape was recorded on.
    pub fn backward_tape(&self, tape: &ForwardTape, upstream: &[f64]) -> Result<PixelGradient> {
        if upstream.len() != FEATURE_DIM {
            return Err(Error::invalid(format!(
                "upstream gradient has {} entries, expected {FEATURE_DIM}",
                upstream.len()
            )));
        }
        if upstream.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite upstream gradient".into()));
        }
        // d(x/|x|) = (I - x̂ x̂ᵀ) / |x|
        let f = &tape.feature;
        let radial: f64 = f.iter().zip(upstream).map(|(a, b)| a * b).sum();
        let g_raw: Vec<f64> = upstream.iter().zip(f).map(|(g, v)| (g - v * radial) / tape.raw_norm).collect();

        let (fw, _) = self.layer(3);
        let channels = ARCHITECTURE[3].in_ch;
        let mut g_pooled = vec![0.0; channels];
        for (o, go) in g_raw.iter().enumerate() {
            for (c, gp) in g_pooled.iter_mut().enumerate() {
                *gp += fw[o * channels + c] * go;
            }
        }

        let res = self.input_resolution();
        let sizes = {
            let s1 = conv::out_size(res, &ARCHITECTURE[0]);
            let s2 = conv::out_size(s1, &ARCHITECTURE[1]);
            [res, s1, s2, conv::out_size(s2, &ARCHITECTURE[2])]
        };
        let spatial = sizes[3] * sizes[3];
        let mut grad: Vec<f64> = g_pooled.iter().flat_map(|&g| std::iter::repeat(g / spatial as f64).take(spatial)).collect();
        for i in (0..3).rev() {
            for (g, a) in grad.iter_mut().zip(&tape.activations[i]) {
                *g *= 1.0 - a * a;
            }
            let (wt, _) = self.layer(i);
            grad = conv::backward_input(&grad, sizes[i], &ARCHITECTURE[i], wt);
        }

        let n = res * res;
        let mut g_pix = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                g_pix[p * 3 + c] = grad[c * n + p] / (255.0 * CHANNEL_STD[c]);
            }
        }
        let data = match &tape.resize {
            Some(plan) => plan.apply_adjoint(&g_pix, 3),
            None => g_pix,
        };
        Ok(PixelGradient {
            height: tape.height,
            width: tape.width,
            data,
        })
    }

    pub fn backward(&self, image: &Image, upstream: &[f64]) -> Result<PixelGradient> {
        let tape = self.forward(image)?;
        self.backward_tape(&tape, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagelab::generate_image;
    use rand::{Rng, SeedableRng};

    #[test]
    fn output_is_unit_norm_and_pure() {
        let w = ExtractorWeights::init(1);
        for i in 0..4 {
            let img = generate_image(2, i, 48).unwrap();
            let f = w.extract(&img).unwrap();
            let norm: f64 = f.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
            assert_eq!(f, w.extract(&img).unwrap());
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let w = ExtractorWeights::init(1);
        let img = generate_image(2, 0, 64).unwrap();
        let g = w.backward(&img, &[0.0; FEATURE_DIM]).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert!(w.backward(&img, &[0.0; 3]).is_err());
    }

    #[test]
    fn normalization_jacobian_is_tangent() {
        // the gradient w.r.t. the pre-normalized vector has no radial part
        let w = ExtractorWeights::init(4);
        let img = generate_image(1, 3, 64).unwrap();
        let tape = w.forward(&img).unwrap();
        let up = tape.feature().to_vec();
        let g = w.backward_tape(&tape, &up).unwrap();
        assert!(g.data.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn pixels_outside_the_resize_footprint_get_no_gradient() {
        // 256 -> 64 samples source columns 4k+1 and 4k+2 only
        let w = ExtractorWeights::init_with_resolution(5, 64);
        let img = Image::filled(256, 256, [90.0, 120.0, 60.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let up: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = w.backward(&img, &up).unwrap();
        for y in 0..256 {
            for x in 0..256 {
                let off = matches!(y % 4, 0 | 3) || matches!(x % 4, 0 | 3);
                for c in 0..3 {
                    let v = g.data[(y * 256 + x) * 3 + c];
                    if off {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
        assert!(g.data.iter().any(|&v| v != 0.0));
    }
}
