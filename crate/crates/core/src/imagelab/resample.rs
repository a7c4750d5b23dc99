//! Linear resampling operators shared by the transform suite and the
//! extractor's input resize. Each operator can be applied forward (gather) or
//! as its exact adjoint (scatter), which is what reverse-mode gradients need.

/// A sparse linear map from an `in_h x in_w` raster to an `out_h x out_w`
/// raster, applied identically to every channel.
#[derive(Clone, Debug)]
pub(crate) struct SamplingPlan {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    offsets: Vec<u32>,
    src: Vec<u32>,
    weight: Vec<f64>,
}

impl SamplingPlan {
    fn build(
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
        mut taps_for: impl FnMut(usize, usize, &mut Vec<(u32, f64)>),
    ) -> Self {
        let mut offsets = Vec::with_capacity(out_h * out_w + 1);
        let mut src = Vec::with_capacity(out_h * out_w * 4);
        let mut weight = Vec::with_capacity(out_h * out_w * 4);
        let mut scratch = Vec::with_capacity(4);
        offsets.push(0);
        for y in 0..out_h {
            for x in 0..out_w {
                scratch.clear();
                taps_for(y, x, &mut scratch);
                for &(s, w) in &scratch {
                    if w != 0.0 {
                        src.push(s);
                        weight.push(w);
                    }
                }
                offsets.push(src.len() as u32);
            }
        }
        SamplingPlan {
            in_h,
            in_w,
            out_h,
            out_w,
            offsets,
            src,
            weight,
        }
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn resize(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        let sy_scale = in_h as f64 / out_h as f64;
        let sx_scale = in_w as f64 / out_w as f64;
        Self::build(in_h, in_w, out_h, out_w, |y, x, taps| {
            let sy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (in_h - 1) as f64);
            let sx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (in_w - 1) as f64);
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(in_h - 1);
            let x1 = (x0 + 1).min(in_w - 1);
            let fy = sy - y0 as f64;
            let fx = sx - x0 as f64;
            taps.push(((y0 * in_w + x0) as u32, (1.0 - fy) * (1.0 - fx)));
            taps.push(((y0 * in_w + x1) as u32, (1.0 - fy) * fx));
            taps.push(((y1 * in_w + x0) as u32, fy * (1.0 - fx)));
            taps.push(((y1 * in_w + x1) as u32, fy * fx));
        })
    }

    /// Counter-clockwise rotation about the image center with bilinear
    /// sampling. Samples falling outside the source read as black.
    pub fn rotate(h: usize, w: usize, degrees: f64) -> Self {
        let (sin, cos) = exact_sin_cos(degrees);
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        Self::build(h, w, h, w, |y, x, taps| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let corners = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x0 + 1.0, (1.0 - fy) * fx),
                (y0 + 1.0, x0, fy * (1.0 - fx)),
                (y0 + 1.0, x0 + 1.0, fy * fx),
            ];
            for (yy, xx, wgt) in corners {
                if yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64 {
                    taps.push(((yy as usize * w + xx as usize) as u32, wgt));
                }
            }
        })
    }

    pub fn crop(in_h: usize, in_w: usize, top: usize, left: usize, out_h: usize, out_w: usize) -> Self {
        Self::build(in_h, in_w, out_h, out_w, |y, x, taps| {
            taps.push((((y + top) * in_w + x + left) as u32, 1.0));
        })
    }

    pub fn apply(&self, input: &[f64], channels: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_h * self.in_w * channels);
        let mut out = vec![0.0; self.out_h * self.out_w * channels];
        for p in 0..self.out_h * self.out_w {
            let (a, b) = (self.offsets[p] as usize, self.offsets[p + 1] as usize);
            let dst = &mut out[p * channels..(p + 1) * channels];
            for t in a..b {
                let s = self.src[t] as usize * channels;
                let w = self.weight[t];
                for c in 0..channels {
                    dst[c] += w * input[s + c];
                }
            }
        }
        out
    }

    pub fn apply_adjoint(&self, upstream: &[f64], channels: usize) -> Vec<f64> {
        debug_assert_eq!(upstream.len(), self.out_h * self.out_w * channels);
        let mut out = vec![0.0; self.in_h * self.in_w * channels];
        for p in 0..self.out_h * self.out_w {
            let (a, b) = (self.offsets[p] as usize, self.offsets[p + 1] as usize);
            let g = &upstream[p * channels..(p + 1) * channels];
            for t in a..b {
                let s = self.src[t] as usize * channels;
                let w = self.weight[t];
                for c in 0..channels {
                    out[s + c] += w * g[c];
                }
            }
        }
        out
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90.
fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let quarter = degrees / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        degrees.to_radians().sin_cos()
    }
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`. `sigma = 0`
/// yields the unit impulse.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with edge clamping on an interleaved raster.
pub(crate) fn blur(input: &[f64], h: usize, w: usize, channels: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; input.len()];
    for y in 0..h {
        for x in 0..w {
            for (i, &kv) in k.iter().enumerate() {
                let sx = clampi(x as isize + i as isize - r, w);
                let s = (y * w + sx) * channels;
                let d = (y * w + x) * channels;
                for c in 0..channels {
                    tmp[d + c] += kv * input[s + c];
                }
            }
        }
    }
    let mut out = vec![0.0; input.len()];
    for y in 0..h {
        for (i, &kv) in k.iter().enumerate() {
            let sy = clampi(y as isize + i as isize - r, h);
            for x in 0..w {
                let s = (sy * w + x) * channels;
                let d = (y * w + x) * channels;
                for c in 0..channels {
                    out[d + c] += kv * tmp[s + c];
                }
            }
        }
    }
    out
}

/// Adjoint of [`blur`].
pub(crate) fn blur_adjoint(upstream: &[f64], h: usize, w: usize, channels: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; upstream.len()];
    for y in 0..h {
        for (i, &kv) in k.iter().enumerate() {
            let sy = clampi(y as isize + i as isize - r, h);
            for x in 0..w {
                let s = (sy * w + x) * channels;
                let d = (y * w + x) * channels;
                for c in 0..channels {
                    tmp[s + c] += kv * upstream[d + c];
                }
            }
        }
    }
    let mut out = vec![0.0; upstream.len()];
    for y in 0..h {
        for x in 0..w {
            for (i, &kv) in k.iter().enumerate() {
                let sx = clampi(x as isize + i as isize - r, w);
                let s = (y * w + sx) * channels;
                let d = (y * w + x) * channels;
                for c in 0..channels {
                    out[s + c] += kv * tmp[d + c];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    // <A x, y> == <x, A^T y> for every operator.
    #[test]
    fn adjoints_satisfy_dot_product_test() {
        let plans = [
            SamplingPlan::resize(13, 11, 8, 9),
            SamplingPlan::resize(8, 9, 17, 20),
            SamplingPlan::rotate(12, 10, 25.0),
            SamplingPlan::crop(12, 10, 2, 3, 8, 5),
        ];
        for (i, plan) in plans.iter().enumerate() {
            let x = random(plan.in_h * plan.in_w * 3, i as u64);
            let y = random(plan.out_h * plan.out_w * 3, 100 + i as u64);
            let lhs = dot(&plan.apply(&x, 3), &y);
            let rhs = dot(&x, &plan.apply_adjoint(&y, 3));
            assert!((lhs - rhs).abs() < 1e-10, "plan {i}: {lhs} vs {rhs}");
        }
        let x = random(11 * 9 * 3, 7);
        let y = random(11 * 9 * 3, 8);
        let lhs = dot(&blur(&x, 11, 9, 3, 1.3), &y);
        let rhs = dot(&x, &blur_adjoint(&y, 11, 9, 3, 1.3));
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn same_size_resize_is_exact_identity() {
        let x = random(10 * 12 * 3, 3);
        assert_eq!(SamplingPlan::resize(10, 12, 10, 12).apply(&x, 3), x);
    }

    #[test]
    fn kernel_is_normalized_and_sized() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }
}
