use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::{Error, Result};

/// PSNR reported for identical images (and the ceiling for near-identical ones).
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub psnr_db: f64,
    pub linf: f64,
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// `10 log10(255^2 / MSE)` with the MSE averaged over pixels and channels,
/// capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub fn linf(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max))
}

pub fn quality(original: &Image, other: &Image) -> Result<QualityStats> {
    Ok(QualityStats {
        psnr_db: psnr(original, other)?,
        linf: linf(original, other)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_pair(seed: u64) -> (Image, Image) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Image::from_fn(9, 11, |_, _, _| rng.random_range(0.0..255.0)).unwrap();
        let b = Image::from_fn(9, 11, |_, _, _| rng.random_range(0.0..255.0)).unwrap();
        (a, b)
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let (a, _) = random_pair(1);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert_eq!(linf(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn uniform_offset_closed_form() {
        let a = Image::filled(8, 8, [100.0; 3]).unwrap();
        let b = Image::filled(8, 8, [116.0; 3]).unwrap();
        let expected = 10.0 * (65025.0f64 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!((psnr(&a, &b).unwrap() - 24.049).abs() < 1e-3);
    }

    #[test]
    fn single_pixel_linf() {
        let a = Image::filled(8, 8, [100.0; 3]).unwrap();
        let mut d = a.data().to_vec();
        d[17] += 3.0;
        let b = Image::new(8, 8, d).unwrap();
        assert_eq!(linf(&a, &b).unwrap(), 3.0);
    }

    #[test]
    fn random_pairs_match_scalar_reference() {
        for seed in 0..5 {
            let (a, b) = random_pair(seed);
            let mut sse = 0.0f64;
            let mut max = 0.0f64;
            for i in 0..a.len() {
                let d = a.data()[i] as f64 - b.data()[i] as f64;
                sse += d * d;
                max = max.max(d.abs());
            }
            let reference = 10.0 * (255.0f64.powi(2) / (sse / a.len() as f64)).log10();
            assert!((psnr(&a, &b).unwrap() - reference).abs() < 1e-6);
            assert_eq!(linf(&a, &b).unwrap(), max);
        }
    }

    #[test]
    fn doubling_perturbation_costs_six_db() {
        let a = Image::filled(8, 8, [128.0; 3]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let delta: Vec<f32> = (0..a.len()).map(|_| rng.random_range(-4.0..4.0)).collect();
        let b1 = Image::new(8, 8, a.data().iter().zip(&delta).map(|(x, d)| x + d).collect()).unwrap();
        let b2 = Image::new(8, 8, a.data().iter().zip(&delta).map(|(x, d)| x + 2.0 * d).collect()).unwrap();
        let diff = psnr(&a, &b1).unwrap() - psnr(&a, &b2).unwrap();
        assert!((diff - 20.0 * 2f64.log10()).abs() < 1e-4, "{diff}");
    }

    #[test]
    fn mismatched_dimensions_error() {
        let a = Image::filled(8, 8, [0.0; 3]).unwrap();
        let b = Image::filled(8, 9, [0.0; 3]).unwrap();
        assert!(psnr(&a, &b).is_err());
        assert!(linf(&a, &b).is_err());
    }
}
