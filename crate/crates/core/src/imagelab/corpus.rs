//! Deterministic procedural corpus.
//!
//! Each image composites a two-color linear gradient, a blurred multi-octave
//! value-noise texture restricted to a smooth random mask, and a handful of
//! filled shapes. The mask leaves flat areas next to textured ones and the
//! shapes add hard edges, so both ends of the contrast-masking range occur.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::ppm::{read_ppm, write_ppm};
use super::resample::blur;
use crate::seed::{derive_seed, rng_for};
use crate::{Error, Result};

pub const MIN_CORPUS_SIZE: usize = 16;
const GENERATOR: &str = "procedural-v1";
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u32,
    pub file: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub generator: String,
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub images: Vec<ManifestEntry>,
}

pub fn generate_corpus(seed: u64, count: usize, size: usize) -> Result<Vec<Image>> {
    (0..count as u64).map(|i| generate_image(seed, i, size)).collect()
}

/// Generates image `index` of the corpus identified by `seed` without
/// generating its predecessors.
pub fn generate_image(seed: u64, index: u64, size: usize) -> Result<Image> {
    if size < MIN_CORPUS_SIZE {
        return Err(Error::invalid(format!(
            "corpus image size must be at least {MIN_CORPUS_SIZE}, got {size}"
        )));
    }
    let mut rng = rng_for(seed, "corpus", index);
    let n = size * size;
    let mut px = vec![0.0f64; n * 3];

    // gradient background
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = theta.sin_cos();
    let half = size as f64 / 2.0;
    for y in 0..size {
        for x in 0..size {
            let t = (((x as f64 - half) * c + (y as f64 - half) * s) / size as f64 + 0.5).clamp(0.0, 1.0);
            for ch in 0..3 {
                px[(y * size + x) * 3 + ch] = c0[ch] * (1.0 - t) + c1[ch] * t;
            }
        }
    }

    // masked texture
    let amplitude = rng.random_range(15.0..70.0);
    let persistence = rng.random_range(0.45..0.8);
    let base_cells = rng.random_range(3..7usize);
    let mut texture = vec![0.0f64; n * 3];
    for ch in 0..3 {
        let mut amp = 1.0;
        let mut cells = base_cells;
        for _ in 0..4 {
            let layer = value_noise(&mut rng, size, cells);
            for i in 0..n {
                texture[i * 3 + ch] += amp * layer[i];
            }
            amp *= persistence;
            cells *= 2;
        }
    }
    let texture = blur(&texture, size, size, 3, 0.7);
    let mask = value_noise(&mut rng, size, 2);
    let lo = rng.random_range(-0.4..0.2);
    for i in 0..n {
        let m = smoothstep(lo, lo + 0.3, mask[i]);
        for ch in 0..3 {
            px[i * 3 + ch] += amplitude * m * texture[i * 3 + ch];
        }
    }

    // shapes
    let shapes = rng.random_range(1..6);
    for _ in 0..shapes {
        draw_shape(&mut rng, &mut px, size);
    }

    Image::from_f64(size, size, &px)
}

fn smoothstep(lo: f64, hi: f64, v: f64) -> f64 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[-1, 1]` with `cells` lattice
/// cells across the image.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let lattice: Vec<f64> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let fy = y as f64 / size as f64 * cells as f64;
        let y0 = (fy.floor() as usize).min(cells - 1);
        let ty = smoothstep(0.0, 1.0, fy - y0 as f64);
        for x in 0..size {
            let fx = x as f64 / size as f64 * cells as f64;
            let x0 = (fx.floor() as usize).min(cells - 1);
            let tx = smoothstep(0.0, 1.0, fx - x0 as f64);
            let a = lattice[y0 * g + x0];
            let b = lattice[y0 * g + x0 + 1];
            let c = lattice[(y0 + 1) * g + x0];
            let d = lattice[(y0 + 1) * g + x0 + 1];
            out.push((a * (1.0 - tx) + b * tx) * (1.0 - ty) + (c * (1.0 - tx) + d * tx) * ty);
        }
    }
    out
}

fn draw_shape(rng: &mut ChaCha8Rng, px: &mut [f64], size: usize) {
    let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
    let opacity = rng.random_range(0.6..1.0);
    let sz = size as f64;
    let cx = rng.random_range(0.0..sz);
    let cy = rng.random_range(0.0..sz);
    let rx = rng.random_range(0.08..0.3) * sz;
    let ry = rng.random_range(0.08..0.3) * sz;
    let kind = rng.random_range(0..3u32);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sa, ca) = angle.sin_cos();
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = dx * ca + dy * sa;
            let v = -dx * sa + dy * ca;
            let inside = match kind {
                0 => (u / rx).powi(2) + (v / ry).powi(2) <= 1.0,
                1 => u.abs() <= rx && v.abs() <= ry,
                _ => v >= -ry && v <= ry && u.abs() <= rx * (ry - v) / (2.0 * ry),
            };
            if inside {
                let i = (y * size + x) * 3;
                for ch in 0..3 {
                    px[i + ch] = px[i + ch] * (1.0 - opacity) + color[ch] * opacity;
                }
            }
        }
    }
}

/// Writes `img_NNNNNN.ppm` files and a `manifest.json` into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, seed: u64, count: usize, size: usize) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    if size < MIN_CORPUS_SIZE {
        return Err(Error::invalid(format!(
            "corpus image size must be at least {MIN_CORPUS_SIZE}, got {size}"
        )));
    }
    fs::create_dir_all(dir)?;
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let file = format!("img_{i:06}.ppm");
        write_ppm(dir.join(&file), &generate_image(seed, i as u64, size)?)?;
        images.push(ManifestEntry {
            id: i as u32,
            file,
            seed: derive_seed(seed, "corpus", i as u64),
        });
    }
    let manifest = CorpusManifest {
        generator: GENERATOR.into(),
        seed,
        count,
        size,
        images,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Loads every image of a corpus directory as `(id, image)` pairs.
///
/// With a `manifest.json` present its ids and file names are used; otherwise
/// all `*.ppm` files are loaded in name order with sequential ids.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<Vec<(u32, Image)>> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        let manifest: CorpusManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        return manifest
            .images
            .iter()
            .map(|e| Ok((e.id, read_ppm(dir.join(&e.file))?)))
            .collect();
    }
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    files.sort();
    files
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((i as u32, read_ppm(p)?)))
        .collect()
}
