//! Images, the procedural corpus, query transformations and quality metrics.
//!
//! Pixels are `f32` in `[0, 255]`, stored row-major with the three channels
//! interleaved: the value of channel `c` at row `y`, column `x` lives at
//! `data[(y * width + x) * 3 + c]`.

mod corpus;
mod image;
mod ppm;
mod quality;
pub(crate) mod resample;
mod transform;

pub use corpus::{
    generate_corpus, generate_image, load_corpus_dir, write_corpus, CorpusManifest,
    ManifestEntry, MIN_CORPUS_SIZE,
};
pub use image::Image;
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use quality::{linf, psnr, quality, QualityStats, PSNR_CAP_DB};
pub use resample::gaussian_kernel;
pub use transform::{apply_transform, transform_vjp, TransformKind, TransformSpec};
