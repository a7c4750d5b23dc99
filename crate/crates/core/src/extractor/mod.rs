//! A small convolutional feature extractor with exact input gradients.
//!
//! Pipeline: bilinear resize to `input_resolution`², per-channel affine
//! normalization, three stride-2 convolutions each followed by `tanh`
//! (3→16 5×5, 16→32 5×5, 32→64 3×3), global average pooling, a 64→64 linear
//! projection and L2 normalization.
//!
//! Weights are random (He-scaled) with zero-mean first-layer filters. The
//! default input resolution is 18, roughly a third of the 64-pixel corpus
//! images; higher resolutions make the feature overly sensitive to
//! JND-bounded perturbations.

mod conv;
mod network;
mod weights;

pub use network::{FeatureVector, ForwardTape, PixelGradient};
pub use weights::{ExtractorWeights, LayerShape, ARCHITECTURE, DEFAULT_RESOLUTION, FEATURE_DIM};
