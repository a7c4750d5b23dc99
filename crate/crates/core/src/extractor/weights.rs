use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::seed::rng_for;
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 64;
pub const DEFAULT_RESOLUTION: usize = 18;

const MAGIC: &[u8; 4] = b"AIXW";
const VERSION: u32 = 1;

/// Shape of one layer. The final projection is stored as a 1×1 "convolution"
/// with stride 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl LayerShape {
    pub const fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub const fn weight_count(&self) -> usize {
        self.out_ch * self.fan_in()
    }
}

/// Three convolutions followed by the linear projection.
pub const ARCHITECTURE: [LayerShape; 4] = [
    LayerShape { in_ch: 3, out_ch: 16, kernel: 5, stride: 2 },
    LayerShape { in_ch: 16, out_ch: 32, kernel: 5, stride: 2 },
    LayerShape { in_ch: 32, out_ch: 64, kernel: 3, stride: 2 },
    LayerShape { in_ch: 64, out_ch: FEATURE_DIM, kernel: 1, stride: 1 },
];

/// Parameters of the extractor.
///
/// Layout of the flat parameter array, layer by layer: weights
/// `[out][in][ky][kx]` then biases `[out]`.
#[derive(Clone, Debug)]
pub struct ExtractorWeights {
    seed: u64,
    input_resolution: usize,
    params: Vec<f32>,
    // f64 copy used by the forward and backward passes
    wide: Vec<f64>,
}

impl PartialEq for ExtractorWeights {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.input_resolution == other.input_resolution
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Removes the mean of every `taps`-long filter slice and restores its norm,
/// so first-layer filters respond to local structure rather than flat color.
fn zero_mean_taps(weights: &mut [f64], taps: usize) {
    for slice in weights.chunks_exact_mut(taps) {
        let mean = slice.iter().sum::<f64>() / taps as f64;
        let before = slice.iter().map(|v| v * v).sum::<f64>();
        slice.iter_mut().for_each(|v| *v -= mean);
        let after = slice.iter().map(|v| v * v).sum::<f64>();
        if after > 0.0 {
            let gain = (before / after).sqrt();
            slice.iter_mut().for_each(|v| *v *= gain);
        }
    }
}

pub(crate) fn param_count() -> usize {
    ARCHITECTURE.iter().map(|l| l.weight_count() + l.out_ch).sum()
}

impl ExtractorWeights {
    /// He-scaled Gaussian weights (`N(0, 2 / fan_in)`) and zero biases. First-layer
    /// filters are made zero-mean per input channel at unchanged norm.
    pub fn init(seed: u64) -> Self {
        Self::init_with_resolution(seed, DEFAULT_RESOLUTION)
    }

    pub fn init_with_resolution(seed: u64, input_resolution: usize) -> Self {
        let mut params = Vec::with_capacity(param_count());
        for (i, layer) in ARCHITECTURE.iter().enumerate() {
            let mut rng = rng_for(seed, "weights", i as u64);
            let normal = Normal::new(0.0f64, (2.0 / layer.fan_in() as f64).sqrt()).expect("positive std");
            let mut w: Vec<f64> = (0..layer.weight_count()).map(|_| normal.sample(&mut rng)).collect();
            if i == 0 {
                zero_mean_taps(&mut w, layer.kernel * layer.kernel);
            }
            params.extend(w.into_iter().map(|v| v as f32));
            params.extend(std::iter::repeat(0.0f32).take(layer.out_ch));
        }
        Self::from_params(seed, input_resolution, params).expect("architecture-sized parameters")
    }

    pub fn from_params(seed: u64, input_resolution: usize, params: Vec<f32>) -> Result<Self> {
        if params.len() != param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite extractor parameter"));
        }
        if input_resolution < 8 {
            return Err(Error::invalid("input resolution must be at least 8"));
        }
        let wide = params.iter().map(|&v| v as f64).collect();
        Ok(ExtractorWeights {
            seed,
            input_resolution,
            params,
            wide,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_resolution(&self) -> usize {
        self.input_resolution
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    /// `(weights, bias)` of layer `i` as f64 slices.
    pub(crate) fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let mut off = 0;
        for l in &ARCHITECTURE[..i] {
            off += l.weight_count() + l.out_ch;
        }
        let l = &ARCHITECTURE[i];
        let w = &self.wide[off..off + l.weight_count()];
        let b = &self.wide[off + l.weight_count()..off + l.weight_count() + l.out_ch];
        (w, b)
    }

    /// Raw f32 weights of layer `i` (biases excluded).
    pub fn layer_weights(&self, i: usize) -> &[f32] {
        let mut off = 0;
        for l in &ARCHITECTURE[..i] {
            off += l.weight_count() + l.out_ch;
        }
        &self.params[off..off + ARCHITECTURE[i].weight_count()]
    }

    /// Serializes to the little-endian weight-file layout:
    ///
    /// ```text
    /// "AIXW" | u32 version=1 | u64 seed | u32 input_resolution | u32 feature_dim
    /// | u32 layer_count | layer_count x (u32 in, u32 out, u32 kernel, u32 stride)
    /// | u64 param_count | param_count x f32
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.input_resolution as u32).to_le_bytes());
        out.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
        out.extend_from_slice(&(ARCHITECTURE.len() as u32).to_le_bytes());
        for l in &ARCHITECTURE {
            for v in [l.in_ch, l.out_ch, l.kernel, l.stride] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::binio::ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::format(0, "bad weight-file magic"));
        }
        let at = r.pos();
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported weight-file version {version}")));
        }
        let seed = r.u64()?;
        let input_resolution = r.u32()? as usize;
        let at = r.pos();
        if r.u32()? as usize != FEATURE_DIM {
            return Err(Error::format(at, "feature dimension does not match the architecture"));
        }
        let at = r.pos();
        if r.u32()? as usize != ARCHITECTURE.len() {
            return Err(Error::format(at, "layer count does not match the architecture"));
        }
        for l in &ARCHITECTURE {
            let at = r.pos();
            let shape = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
            if shape != [l.in_ch, l.out_ch, l.kernel, l.stride] {
                return Err(Error::format(at, format!("layer shape {shape:?} does not match {l:?}")));
            }
        }
        let at = r.pos();
        let n = r.u64()? as usize;
        if n != param_count() {
            return Err(Error::format(at, format!("expected {} parameters, header says {n}", param_count())));
        }
        let params = r.f32s(n)?;
        Self::from_params(seed, input_resolution, params).map_err(|e| Error::format(at, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = ExtractorWeights::init(1);
        let b = ExtractorWeights::init(1);
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.params(), ExtractorWeights::init(2).params());
    }

    #[test]
    fn he_variance_per_layer() {
        let w = ExtractorWeights::init(3);
        for (i, l) in ARCHITECTURE.iter().enumerate() {
            let ws = w.layer_weights(i);
            let n = ws.len() as f64;
            let mean = ws.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = ws.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let target = 2.0 / l.fan_in() as f64;
            assert!(var > target / 2.0 && var < target * 2.0, "layer {i}: {var} vs {target}");
        }
    }

    #[test]
    fn first_layer_filters_are_zero_mean() {
        let w = ExtractorWeights::init(4);
        let taps = ARCHITECTURE[0].kernel * ARCHITECTURE[0].kernel;
        for slice in w.layer_weights(0).chunks_exact(taps) {
            let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / taps as f64;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let w = ExtractorWeights::init(9);
        let bytes = w.to_bytes();
        let back = ExtractorWeights::from_bytes(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn malformed_files_are_format_errors() {
        let bytes = ExtractorWeights::init(9).to_bytes();
        for cut in [0, 3, 10, 40, bytes.len() - 1] {
            assert!(matches!(ExtractorWeights::from_bytes(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ExtractorWeights::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(ExtractorWeights::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
    }
}
