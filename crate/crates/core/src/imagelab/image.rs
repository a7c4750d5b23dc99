use crate::{Error, Result};

/// A 3-channel float raster with values clamped to `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;
    pub const MIN_SIDE: usize = 8;

    /// Builds an image from interleaved RGB data. Values are clamped to
    /// `[0, 255]`; non-finite values are rejected.
    pub fn new(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "expected {} values for a {height}x{width} image, got {}",
                height * width * 3,
                data.len()
            )));
        }
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::invalid("non-finite pixel value"));
            }
            *v = v.clamp(0.0, 255.0);
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn from_f64(height: usize, width: usize, data: &[f64]) -> Result<Self> {
        Self::new(height, width, data.iter().map(|&v| v as f32).collect())
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::new(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Number of scalar values (`height * width * 3`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// BT.601 luma `0.299 R + 0.587 G + 0.114 B`, one value per pixel.
    /// Evaluated as `G + 0.299 (R − G) + 0.114 (B − G)` so gray pixels map to
    /// their exact value.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| {
                let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
                g + 0.299 * (r - g) + 0.114 * (b - g)
            })
            .collect()
    }

    /// Returns a copy with every value rounded to the nearest integer.
    pub fn rounded(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.round()).collect(),
        }
    }
}

pub(crate) fn check_dims(height: usize, width: usize) -> Result<()> {
    if height < Image::MIN_SIDE || width < Image::MIN_SIDE {
        return Err(Error::invalid(format!(
            "image must be at least {0}x{0}, got {height}x{width}",
            Image::MIN_SIDE
        )));
    }
    Ok(())
}
