//! Binary PPM (`P6`, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use super::image::Image;
use crate::{Error, Result};

/// Encodes as `P6\n{width} {height}\n255\n` followed by RGB bytes. Values are
/// rounded to the nearest integer.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(image.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| Error::format(start, format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format(0, "missing P6 magic"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, maxval_at) = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::format(cur.pos, "expected single whitespace after maxval")),
    }
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::format(0, "dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < n {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: expected {n} bytes, found {}", payload.len()),
        ));
    }
    Image::new(height, width, payload[..n].iter().map(|&b| b as f32).collect())
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let img = Image::filled(8, 8, [0.0; 3]).unwrap();
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n8 8\n255\n"));
        assert_eq!(bytes.len(), 11 + 192);
    }

    #[test]
    fn rounds_on_encode() {
        let img = Image::filled(8, 8, [1.4, 1.6, 254.5]).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(&back.data()[..3], &[1.0, 2.0, 255.0]);
        assert_eq!(back, img.rounded());
    }

    #[test]
    fn accepts_comments_and_whitespace() {
        let mut bytes = b"P6 # made by hand\n 8\t8 \n# max\n255\n".to_vec();
        bytes.extend(std::iter::repeat(7u8).take(192));
        let img = decode_ppm(&bytes).unwrap();
        assert!(img.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn errors_carry_offsets() {
        match decode_ppm(b"P5\n8 8\n255\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let mut bytes = b"P6\n8 8\n255\n".to_vec();
        bytes.extend([0u8; 10]);
        match decode_ppm(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len() as u64),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_ppm(b"P6\n8 x\n255\n"), Err(Error::Format { offset: 5, .. })));
        assert!(matches!(decode_ppm(b"P6\n8 8\n65535\n"), Err(Error::Format { offset: 7, .. })));
    }

    proptest! {
        #[test]
        fn integer_images_round_trip(h in 8usize..12, w in 8usize..12, seed in any::<u64>()) {
            let mut s = seed;
            let img = Image::from_fn(h, w, |_, _, _| {
                s = crate::seed::splitmix64(s);
                (s % 256) as f32
            }).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        }
    }
}
