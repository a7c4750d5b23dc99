//! Product quantization and asymmetric distance tables.

use crate::index::kmeans::{lloyd, kmeans_pp_init, sq_dist, Codebook};
use crate::seed::rng_for;
use crate::{Error, Result};

/// `m` sub-codebooks of `ks` codewords each, covering `dim / m` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PqCodebook {
    m: usize,
    ks: usize,
    dsub: usize,
    /// Layout `[m][ks][dsub]`.
    centroids: Vec<f32>,
}

fn check_geometry(dim: usize, m: usize, ks: usize) -> Result<()> {
    if m == 0 || dim == 0 || dim % m != 0 {
        return Err(Error::invalid(format!("dimension {dim} is not divisible by m={m}")));
    }
    if ks == 0 || ks > 256 {
        return Err(Error::invalid(format!("K_s must be in 1..=256, got {ks}")));
    }
    Ok(())
}

impl PqCodebook {
    pub fn new(dim: usize, m: usize, ks: usize, centroids: Vec<f32>) -> Result<Self> {
        check_geometry(dim, m, ks)?;
        if centroids.len() != dim * ks {
            return Err(Error::invalid(format!(
                "PQ codebook needs {} values, got {}",
                dim * ks,
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite PQ codeword".into()));
        }
        Ok(PqCodebook {
            m,
            ks,
            dsub: dim / m,
            centroids,
        })
    }

    /// Trains each sub-codebook with k-means on the matching sub-vectors.
    pub fn train(data: &[f32], dim: usize, m: usize, ks: usize, iterations: usize, seed: u64) -> Result<Self> {
        check_geometry(dim, m, ks)?;
        let dsub = dim / m;
        let mut centroids = Vec::with_capacity(dim * ks);
        for j in 0..m {
            let sub = sub_columns(data, dim, j * dsub, dsub);
            let mut rng = rng_for(seed, "pq", j as u64);
            let init = kmeans_pp_init(&sub, dsub, ks, &mut rng)?;
            let out = lloyd(&sub, dsub, init, iterations)?;
            centroids.extend_from_slice(out.codebook.centroids());
        }
        PqCodebook::new(dim, m, ks, centroids)
    }

    /// Continues Lloyd iterations from the current codewords.
    pub(crate) fn refine(&self, data: &[f32], iterations: usize) -> Result<Self> {
        let dim = self.dim();
        let mut centroids = Vec::with_capacity(self.centroids.len());
        for j in 0..self.m {
            let sub = sub_columns(data, dim, j * self.dsub, self.dsub);
            let init = self.sub_codebook(j).to_vec();
            let out = lloyd(&sub, self.dsub, init, iterations)?;
            centroids.extend_from_slice(out.codebook.centroids());
        }
        PqCodebook::new(dim, self.m, self.ks, centroids)
    }

    pub fn dim(&self) -> usize {
        self.m * self.dsub
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ks(&self) -> usize {
        self.ks
    }

    pub fn dsub(&self) -> usize {
        self.dsub
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn sub_codebook(&self, j: usize) -> &[f32] {
        let n = self.ks * self.dsub;
        &self.centroids[j * n..(j + 1) * n]
    }

    pub fn sub_codeword(&self, j: usize, c: usize) -> &[f32] {
        let start = (j * self.ks + c) * self.dsub;
        &self.centroids[start..start + self.dsub]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::invalid(format!("expected dimension {}, got {len}", self.dim())));
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f32]) -> Result<Vec<u8>> {
        self.check_dim(x.len())?;
        let mut code = vec![0u8; self.m];
        self.encode_into(x, &mut code);
        Ok(code)
    }

    /// Nearest sub-codeword per sub-vector; ties go to the lowest index.
    pub(crate) fn encode_into(&self, x: &[f32], code: &mut [u8]) {
        for (j, (xs, out)) in x.chunks_exact(self.dsub).zip(code.iter_mut()).enumerate() {
            let mut best = (0usize, f32::INFINITY);
            for (c, cw) in self.sub_codebook(j).chunks_exact(self.dsub).enumerate() {
                let d = sq_dist(xs, cw);
                if d < best.1 {
                    best = (c, d);
                }
            }
            *out = best.0 as u8;
        }
    }

    pub fn check_code(&self, code: &[u8]) -> Result<()> {
        if code.len() != self.m {
            return Err(Error::invalid(format!("expected a {}-byte code, got {}", self.m, code.len())));
        }
        if let Some((j, &b)) = code.iter().enumerate().find(|(_, &b)| b as usize >= self.ks) {
            return Err(Error::CorruptIndex(format!(
                "code byte {b} at sub-quantizer {j} exceeds K_s={}",
                self.ks
            )));
        }
        Ok(())
    }

    pub fn decode(&self, code: &[u8]) -> Result<Vec<f32>> {
        self.check_code(code)?;
        let mut out = Vec::with_capacity(self.dim());
        for (j, &c) in code.iter().enumerate() {
            out.extend_from_slice(self.sub_codeword(j, c as usize));
        }
        Ok(out)
    }

    pub fn adc_tables(&self, query: &[f32]) -> Result<AdcTable> {
        self.check_dim(query.len())?;
        let mut values = Vec::with_capacity(self.m * self.ks);
        for (j, qs) in query.chunks_exact(self.dsub).enumerate() {
            for cw in self.sub_codebook(j).chunks_exact(self.dsub) {
                values.push(sq_dist(qs, cw));
            }
        }
        Ok(AdcTable {
            m: self.m,
            ks: self.ks,
            values,
        })
    }

    /// Mean squared reconstruction error over a set of vectors.
    pub fn mean_error(&self, data: &[f32]) -> Result<f64> {
        let dim = self.dim();
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::invalid("data length is not a positive multiple of dim"));
        }
        let mut code = vec![0u8; self.m];
        let mut total = 0.0f64;
        for x in data.chunks_exact(dim) {
            self.encode_into(x, &mut code);
            for (j, (&c, xs)) in code.iter().zip(x.chunks_exact(self.dsub)).enumerate() {
                total += sq_dist(xs, self.sub_codeword(j, c as usize)) as f64;
            }
        }
        Ok(total / (data.len() / dim) as f64)
    }

    /// The sub-codebook `j` as a standalone [`Codebook`].
    pub fn sub_quantizer(&self, j: usize) -> Codebook {
        Codebook::new(self.ks, self.dsub, self.sub_codebook(j).to_vec()).expect("valid geometry")
    }
}

fn sub_columns(data: &[f32], dim: usize, start: usize, len: usize) -> Vec<f32> {
    data.chunks_exact(dim).flat_map(|row| row[start..start + len].iter().copied()).collect()
}

/// `m × K_s` table of partial squared distances for one query.
#[derive(Clone, Debug)]
pub struct AdcTable {
    m: usize,
    ks: usize,
    values: Vec<f32>,
}

impl AdcTable {
    pub fn get(&self, j: usize, c: usize) -> f32 {
        self.values[j * self.ks + c]
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ks(&self) -> usize {
        self.ks
    }

    /// Summed table distance for a code. Codes must already be validated.
    #[inline]
    pub fn distance(&self, code: &[u8]) -> f32 {
        code.iter()
            .enumerate()
            .map(|(j, &c)| self.values[j * self.ks + c as usize])
            .sum()
    }

    /// Summed distance, rejecting bytes outside the codebook.
    pub fn checked_distance(&self, code: &[u8]) -> Result<f32> {
        if code.len() != self.m {
            return Err(Error::invalid("code length mismatch"));
        }
        if let Some(&b) = code.iter().find(|&&b| b as usize >= self.ks) {
            return Err(Error::CorruptIndex(format!("code byte {b} exceeds K_s={}", self.ks)));
        }
        Ok(self.distance(code))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hand_built() -> PqCodebook {
        // m=2, K_s=4, dsub=2
        let c = vec![
            0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, //
            -1.0, 2.0, 3.0, 3.0, 0.5, -0.5, 2.0, 0.0,
        ];
        PqCodebook::new(4, 2, 4, c).unwrap()
    }

    #[test]
    fn encode_matches_exhaustive_search() {
        let pq = hand_built();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x: Vec<f32> = (0..4).map(|_| rng.random_range(-2.0..4.0)).collect();
            let mut best = (f32::INFINITY, [0u8; 2]);
            for a in 0..4u8 {
                for b in 0..4u8 {
                    let d = pq.decode(&[a, b]).unwrap();
                    let dist = sq_dist(&d, &x);
                    if dist < best.0 {
                        best = (dist, [a, b]);
                    }
                }
            }
            assert_eq!(pq.encode(&x).unwrap(), best.1.to_vec());
        }
    }

    #[test]
    fn codewords_are_fixed_points_and_encode_is_idempotent() {
        let pq = hand_built();
        for a in 0..4u8 {
            for b in 0..4u8 {
                let d = pq.decode(&[a, b]).unwrap();
                assert_eq!(pq.encode(&d).unwrap(), vec![a, b]);
            }
        }
        let x = [0.3f32, 0.9, 1.7, 0.2];
        let code = pq.encode(&x).unwrap();
        assert_eq!(pq.encode(&pq.decode(&code).unwrap()).unwrap(), code);
    }

    #[test]
    fn zero_codebook_tables_hold_subvector_norms() {
        let pq = PqCodebook::new(4, 2, 3, vec![0.0; 12]).unwrap();
        let t = pq.adc_tables(&[1.0, 2.0, -3.0, 0.5]).unwrap();
        for c in 0..3 {
            assert_eq!(t.get(0, c), 5.0);
            assert_eq!(t.get(1, c), 9.25);
        }
    }

    #[test]
    fn bad_codes_and_geometry_are_rejected() {
        let pq = hand_built();
        assert!(matches!(pq.decode(&[0, 4]), Err(Error::CorruptIndex(_))));
        assert!(pq.decode(&[0]).is_err());
        assert!(pq.encode(&[0.0; 3]).is_err());
        assert!(PqCodebook::new(5, 2, 4, vec![0.0; 20]).is_err());
        assert!(PqCodebook::new(4, 2, 257, vec![0.0; 4 * 257]).is_err());
    }

    #[test]
    fn training_reduces_error_below_the_centroid_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..400 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pq = PqCodebook::train(&data, 8, 4, 16, 20, 1).unwrap();
        let zero = PqCodebook::new(8, 4, 1, vec![0.0; 8]).unwrap();
        assert!(pq.mean_error(&data).unwrap() < 0.5 * zero.mean_error(&data).unwrap());
    }
}
