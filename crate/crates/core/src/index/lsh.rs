//! PCA projection followed by random-hyperplane binary hashing.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::index::{top_k, Hit, SearchResult};
use crate::seed::rng_for;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LshIndex {
    pub(crate) dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) bits: usize,
    pub(crate) mean: Vec<f32>,
    /// `out_dim × dim`, orthonormal rows.
    pub(crate) basis: Vec<f32>,
    /// `bits × out_dim`.
    pub(crate) hyperplanes: Vec<f32>,
    pub(crate) ids: Vec<u32>,
    pub(crate) hashes: Vec<u64>,
    pub(crate) locator: HashMap<u32, u32>,
}

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Trains the PCA basis from the covariance eigendecomposition and samples
/// standard normal hyperplanes in the projected space.
pub fn train_pca_lsh(data: &[f32], dim: usize, out_dim: usize, bits: usize, seed: u64) -> Result<LshIndex> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::invalid("training data length is not a multiple of dim"));
    }
    if out_dim == 0 || out_dim > dim {
        return Err(Error::invalid(format!("PCA output dimension must be in 1..={dim}")));
    }
    if bits == 0 {
        return Err(Error::invalid("LSH needs at least one bit"));
    }
    let n = data.len() / dim;
    if n <= out_dim {
        return Err(Error::invalid(format!(
            "PCA to {out_dim} dimensions needs more than {out_dim} training vectors, got {n}"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training value"));
    }
    let mut mean = vec![0.0f64; dim];
    for x in data.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0f64; dim];
    for x in data.chunks_exact(dim) {
        for ((c, &v), m) in centered.iter_mut().zip(x).zip(&mean) {
            *c = v as f64 - m;
        }
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = top * 1e-10;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
    for &i in order.iter().take(out_dim) {
        if eig.eigenvalues[i] <= floor || top == 0.0 {
            break;
        }
        rows.push(eig.eigenvectors.column(i).iter().copied().collect());
    }
    if rows.len() < out_dim {
        log::warn!(
            "covariance has rank {} < {out_dim}; padding the PCA basis with random orthonormal directions",
            rows.len()
        );
        let mut rng = rng_for(seed, "pca-pad", 0);
        let mut attempts = 0;
        while rows.len() < out_dim {
            attempts += 1;
            if attempts > 100 * out_dim {
                return Err(Error::Numeric("could not complete the PCA basis".into()));
            }
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for _ in 0..2 {
                for r in &rows {
                    let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(r).for_each(|(x, a)| *x -= dot * a);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                rows.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
    }
    let mut rng = rng_for(seed, "lsh-hyperplanes", 0);
    let hyperplanes: Vec<f32> = (0..bits * out_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Ok(LshIndex {
        dim,
        out_dim,
        bits,
        mean: mean.into_iter().map(|m| m as f32).collect(),
        basis: rows.into_iter().flatten().map(|v| v as f32).collect(),
        hyperplanes,
        ids: Vec::new(),
        hashes: Vec::new(),
        locator: HashMap::new(),
    })
}

impl LshIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn basis(&self) -> &[f32] {
        &self.basis
    }

    pub fn hyperplanes(&self) -> &[f32] {
        &self.hyperplanes
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::invalid(format!("expected dimension {}, got {len}", self.dim)));
        }
        Ok(())
    }

    /// PCA coordinates `B (x − μ)`.
    pub fn project(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| *a as f64 - *m as f64).collect();
        Ok(self
            .basis
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(&centered).map(|(b, c)| *b as f64 * c).sum())
            .collect())
    }

    /// Hyperplane responses `w_jᵀ B (x − μ)` for every bit.
    pub fn responses(&self, x: &[f32]) -> Result<Vec<f64>> {
        let z = self.project(x)?;
        Ok(self
            .hyperplanes
            .chunks_exact(self.out_dim)
            .map(|w| w.iter().zip(&z).map(|(a, b)| *a as f64 * b).sum())
            .collect())
    }

    /// Feature-space directions `v_j = Bᵀ w_j` (row-major `bits × dim`) and
    /// offsets `v_jᵀ μ`, so that the response of bit `j` is `v_jᵀ x − offset_j`.
    pub fn directions(&self) -> (Vec<f64>, Vec<f64>) {
        let mut dirs = vec![0.0f64; self.bits * self.dim];
        for (w, v) in self.hyperplanes.chunks_exact(self.out_dim).zip(dirs.chunks_exact_mut(self.dim)) {
            for (&wk, row) in w.iter().zip(self.basis.chunks_exact(self.dim)) {
                for (vi, &b) in v.iter_mut().zip(row) {
                    *vi += wk as f64 * b as f64;
                }
            }
        }
        let offsets = dirs
            .chunks_exact(self.dim)
            .map(|v| v.iter().zip(&self.mean).map(|(a, m)| a * *m as f64).sum())
            .collect();
        (dirs, offsets)
    }

    /// Bit `j` is set when the response is strictly positive.
    pub fn hash(&self, x: &[f32]) -> Result<Vec<u64>> {
        let mut words = vec![0u64; words_for(self.bits)];
        for (j, r) in self.responses(x)?.into_iter().enumerate() {
            if r > 0.0 {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        Ok(words)
    }

    /// Signs `s_j ∈ {−1, +1}` encoded by a hash.
    pub fn signs(&self, hash: &[u64]) -> Vec<f64> {
        (0..self.bits)
            .map(|j| if hash[j / 64] >> (j % 64) & 1 == 1 { 1.0 } else { -1.0 })
            .collect()
    }

    /// Smallest Euclidean perturbation of `x` that can flip one of its bits.
    pub fn margin(&self, x: &[f32]) -> Result<f64> {
        let r = self.responses(x)?;
        let (dirs, _) = self.directions();
        Ok(r.iter()
            .zip(dirs.chunks_exact(self.dim))
            .map(|(rj, v)| rj.abs() / v.iter().map(|a| a * a).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min))
    }

    pub fn add(&mut self, id: u32, x: &[f32]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature"));
        }
        if self.locator.contains_key(&id) {
            return Err(Error::invalid(format!("id {id} is already in the index")));
        }
        let h = self.hash(x)?;
        self.locator.insert(id, self.ids.len() as u32);
        self.ids.push(id);
        self.hashes.extend_from_slice(&h);
        Ok(())
    }

    pub fn hash_of(&self, id: u32) -> Option<&[u64]> {
        let w = words_for(self.bits);
        self.locator.get(&id).map(|&p| &self.hashes[p as usize * w..(p as usize + 1) * w])
    }

    /// Top-`k` stored entries by Hamming distance to the query hash.
    pub fn search(&self, query: &[f32], k: usize) -> Result<SearchResult> {
        let q = self.hash(query)?;
        self.search_hash(&q, k)
    }

    pub fn search_hash(&self, q: &[u64], k: usize) -> Result<SearchResult> {
        let w = words_for(self.bits);
        if q.len() != w {
            return Err(Error::invalid("hash length mismatch"));
        }
        if self.is_empty() || k == 0 {
            return Ok(SearchResult::default());
        }
        let candidates = self
            .ids
            .iter()
            .zip(self.hashes.chunks_exact(w))
            .map(|(&id, h)| Hit {
                id,
                distance: h.iter().zip(q).map(|(a, b)| (a ^ b).count_ones()).sum::<u32>() as f32,
            })
            .collect();
        Ok(top_k(candidates, k))
    }

    pub(crate) fn rebuild_locator(&mut self) -> Result<()> {
        self.locator.clear();
        for (p, &id) in self.ids.iter().enumerate() {
            if self.locator.insert(id, p as u32).is_some() {
                return Err(Error::CorruptIndex(format!("id {id} stored more than once")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn basis_rows_are_orthonormal() {
        let data = gaussian(300, 16, 1);
        let idx = train_pca_lsh(&data, 16, 8, 32, 2).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f32 = (0..16).map(|k| idx.basis[i * 16 + k] * idx.basis[j * 16 + k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rank_deficient_data_is_padded() {
        // every vector lives in the first two coordinates
        let mut data = gaussian(100, 6, 3);
        for row in data.chunks_exact_mut(6) {
            row[2..].iter_mut().for_each(|v| *v = 0.0);
        }
        let idx = train_pca_lsh(&data, 6, 4, 8, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let dot: f32 = (0..6).map(|k| idx.basis[i * 6 + k] * idx.basis[j * 6 + k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn directions_reproduce_responses() {
        let data = gaussian(200, 8, 4);
        let idx = train_pca_lsh(&data, 8, 6, 10, 5).unwrap();
        let (dirs, offsets) = idx.directions();
        let x = &data[..8];
        for (j, r) in idx.responses(x).unwrap().into_iter().enumerate() {
            let v: f64 = dirs[j * 8..(j + 1) * 8].iter().zip(x).map(|(a, b)| a * *b as f64).sum();
            assert!((v - offsets[j] - r).abs() < 1e-5);
        }
    }

    #[test]
    fn too_little_data_is_rejected() {
        let data = gaussian(8, 8, 1);
        assert!(train_pca_lsh(&data, 8, 8, 8, 1).is_err());
    }
}
