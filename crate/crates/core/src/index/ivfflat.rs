//! Inverted file storing full vectors; exact distances inside probed cells.

use std::collections::HashMap;

use crate::index::kmeans::{kmeans_with_trace, sq_dist, Codebook};
use crate::index::{top_k, Hit, SearchResult};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct FlatList {
    pub ids: Vec<u32>,
    pub vectors: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct IvfFlatIndex {
    pub(crate) coarse: Codebook,
    pub(crate) nprobe: usize,
    pub(crate) lists: Vec<FlatList>,
    pub(crate) locator: HashMap<u32, (u32, u32)>,
}

impl IvfFlatIndex {
    pub fn train(data: &[f32], dim: usize, k: usize, nprobe: usize, iterations: usize, seed: u64) -> Result<(Self, Vec<f64>)> {
        if nprobe == 0 || nprobe > k {
            return Err(Error::invalid(format!("nprobe must be in 1..={k}")));
        }
        let out = kmeans_with_trace(data, dim, k, iterations.max(1), seed)?;
        Ok((IvfFlatIndex::from_coarse(out.codebook, nprobe), out.objective_trace))
    }

    pub fn from_coarse(coarse: Codebook, nprobe: usize) -> Self {
        IvfFlatIndex {
            lists: vec![FlatList::default(); coarse.k()],
            coarse,
            nprobe,
            locator: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coarse.dim()
    }

    pub fn len(&self) -> usize {
        self.locator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locator.is_empty()
    }

    pub fn coarse(&self) -> &Codebook {
        &self.coarse
    }

    pub fn nprobe(&self) -> usize {
        self.nprobe
    }

    pub fn set_nprobe(&mut self, nprobe: usize) -> Result<()> {
        if nprobe == 0 || nprobe > self.coarse.k() {
            return Err(Error::invalid(format!("nprobe must be in 1..={}", self.coarse.k())));
        }
        self.nprobe = nprobe;
        Ok(())
    }

    pub fn add(&mut self, id: u32, x: &[f32]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!("expected dimension {}, got {}", self.dim(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature"));
        }
        if self.locator.contains_key(&id) {
            return Err(Error::invalid(format!("id {id} is already in the index")));
        }
        let cell = self.coarse.nearest(x).0;
        let list = &mut self.lists[cell];
        self.locator.insert(id, (cell as u32, list.ids.len() as u32));
        list.ids.push(id);
        list.vectors.extend_from_slice(x);
        Ok(())
    }

    pub fn cell_of(&self, id: u32) -> Option<usize> {
        self.locator.get(&id).map(|&(c, _)| c as usize)
    }

    /// Centroid of the cell holding `id`, the vector the cell represents it by.
    pub fn cell_centroid(&self, id: u32) -> Result<Vec<f32>> {
        let cell = self.cell_of(id).ok_or_else(|| Error::NotFound(format!("id {id} is not in the index")))?;
        Ok(self.coarse.centroid(cell).to_vec())
    }

    pub fn stored_vector(&self, id: u32) -> Option<&[f32]> {
        let &(c, p) = self.locator.get(&id)?;
        let d = self.dim();
        Some(&self.lists[c as usize].vectors[p as usize * d..(p as usize + 1) * d])
    }

    pub fn search_with(&self, query: &[f32], k: usize, nprobe: usize) -> Result<SearchResult> {
        if query.len() != self.dim() {
            return Err(Error::invalid(format!("expected dimension {}, got {}", self.dim(), query.len())));
        }
        if nprobe == 0 || nprobe > self.coarse.k() {
            return Err(Error::invalid(format!("nprobe must be in 1..={}", self.coarse.k())));
        }
        if self.is_empty() || k == 0 {
            return Ok(SearchResult::default());
        }
        let d = self.dim();
        let mut candidates = Vec::new();
        for cell in self.coarse.nearest_n(query, nprobe) {
            let list = &self.lists[cell];
            for (&id, v) in list.ids.iter().zip(list.vectors.chunks_exact(d)) {
                candidates.push(Hit {
                    id,
                    distance: sq_dist(query, v),
                });
            }
        }
        Ok(top_k(candidates, k))
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<SearchResult> {
        self.search_with(query, k, self.nprobe)
    }

    pub(crate) fn rebuild_locator(&mut self) -> Result<()> {
        self.locator.clear();
        for (c, list) in self.lists.iter().enumerate() {
            for (p, &id) in list.ids.iter().enumerate() {
                if self.locator.insert(id, (c as u32, p as u32)).is_some() {
                    return Err(Error::CorruptIndex(format!("id {id} stored more than once")));
                }
            }
        }
        Ok(())
    }
}
