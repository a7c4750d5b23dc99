//! Inverted file with residual product quantization (IVFADC).

use std::collections::HashMap;

use rayon::prelude::*;

use crate::index::kmeans::{kmeans_with_trace, Codebook};
use crate::index::opq::{rotate, rotate_back, train_opq};
use crate::index::pq::PqCodebook;
use crate::index::{top_k, Hit, SearchResult};
use crate::{Error, Result};

/// Training parameters for [`IvfPqIndex::train`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IvfPqParams {
    /// Coarse cells.
    pub k: usize,
    /// Sub-quantizers.
    pub m: usize,
    /// Codewords per sub-quantizer.
    pub ks: usize,
    /// Cells probed by default at search time.
    pub nprobe: usize,
    pub coarse_iterations: usize,
    pub pq_iterations: usize,
    /// OPQ rounds; 0 keeps the residuals unrotated.
    pub opq_rounds: usize,
}

impl Default for IvfPqParams {
    fn default() -> Self {
        IvfPqParams {
            k: 64,
            m: 8,
            ks: 256,
            nprobe: 1,
            coarse_iterations: 20,
            pq_iterations: 20,
            opq_rounds: 0,
        }
    }
}

/// Statistics collected while training.
#[derive(Clone, Debug, Default)]
pub struct IvfPqTrainStats {
    pub coarse_objective_trace: Vec<f64>,
    /// Mean `‖x − q(x)‖²` over the training vectors.
    pub mean_quantization_error: f64,
    pub opq_error_trace: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct PqList {
    pub ids: Vec<u32>,
    pub codes: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct IvfPqIndex {
    pub(crate) coarse: Codebook,
    pub(crate) rotation: Option<Vec<f32>>,
    pub(crate) pq: PqCodebook,
    pub(crate) nprobe: usize,
    pub(crate) lists: Vec<PqList>,
    pub(crate) locator: HashMap<u32, (u32, u32)>,
}

impl IvfPqIndex {
    pub fn train(data: &[f32], dim: usize, params: &IvfPqParams, seed: u64) -> Result<(Self, IvfPqTrainStats)> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::invalid("training data length is not a multiple of dim"));
        }
        let n = data.len() / dim;
        if n < params.k.max(params.ks) {
            return Err(Error::invalid(format!(
                "IVF-PQ training needs at least max(k, K_s) = {} vectors, got {n}",
                params.k.max(params.ks)
            )));
        }
        if params.nprobe == 0 || params.nprobe > params.k {
            return Err(Error::invalid(format!("nprobe must be in 1..={}", params.k)));
        }
        let coarse_out = kmeans_with_trace(data, dim, params.k, params.coarse_iterations.max(1), seed)?;
        let coarse = coarse_out.codebook;
        let assignment = crate::index::kmeans::assign(data, &coarse);
        let mut residuals = vec![0.0f32; data.len()];
        for ((x, r), &(c, _)) in data.chunks_exact(dim).zip(residuals.chunks_exact_mut(dim)).zip(&assignment) {
            for ((ri, xi), ci) in r.iter_mut().zip(x).zip(coarse.centroid(c)) {
                *ri = xi - ci;
            }
        }
        let pq_seed = crate::seed::derive_seed(seed, "ivfpq-fine", 0);
        let (rotation, pq, opq_error_trace) = if params.opq_rounds > 0 {
            let model = train_opq(&residuals, dim, params.m, params.ks, params.opq_rounds, params.pq_iterations.max(1), pq_seed)?;
            (Some(model.rotation), model.pq, model.error_trace)
        } else {
            (None, PqCodebook::train(&residuals, dim, params.m, params.ks, params.pq_iterations.max(1), pq_seed)?, Vec::new())
        };
        let index = IvfPqIndex {
            lists: vec![PqList::default(); coarse.k()],
            coarse,
            rotation,
            pq,
            nprobe: params.nprobe,
            locator: HashMap::new(),
        };
        let total: f64 = data
            .par_chunks(dim)
            .map(|x| index.quantization_error(x).map(|e| e as f64))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum();
        let stats = IvfPqTrainStats {
            coarse_objective_trace: coarse_out.objective_trace,
            mean_quantization_error: total / n as f64,
            opq_error_trace,
        };
        Ok((index, stats))
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

    pub fn pq(&self) -> &PqCodebook {
        &self.pq
    }

    pub fn rotation(&self) -> Option<&[f32]> {
        self.rotation.as_deref()
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

    pub fn cell_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(|l| l.ids.len()).collect()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::invalid(format!("expected dimension {}, got {len}", self.dim())));
        }
        Ok(())
    }

    /// Residual in the space the PQ codebook lives in.
    fn pq_residual(&self, x: &[f32], cell: usize) -> Vec<f32> {
        let r: Vec<f32> = x.iter().zip(self.coarse.centroid(cell)).map(|(a, c)| a - c).collect();
        match &self.rotation {
            Some(rot) => {
                let mut out = vec![0.0f32; r.len()];
                rotate(rot, &r, &mut out);
                out
            }
            None => r,
        }
    }

    /// Cell and code the index would store for `x`.
    pub fn encode(&self, x: &[f32]) -> Result<(usize, Vec<u8>)> {
        self.check_dim(x.len())?;
        let cell = self.coarse.nearest(x).0;
        let code = self.pq.encode(&self.pq_residual(x, cell))?;
        Ok((cell, code))
    }

    /// `q_c + Rᵀ q_f` for a cell and code.
    pub fn decode(&self, cell: usize, code: &[u8]) -> Result<Vec<f32>> {
        if cell >= self.coarse.k() {
            return Err(Error::CorruptIndex(format!("cell {cell} out of range")));
        }
        let fine = self.pq.decode(code)?;
        let fine = match &self.rotation {
            Some(rot) => {
                let mut out = vec![0.0f32; fine.len()];
                rotate_back(rot, &fine, &mut out);
                out
            }
            None => fine,
        };
        Ok(self.coarse.centroid(cell).iter().zip(&fine).map(|(c, f)| c + f).collect())
    }

    /// `‖x − q(x)‖²` for a vector that may or may not be stored.
    pub fn quantization_error(&self, x: &[f32]) -> Result<f32> {
        let (cell, code) = self.encode(x)?;
        let q = self.decode(cell, &code)?;
        Ok(crate::index::kmeans::sq_dist(x, &q))
    }

    pub fn add(&mut self, id: u32, x: &[f32]) -> Result<()> {
        if self.locator.contains_key(&id) {
            return Err(Error::invalid(format!("id {id} is already in the index")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature"));
        }
        let (cell, code) = self.encode(x)?;
        let list = &mut self.lists[cell];
        self.locator.insert(id, (cell as u32, list.ids.len() as u32));
        list.ids.push(id);
        list.codes.extend_from_slice(&code);
        Ok(())
    }

    pub fn cell_of(&self, id: u32) -> Option<usize> {
        self.locator.get(&id).map(|&(c, _)| c as usize)
    }

    pub fn code_of(&self, id: u32) -> Option<&[u8]> {
        let &(c, p) = self.locator.get(&id)?;
        let m = self.pq.m();
        Some(&self.lists[c as usize].codes[p as usize * m..(p as usize + 1) * m])
    }

    pub fn reconstruct(&self, id: u32) -> Result<Vec<f32>> {
        let cell = self.cell_of(id).ok_or_else(|| Error::NotFound(format!("id {id} is not in the index")))?;
        let code = self.code_of(id).expect("located");
        self.decode(cell, code)
    }

    /// Probes the `nprobe` nearest cells and ranks their entries by ADC distance.
    pub fn search_with(&self, query: &[f32], k: usize, nprobe: usize) -> Result<SearchResult> {
        self.check_dim(query.len())?;
        if nprobe == 0 || nprobe > self.coarse.k() {
            return Err(Error::invalid(format!("nprobe must be in 1..={}", self.coarse.k())));
        }
        if self.is_empty() || k == 0 {
            return Ok(SearchResult::default());
        }
        let m = self.pq.m();
        let mut candidates = Vec::new();
        for cell in self.coarse.nearest_n(query, nprobe) {
            let list = &self.lists[cell];
            if list.ids.is_empty() {
                continue;
            }
            let table = self.pq.adc_tables(&self.pq_residual(query, cell))?;
            for (&id, code) in list.ids.iter().zip(list.codes.chunks_exact(m)) {
                let distance = table.checked_distance(code).map_err(|e| match e {
                    Error::CorruptIndex(msg) => Error::CorruptIndex(format!("cell {cell}, id {id}: {msg}")),
                    other => other,
                })?;
                candidates.push(Hit { id, distance });
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
