//! Approximate nearest-neighbor indexes.
//!
//! [`IvfPqIndex`] is the central structure: a k-means coarse quantizer
//! whose cells hold product-quantized residuals, searched with asymmetric
//! distance tables. Plain PQ and OPQ are the single-cell case (optionally
//! with a learned rotation). [`IvfFlatIndex`] keeps the full vectors and
//! [`LshIndex`] stores binary sketches of a PCA projection.
//!
//! Ties are broken towards the lowest index everywhere: the lowest centroid
//! on assignment, the lowest codeword on encoding and the lowest id in
//! result lists.

mod io;
mod ivfflat;
mod ivfpq;
mod kmeans;
mod lsh;
mod opq;
mod pq;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{load_index, save_index, INDEX_MAGIC, INDEX_VERSION};
pub use ivfflat::IvfFlatIndex;
pub use ivfpq::{IvfPqIndex, IvfPqParams, IvfPqTrainStats};
pub use kmeans::{kmeans, kmeans_pp_init, kmeans_with_trace, lloyd, sq_dist, Codebook, KMeansOutcome};
pub use lsh::{train_pca_lsh, LshIndex};
pub use opq::{train_opq, OpqModel};
pub use pq::{AdcTable, PqCodebook};

/// One search result entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u32,
    /// Estimated squared distance, or Hamming distance for LSH.
    pub distance: f32,
}

/// Hits in ascending distance order, ties by lower id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

impl SearchResult {
    pub fn top(&self) -> Option<&Hit> {
        self.hits.first()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

fn hit_order(a: &Hit, b: &Hit) -> std::cmp::Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

pub(crate) fn top_k(mut candidates: Vec<Hit>, k: usize) -> SearchResult {
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, hit_order);
        candidates.truncate(k);
    }
    candidates.sort_by(hit_order);
    SearchResult { hits: candidates }
}

/// How to build an index from training vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum IndexSpec {
    IvfPq(IvfPqParams),
    IvfFlat { k: usize, nprobe: usize, iterations: usize },
    Lsh { out_dim: usize, bits: usize },
}

/// Named index configurations.
pub const PRESETS: [&str; 6] = ["ivfpq", "ivfpq_dagger", "pq", "opq", "ivf", "lsh"];

impl IndexSpec {
    pub fn preset(name: &str) -> Result<IndexSpec> {
        let base = IvfPqParams::default();
        Ok(match name {
            "ivfpq" => IndexSpec::IvfPq(base),
            "ivfpq_dagger" => IndexSpec::IvfPq(IvfPqParams {
                k: 8,
                m: 32,
                nprobe: 2,
                ..base
            }),
            "pq" => IndexSpec::IvfPq(IvfPqParams { k: 1, ..base }),
            "opq" => IndexSpec::IvfPq(IvfPqParams {
                k: 1,
                opq_rounds: 5,
                ..base
            }),
            "ivf" => IndexSpec::IvfFlat {
                k: 64,
                nprobe: 1,
                iterations: 20,
            },
            "lsh" => IndexSpec::Lsh { out_dim: 64, bits: 64 },
            other => {
                return Err(Error::invalid(format!(
                    "unknown index preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn train(&self, data: &[f32], dim: usize, seed: u64) -> Result<AnyIndex> {
        Ok(match self {
            IndexSpec::IvfPq(p) => AnyIndex::IvfPq(IvfPqIndex::train(data, dim, p, seed)?.0),
            IndexSpec::IvfFlat { k, nprobe, iterations } => {
                AnyIndex::IvfFlat(IvfFlatIndex::train(data, dim, *k, *nprobe, *iterations, seed)?.0)
            }
            IndexSpec::Lsh { out_dim, bits } => AnyIndex::Lsh(train_pca_lsh(data, dim, *out_dim, *bits, seed)?),
        })
    }
}

/// Any of the index families behind one interface.
#[derive(Clone, Debug)]
pub enum AnyIndex {
    IvfPq(IvfPqIndex),
    IvfFlat(IvfFlatIndex),
    Lsh(LshIndex),
}

impl AnyIndex {
    pub fn family(&self) -> &'static str {
        match self {
            AnyIndex::IvfPq(i) if i.coarse().k() == 1 && i.rotation().is_some() => "opq",
            AnyIndex::IvfPq(i) if i.coarse().k() == 1 => "pq",
            AnyIndex::IvfPq(_) => "ivfpq",
            AnyIndex::IvfFlat(_) => "ivf",
            AnyIndex::Lsh(_) => "lsh",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnyIndex::IvfPq(i) => i.dim(),
            AnyIndex::IvfFlat(i) => i.dim(),
            AnyIndex::Lsh(i) => i.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AnyIndex::IvfPq(i) => i.len(),
            AnyIndex::IvfFlat(i) => i.len(),
            AnyIndex::Lsh(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add(&mut self, id: u32, x: &[f32]) -> Result<()> {
        match self {
            AnyIndex::IvfPq(i) => i.add(id, x),
            AnyIndex::IvfFlat(i) => i.add(id, x),
            AnyIndex::Lsh(i) => i.add(id, x),
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        match self {
            AnyIndex::IvfPq(i) => i.cell_of(id).is_some(),
            AnyIndex::IvfFlat(i) => i.cell_of(id).is_some(),
            AnyIndex::Lsh(i) => i.hash_of(id).is_some(),
        }
    }

    /// Searches with the index's configured probe count.
    pub fn search(&self, query: &[f32], k: usize) -> Result<SearchResult> {
        match self {
            AnyIndex::IvfPq(i) => i.search(query, k),
            AnyIndex::IvfFlat(i) => i.search(query, k),
            AnyIndex::Lsh(i) => i.search(query, k),
        }
    }

    /// Searches probing `nprobe` cells; LSH has no cells and ignores it.
    pub fn search_with(&self, query: &[f32], k: usize, nprobe: usize) -> Result<SearchResult> {
        match self {
            AnyIndex::IvfPq(i) => i.search_with(query, k, nprobe),
            AnyIndex::IvfFlat(i) => i.search_with(query, k, nprobe),
            AnyIndex::Lsh(i) => i.search(query, k),
        }
    }

    pub fn set_nprobe(&mut self, nprobe: usize) -> Result<()> {
        match self {
            AnyIndex::IvfPq(i) => i.set_nprobe(nprobe),
            AnyIndex::IvfFlat(i) => i.set_nprobe(nprobe),
            AnyIndex::Lsh(_) => Ok(()),
        }
    }

    /// The coarse quantizer, for cell-based families.
    pub fn coarse(&self) -> Option<&Codebook> {
        match self {
            AnyIndex::IvfPq(i) => Some(i.coarse()),
            AnyIndex::IvfFlat(i) => Some(i.coarse()),
            AnyIndex::Lsh(_) => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        io::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AnyIndex> {
        io::from_bytes(bytes)
    }
}
