//! Indexation losses pulling a feature towards what the index stores.

use serde::{Deserialize, Serialize};

use crate::index::AnyIndex;
use crate::{Error, Result};

/// Which index-side quantity the loss pulls towards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Full reproduction value `q_c(x_o) + q_f(x_o − q_c(x_o))`.
    Ivfpq,
    /// Coarse centroid `q_c(x_o)`.
    Ivf,
    /// PQ reproduction value.
    Pq,
    /// PQ reproduction value mapped back through the OPQ rotation.
    Opq,
    /// Hash directions with the signs stored for `x_o`.
    Lsh,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ivfpq => "ivfpq",
            LossKind::Ivf => "ivf",
            LossKind::Pq => "pq",
            LossKind::Opq => "opq",
            LossKind::Lsh => "lsh",
        }
    }

    /// The natural loss for an index family.
    pub fn for_index(index: &AnyIndex) -> LossKind {
        match index.family() {
            "pq" => LossKind::Pq,
            "opq" => LossKind::Opq,
            "ivf" => LossKind::Ivf,
            "lsh" => LossKind::Lsh,
            _ => LossKind::Ivfpq,
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ivfpq" => LossKind::Ivfpq,
            "ivf" => LossKind::Ivf,
            "pq" => LossKind::Pq,
            "opq" => LossKind::Opq,
            "lsh" => LossKind::Lsh,
            other => return Err(Error::invalid(format!("unknown loss kind {other:?}"))),
        })
    }
}

/// Frozen target derived from the stored entry of one id.
#[derive(Clone, Debug, PartialEq)]
pub enum LossTarget {
    /// Squared distance to a fixed point.
    Point { kind: LossKind, target: Vec<f64> },
    /// `−(1/L) Σ_j s_j (v_jᵀ x − o_j)` with feature-space directions `v_j`
    /// (row-major `L × d`) and offsets `o_j`.
    Hash {
        directions: Vec<f64>,
        offsets: Vec<f64>,
        signs: Vec<f64>,
    },
}

impl LossTarget {
    /// Builds the target for `id` from what `index` stores for it.
    pub fn from_index(index: &AnyIndex, id: u32, kind: LossKind) -> Result<LossTarget> {
        let missing = || Error::NotFound(format!("id {id} is not in the index"));
        let mismatch = || {
            Error::invalid(format!(
                "loss kind {} does not apply to a {} index",
                kind.name(),
                index.family()
            ))
        };
        let point = |v: Vec<f32>| LossTarget::Point {
            kind,
            target: v.into_iter().map(f64::from).collect(),
        };
        match (kind, index) {
            (LossKind::Ivfpq | LossKind::Pq | LossKind::Opq, AnyIndex::IvfPq(i)) => {
                if kind == LossKind::Opq && i.rotation().is_none() {
                    return Err(mismatch());
                }
                Ok(point(i.reconstruct(id)?))
            }
            (LossKind::Ivf, AnyIndex::IvfPq(i)) => {
                let cell = i.cell_of(id).ok_or_else(missing)?;
                Ok(point(i.coarse().centroid(cell).to_vec()))
            }
            (LossKind::Ivf, AnyIndex::IvfFlat(i)) => Ok(point(i.cell_centroid(id)?)),
            (LossKind::Lsh, AnyIndex::Lsh(i)) => {
                let hash = i.hash_of(id).ok_or_else(missing)?;
                let signs = i.signs(hash);
                let (directions, offsets) = i.directions();
                Ok(LossTarget::Hash {
                    directions,
                    offsets,
                    signs,
                })
            }
            _ => Err(mismatch()),
        }
    }

    /// Target for a hash loss computed from raw hyperplanes and the signs of
    /// a reference vector.
    pub fn hash_from_reference(directions: Vec<f64>, offsets: Vec<f64>, reference: &[f64]) -> Result<LossTarget> {
        let dim = reference.len();
        if dim == 0 || directions.len() % dim != 0 || directions.len() / dim != offsets.len() {
            return Err(Error::invalid("direction/offset shapes do not match the reference"));
        }
        let signs = directions
            .chunks_exact(dim)
            .zip(&offsets)
            .map(|(v, o)| {
                let r: f64 = v.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() - o;
                if r > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        Ok(LossTarget::Hash {
            directions,
            offsets,
            signs,
        })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossTarget::Point { kind, .. } => *kind,
            LossTarget::Hash { .. } => LossKind::Lsh,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LossTarget::Point { target, .. } => target.len(),
            LossTarget::Hash { directions, signs, .. } => directions.len() / signs.len().max(1),
        }
    }

    /// Distance used to report progress: `‖x − target‖` for point targets,
    /// the loss value itself for hash targets.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let value = self.value_and_gradient(x)?.0;
        Ok(match self {
            LossTarget::Point { .. } => value.sqrt(),
            LossTarget::Hash { .. } => value,
        })
    }

    /// Loss value and gradient with respect to the feature.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature has dimension {}, loss target expects {}",
                x.len(),
                self.dim()
            )));
        }
        match self {
            LossTarget::Point { target, .. } => {
                let diff: Vec<f64> = x.iter().zip(target).map(|(a, b)| a - b).collect();
                let value = diff.iter().map(|d| d * d).sum();
                Ok((value, diff.into_iter().map(|d| 2.0 * d).collect()))
            }
            LossTarget::Hash {
                directions,
                offsets,
                signs,
            } => {
                let l = signs.len() as f64;
                let dim = x.len();
                let mut value = 0.0;
                let mut grad = vec![0.0; dim];
                for ((v, o), s) in directions.chunks_exact(dim).zip(offsets).zip(signs) {
                    let r: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - o;
                    value -= s * r / l;
                    for (g, a) in grad.iter_mut().zip(v) {
                        *g -= s * a / l;
                    }
                }
                Ok((value, grad))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_minimum_is_zero() {
        let t = LossTarget::Point {
            kind: LossKind::Ivfpq,
            target: vec![0.5, -0.25, 1.0],
        };
        let (v, g) = t.value_and_gradient(&[0.5, -0.25, 1.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(t.value_and_gradient(&[0.0; 2]).is_err());
    }

    #[test]
    fn hash_loss_at_reference_is_mean_absolute_response() {
        let dirs = vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
        let offsets = vec![0.1, -0.2, 0.3];
        let x = [0.7, -0.4];
        let t = LossTarget::hash_from_reference(dirs.clone(), offsets.clone(), &x).unwrap();
        let (v, _) = t.value_and_gradient(&x).unwrap();
        let expect: f64 = dirs
            .chunks_exact(2)
            .zip(&offsets)
            .map(|(d, o)| (d[0] * x[0] + d[1] * x[1] - o).abs())
            .sum::<f64>()
            / 3.0;
        assert!((v + expect).abs() < 1e-12);
    }

    #[test]
    fn kinds_parse() {
        for k in [LossKind::Ivfpq, LossKind::Ivf, LossKind::Pq, LossKind::Opq, LossKind::Lsh] {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("hnsw".parse::<LossKind>().is_err());
    }
}
