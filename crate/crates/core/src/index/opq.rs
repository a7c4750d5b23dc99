//! Optimized product quantization trained by Procrustes alternation.

use nalgebra::DMatrix;

use crate::index::pq::PqCodebook;
use crate::{Error, Result};

/// A learned orthonormal rotation and the PQ codebook for rotated vectors.
#[derive(Clone, Debug)]
pub struct OpqModel {
    /// Row-major `dim × dim`; a vector is rotated as `R x`.
    pub rotation: Vec<f32>,
    pub pq: PqCodebook,
    /// Mean squared reconstruction error after each round.
    pub error_trace: Vec<f64>,
}

pub fn identity(dim: usize) -> Vec<f32> {
    let mut r = vec![0.0f32; dim * dim];
    for i in 0..dim {
        r[i * dim + i] = 1.0;
    }
    r
}

pub fn rotate(rotation: &[f32], x: &[f32], out: &mut [f32]) {
    let dim = x.len();
    for (o, row) in out.iter_mut().zip(rotation.chunks_exact(dim)) {
        *o = row.iter().zip(x).map(|(a, b)| (*a as f64) * (*b as f64)).sum::<f64>() as f32;
    }
}

/// `Rᵀ y`.
pub fn rotate_back(rotation: &[f32], y: &[f32], out: &mut [f32]) {
    let dim = y.len();
    let mut acc = vec![0.0f64; dim];
    for (row, &yi) in rotation.chunks_exact(dim).zip(y) {
        for (a, &r) in acc.iter_mut().zip(row) {
            *a += r as f64 * yi as f64;
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = a as f32;
    }
}

fn rotate_all(rotation: &[f32], data: &[f32], dim: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for (x, o) in data.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        rotate(rotation, x, o);
    }
    out
}

/// Procrustes step: the orthonormal `R` minimising `Σ ‖R x − y‖²`, where `y`
/// is the decoded reproduction of the rotated `x`.
fn procrustes(data: &[f32], decoded: &[f32], dim: usize) -> Result<Vec<f32>> {
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (x, y) in data.chunks_exact(dim).zip(decoded.chunks_exact(dim)) {
        for i in 0..dim {
            let yi = y[i] as f64;
            for j in 0..dim {
                m[(i, j)] += yi * x[j] as f64;
            }
        }
    }
    let svd = m
        .clone()
        .try_svd(true, true, 1e-12, 10_000)
        .ok_or_else(|| Error::Numeric(format!("SVD of the {dim}x{dim} cross-covariance did not converge")))?;
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numeric("SVD returned no singular vectors".into())),
    };
    let r = u * vt;
    if r.iter().any(|v| !v.is_finite()) {
        let norm = m.norm();
        return Err(Error::Numeric(format!(
            "non-finite Procrustes rotation (cross-covariance Frobenius norm {norm})"
        )));
    }
    let mut out = vec![0.0f32; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            out[i * dim + j] = r[(i, j)] as f32;
        }
    }
    Ok(out)
}

/// Alternates PQ training on rotated data with a Procrustes rotation update.
/// The rotation starts at identity, so a single round is plain PQ.
pub fn train_opq(
    data: &[f32],
    dim: usize,
    m: usize,
    ks: usize,
    rounds: usize,
    iterations: usize,
    seed: u64,
) -> Result<OpqModel> {
    if rounds == 0 {
        return Err(Error::invalid("OPQ needs at least one round"));
    }
    let mut rotation = identity(dim);
    let mut pq = PqCodebook::train(data, dim, m, ks, iterations, seed)?;
    let mut error_trace = vec![pq.mean_error(data)?];
    for round in 1..rounds {
        let rotated = rotate_all(&rotation, data, dim);
        let mut decoded = vec![0.0f32; data.len()];
        let mut code = vec![0u8; m];
        for (x, y) in rotated.chunks_exact(dim).zip(decoded.chunks_exact_mut(dim)) {
            pq.encode_into(x, &mut code);
            for (j, &c) in code.iter().enumerate() {
                let d = pq.dsub();
                y[j * d..(j + 1) * d].copy_from_slice(pq.sub_codeword(j, c as usize));
            }
        }
        rotation = procrustes(data, &decoded, dim)?;
        let rotated = rotate_all(&rotation, data, dim);
        pq = pq.refine(&rotated, iterations)?;
        let err = pq.mean_error(&rotated)?;
        log::debug!("OPQ round {round}: mean error {err:.6}");
        error_trace.push(err);
    }
    Ok(OpqModel {
        rotation,
        pq,
        error_trace,
    })
}
