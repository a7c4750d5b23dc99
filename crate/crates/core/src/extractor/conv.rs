//! im2col convolution with zero padding `kernel / 2`, forward and input-adjoint.

use super::weights::LayerShape;

pub(crate) fn out_size(input: usize, layer: &LayerShape) -> usize {
    let pad = layer.kernel / 2;
    (input + 2 * pad - layer.kernel) / layer.stride + 1
}

fn im2col(input: &[f64], size: usize, layer: &LayerShape, out: usize) -> Vec<f64> {
    let (k, s, pad) = (layer.kernel, layer.stride, (layer.kernel / 2) as isize);
    let n = out * out;
    let mut cols = vec![0.0; layer.in_ch * k * k * n];
    for ic in 0..layer.in_ch {
        let plane = &input[ic * size * size..(ic + 1) * size * size];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ic * k + ky) * k + kx) * n..][..n];
                for oy in 0..out {
                    let iy = (oy * s) as isize + ky as isize - pad;
                    if iy < 0 || iy >= size as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * size..(iy as usize + 1) * size];
                    let dst = &mut row[oy * out..(oy + 1) * out];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - pad;
                        if ix >= 0 && ix < size as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], size: usize, layer: &LayerShape, out: usize) -> Vec<f64> {
    let (k, s, pad) = (layer.kernel, layer.stride, (layer.kernel / 2) as isize);
    let n = out * out;
    let mut grad = vec![0.0; layer.in_ch * size * size];
    for ic in 0..layer.in_ch {
        let plane = &mut grad[ic * size * size..(ic + 1) * size * size];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ic * k + ky) * k + kx) * n..][..n];
                for oy in 0..out {
                    let iy = (oy * s) as isize + ky as isize - pad;
                    if iy < 0 || iy >= size as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * size..(iy as usize + 1) * size];
                    for (ox, &g) in row[oy * out..(oy + 1) * out].iter().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - pad;
                        if ix >= 0 && ix < size as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
    grad
}

/// `weights` is `[out_ch][in_ch][k][k]` row-major, input is CHW.
pub(crate) fn forward(input: &[f64], size: usize, layer: &LayerShape, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let out = out_size(size, layer);
    let n = out * out;
    let kdim = layer.in_ch * layer.kernel * layer.kernel;
    let cols = im2col(input, size, layer, out);
    let mut result = vec![0.0; layer.out_ch * n];
    for (oc, chunk) in result.chunks_exact_mut(n).enumerate() {
        chunk.fill(bias[oc]);
    }
    // SAFETY: all buffers are sized m*k, k*n and m*n with row-major strides.
    unsafe {
        matrixmultiply::dgemm(
            layer.out_ch,
            kdim,
            n,
            1.0,
            weights.as_ptr(),
            kdim as isize,
            1,
            cols.as_ptr(),
            n as isize,
            1,
            1.0,
            result.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    result
}

/// Gradient with respect to the layer input given the gradient at its output.
pub(crate) fn backward_input(grad_out: &[f64], size: usize, layer: &LayerShape, weights: &[f64]) -> Vec<f64> {
    let out = out_size(size, layer);
    let n = out * out;
    let kdim = layer.in_ch * layer.kernel * layer.kernel;
    let mut cols = vec![0.0; kdim * n];
    // SAFETY: weights viewed transposed (kdim x out_ch) via swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            kdim,
            layer.out_ch,
            n,
            1.0,
            weights.as_ptr(),
            1,
            kdim as isize,
            grad_out.as_ptr(),
            n as isize,
            1,
            0.0,
            cols.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    col2im(&cols, size, layer, out)
}
