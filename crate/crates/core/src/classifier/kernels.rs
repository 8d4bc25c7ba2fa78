//! Addition-only linear-algebra kernels for binary activation vectors.
//!
//! With activations in {0,1}, a matrix-vector product degenerates to summing
//! the weight columns picked out by the set bits; the backward pass skips
//! whole rows wherever the surrogate gradient is zero; and the weight
//! gradient is the error vector transcribed into the columns selected by the
//! activations. Each kernel is bit-exact against the dense floating-point
//! computation because skipping a zero term never changes an IEEE sum.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// `out = weights . bits`: the sum of the weight columns selected by set
/// bits. `weights` is `rows x cols`, `bits` has length `cols`.
pub fn binary_matvec(weights: &ArrayView2<f64>, bits: &[u8]) -> Result<Vec<f64>> {
    let (rows, cols) = weights.dim();
    if bits.len() != cols {
        return Err(Error::DimMismatch(format!(
            "matrix has {cols} columns, bit vector has {}",
            bits.len()
        )));
    }
    let mut out = vec![0.0; rows];
    for (i, out_i) in out.iter_mut().enumerate() {
        let row = weights.row(i);
        let mut acc = 0.0;
        for (j, &b) in bits.iter().enumerate() {
            if b != 0 {
                acc += row[j];
            }
        }
        *out_i = acc;
    }
    Ok(out)
}

/// Transposed-storage twin of [`binary_matvec`]: `weights_t` is `cols x rows`
/// and the result is `weights_t^T . bits`. Sums run over ascending storage
/// rows, so every output element accumulates the same terms in the same
/// order as [`binary_matvec`] on the transposed view — bit-identical results,
/// but with contiguous row reads.
pub(crate) fn binary_matvec_t(weights_t: &ArrayView2<f64>, bits: &[u8]) -> Vec<f64> {
    let (cols, rows) = weights_t.dim();
    debug_assert_eq!(bits.len(), cols);
    let mut out = vec![0.0; rows];
    for (j, &b) in bits.iter().enumerate() {
        if b != 0 {
            let row = weights_t.row(j);
            for (o, &w) in out.iter_mut().zip(row.iter()) {
                *o += w;
            }
        }
    }
    out
}

/// `delta = (W^T . delta_next) ⊙ mask`, skipping the row-column products for
/// every row whose mask bit is zero. `weights_t` is the already-transposed
/// matrix (`n x m`), `delta_next` has length `m`, `mask` length `n`.
pub fn masked_backward_matvec(
    weights_t: &ArrayView2<f64>,
    delta_next: &[f64],
    mask: &[u8],
) -> Result<Vec<f64>> {
    let (n, m) = weights_t.dim();
    if delta_next.len() != m {
        return Err(Error::DimMismatch(format!(
            "matrix has {m} columns, delta has {}",
            delta_next.len()
        )));
    }
    if mask.len() != n {
        return Err(Error::DimMismatch(format!("matrix has {n} rows, mask has {}", mask.len())));
    }
    let mut out = vec![0.0; n];
    for (i, out_i) in out.iter_mut().enumerate() {
        if mask[i] == 0 {
            continue;
        }
        let row = weights_t.row(i);
        let mut acc = 0.0;
        for (w, d) in row.iter().zip(delta_next.iter()) {
            acc += w * d;
        }
        *out_i = acc;
    }
    Ok(out)
}

/// The outer product `delta . bits^T` without multiplications: column `j` of
/// the result is a copy of `delta` when bit `j` is set, zero otherwise.
pub fn transcription_outer(delta: &[f64], bits: &[u8]) -> Result<Array2<f64>> {
    let (n, m) = (delta.len(), bits.len());
    if n == 0 || m == 0 {
        return Err(Error::DimMismatch("empty operand in outer product".into()));
    }
    let mut out = Array2::zeros((n, m));
    for (j, &b) in bits.iter().enumerate() {
        if b != 0 {
            for i in 0..n {
                out[[i, j]] = delta[i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod oracles {
    //! Dense floating-point references the kernels are checked against.
    //! These stay independent of the kernel implementations.

    use ndarray::{Array2, ArrayView2};

    pub fn dense_matvec(weights: &ArrayView2<f64>, x: &[f64]) -> Vec<f64> {
        let (rows, cols) = weights.dim();
        assert_eq!(cols, x.len());
        (0..rows)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..cols {
                    acc += weights[[i, j]] * x[j];
                }
                acc
            })
            .collect()
    }

    pub fn dense_then_mask(weights_t: &ArrayView2<f64>, delta: &[f64], mask: &[u8]) -> Vec<f64> {
        let full = dense_matvec(weights_t, delta);
        full.iter().zip(mask.iter()).map(|(&v, &m)| if m != 0 { v } else { 0.0 }).collect()
    }

    pub fn dense_outer(delta: &[f64], x: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((delta.len(), x.len()), |(i, j)| delta[i] * x[j])
    }
}
