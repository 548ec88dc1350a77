//! Exact dense attention `D^-1 A V` with `A = exp(QK^T)` and `D = diag(A 1)`.
//!
//! No max-subtraction: the raw exponential is what the error bounds talk
//! about, so an overflowing score is an error rather than something to
//! rescale away.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ledger::QueryCostLedger;
use crate::linalg::{scores_into, DenseMatrix};

/// Largest `n` for which an `n x n` matrix is materialized.
pub const DENSE_GUARD: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub matrix: DenseMatrix,
    /// Diagonal of `D`.
    pub row_sums: Vec<f64>,
}

fn check_shapes(q: &DenseMatrix, k_mat: &DenseMatrix, v: Option<&DenseMatrix>) -> Result<()> {
    if q.cols() != k_mat.cols() {
        return Err(Error::Shape(format!(
            "Q has {} columns, K has {}",
            q.cols(),
            k_mat.cols()
        )));
    }
    if let Some(v) = v {
        if v.rows() != k_mat.rows() {
            return Err(Error::Shape(format!(
                "V has {} rows, K has {}",
                v.rows(),
                k_mat.rows()
            )));
        }
    }
    Ok(())
}

/// Exponentiates a row of scores in place.
fn exp_row(i: usize, row: &mut [f64]) -> Result<()> {
    for (j, s) in row.iter_mut().enumerate() {
        let e = s.exp();
        if !e.is_finite() {
            return Err(Error::Range {
                row: i,
                col: j,
                score: *s,
            });
        }
        *s = e;
    }
    Ok(())
}

/// `(sum_j w_j V_j) / sum_j w_j`, both sums taken in index order.
///
/// Shared by the exact path and the dense-`B` path so that equal weight rows
/// give bit-equal outputs.
pub(crate) fn weighted_row(weights: &[f64], v: &DenseMatrix, out: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for &w in weights {
        total += w;
    }
    out.fill(0.0);
    for (j, &w) in weights.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(v.row(j)) {
            *o += w * x;
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    total
}

/// Row-normalizes `weights` (an `n x n` matrix) and multiplies by `v`.
pub(crate) fn normalized_product(weights: &DenseMatrix, v: &DenseMatrix) -> AttentionOutput {
    let d = v.cols();
    let mut data = vec![0.0; weights.rows() * d];
    let row_sums: Vec<f64> = data
        .par_chunks_mut(d)
        .enumerate()
        .map(|(i, out)| weighted_row(weights.row(i), v, out))
        .collect();
    AttentionOutput {
        matrix: DenseMatrix::from_parts_unchecked(weights.rows(), d, data),
        row_sums,
    }
}

/// Row sums of `weights`, in index order.
pub(crate) fn row_sums(weights: &DenseMatrix) -> Vec<f64> {
    (0..weights.rows())
        .map(|i| weights.row(i).iter().fold(0.0, |acc, w| acc + w))
        .collect()
}

pub fn exact_attention(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    v: &DenseMatrix,
) -> Result<AttentionOutput> {
    exact_attention_metered(q, k_mat, v, &mut QueryCostLedger::new())
}

/// [`exact_attention`] that charges `2 n^2 d + n d_v` flops: the score
/// products, the weighted sum and the normalization.
pub fn exact_attention_metered(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    v: &DenseMatrix,
    ledger: &mut QueryCostLedger,
) -> Result<AttentionOutput> {
    check_shapes(q, k_mat, Some(v))?;
    let n = k_mat.rows();
    let dv = v.cols();
    let mut data = vec![0.0; q.rows() * dv];
    let row_sums = data
        .par_chunks_mut(dv)
        .enumerate()
        .map(|(i, out)| {
            let mut a = vec![0.0; n];
            scores_into(q.row(i), k_mat, &mut a);
            exp_row(i, &mut a)?;
            Ok(weighted_row(&a, v, out))
        })
        .collect::<Result<Vec<f64>>>()?;
    let rows = q.rows() as u64;
    ledger.charge_flops(
        rows * n as u64 * k_mat.cols() as u64 + rows * n as u64 * dv as u64 + rows * dv as u64,
    );
    Ok(AttentionOutput {
        matrix: DenseMatrix::from_parts_unchecked(q.rows(), dv, data),
        row_sums,
    })
}

/// Materializes `A = exp(QK^T)`. Refuses more than [`DENSE_GUARD`] rows or
/// columns.
pub fn exact_dense_a(q: &DenseMatrix, k_mat: &DenseMatrix) -> Result<DenseMatrix> {
    check_shapes(q, k_mat, None)?;
    let n = q.rows().max(k_mat.rows());
    if n > DENSE_GUARD {
        return Err(Error::TooLarge {
            n,
            limit: DENSE_GUARD,
        });
    }
    let m = k_mat.rows();
    let mut data = vec![0.0; q.rows() * m];
    data.par_chunks_mut(m)
        .enumerate()
        .try_for_each(|(i, row)| {
            scores_into(q.row(i), k_mat, row);
            exp_row(i, row)
        })?;
    Ok(DenseMatrix::from_parts_unchecked(q.rows(), m, data))
}
