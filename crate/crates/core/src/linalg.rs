//! Dense matrices, support sets and the goodness checker.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `f64` matrix with at least one row and one column and only
/// finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix has an empty dimension"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Overwrites one entry. Non-finite values are rejected.
    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                len: self.rows.max(self.cols),
            });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { row: i, col: j });
        }
        self.data[i * self.cols + j] = value;
        Ok(())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }
}

/// Inner product accumulated strictly left to right from `0.0`.
///
/// Every score in the crate goes through this summation order, so a score
/// computed by any finder, the dense reference or the box bounds in the HSR
/// tree is bit-identical for the same pair of rows.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Four independent [`dot`]s against the same left operand. Each lane keeps
/// the left-to-right order, so results are bit-identical to four `dot` calls.
#[inline]
fn dot4(a: &[f64], b0: &[f64], b1: &[f64], b2: &[f64], b3: &[f64]) -> [f64; 4] {
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for l in 0..a.len() {
        let x = a[l];
        s0 += x * b0[l];
        s1 += x * b1[l];
        s2 += x * b2[l];
        s3 += x * b3[l];
    }
    [s0, s1, s2, s3]
}

/// Writes `<a, b_j>` for every row `b_j` of `b` into `out`.
pub(crate) fn scores_into(a: &[f64], b: &DenseMatrix, out: &mut [f64]) {
    let n = b.rows();
    let mut j = 0;
    while j + 4 <= n {
        let s = dot4(a, b.row(j), b.row(j + 1), b.row(j + 2), b.row(j + 3));
        out[j..j + 4].copy_from_slice(&s);
        j += 4;
    }
    for (jj, o) in out.iter_mut().enumerate().take(n).skip(j) {
        *o = dot(a, b.row(jj));
    }
}

/// `a * b_transposed^T`, i.e. all pairwise row inner products.
pub fn matmul(a: &DenseMatrix, b_transposed: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b_transposed.cols() {
        return Err(Error::Shape(format!(
            "inner dimensions differ: {} vs {}",
            a.cols(),
            b_transposed.cols()
        )));
    }
    let m = b_transposed.rows();
    let mut data = vec![0.0; a.rows() * m];
    data.par_chunks_mut(m)
        .enumerate()
        .for_each(|(i, out)| scores_into(a.row(i), b_transposed, out));
    Ok(DenseMatrix::from_parts_unchecked(a.rows(), m, data))
}

/// Entrywise max-norm of `x - y`.
pub fn entrywise_inf_norm_diff(x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    Ok(x.data()
        .iter()
        .zip(y.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Per-row support sets `S_i = {j : score_ij >= tau}` with their raw scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportSets {
    pub n: usize,
    pub tau: f64,
    pub rows: Vec<Vec<usize>>,
    pub scores: Vec<Vec<f64>>,
}

impl SupportSets {
    /// Builds from per-row `(index, score)` lists; each row is sorted by index.
    pub fn from_pairs(n: usize, tau: f64, pairs: Vec<Vec<(usize, f64)>>) -> Self {
        let mut rows = Vec::with_capacity(pairs.len());
        let mut scores = Vec::with_capacity(pairs.len());
        for mut row in pairs {
            row.sort_by_key(|p| p.0);
            row.dedup_by_key(|p| p.0);
            rows.push(row.iter().map(|p| p.0).collect());
            scores.push(row.iter().map(|p| p.1).collect());
        }
        Self {
            n,
            tau,
            rows,
            scores,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn max_row_support(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn total_support(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Same indices and bit-identical scores.
    pub fn identical(&self, other: &SupportSets) -> bool {
        self.n == other.n
            && self.rows == other.rows
            && self.scores.len() == other.scores.len()
            && self.scores.iter().zip(&other.scores).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Indices of rows whose index lists differ from `other`.
    pub fn mismatched_rows(&self, other: &SupportSets) -> Vec<usize> {
        (0..self.rows.len().max(other.rows.len()))
            .filter(|&i| self.rows.get(i) != other.rows.get(i))
            .collect()
    }
}

/// `C = B - 11^T`: stored values are `exp(score) - 1` on the support.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCorrection {
    pub n: usize,
    pub row_indices: Vec<Vec<usize>>,
    pub row_values: Vec<Vec<f64>>,
}

impl SparseCorrection {
    pub fn nnz(&self) -> usize {
        self.row_indices.iter().map(Vec::len).sum()
    }
}

/// Summary of the score matrix against `(tau, k, eta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodnessReport {
    pub is_good: bool,
    pub max_row_support: usize,
    /// `+inf` when no score reaches `tau`.
    pub min_on_support_score: f64,
    /// `-inf` when every score reaches `tau`.
    pub max_off_support_score: f64,
    /// `+inf` when every score reaches `tau`.
    pub min_off_support_score: f64,
    pub tau: f64,
    pub k: usize,
    pub eta: f64,
}

impl GoodnessReport {
    /// The first failing condition, if any.
    pub fn violation(&self) -> Option<String> {
        if self.max_row_support > self.k {
            return Some(format!(
                "row support {} exceeds k = {}",
                self.max_row_support, self.k
            ));
        }
        if self.min_on_support_score < self.tau {
            return Some(format!(
                "on-support score {} is below tau = {}",
                self.min_on_support_score, self.tau
            ));
        }
        if self.max_off_support_score > 0.0 {
            return Some(format!(
                "off-support score {} is above 0",
                self.max_off_support_score
            ));
        }
        if self.min_off_support_score < -self.eta {
            return Some(format!(
                "off-support score {} is below -eta = {}",
                self.min_off_support_score, -self.eta
            ));
        }
        None
    }
}

/// Checks `(tau, k)`-goodness plus the `[-eta, 0]` off-support band on the
/// full score matrix. Slow path: `O(n^2 d)`.
pub fn check_goodness(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    tau: f64,
    k: usize,
    eta: f64,
) -> Result<GoodnessReport> {
    if q.cols() != k_mat.cols() {
        return Err(Error::Shape(format!(
            "Q has {} columns, K has {}",
            q.cols(),
            k_mat.cols()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
    }
    #[derive(Clone, Copy)]
    struct RowStats {
        support: usize,
        min_on: f64,
        max_off: f64,
        min_off: f64,
    }
    let n = k_mat.rows();
    let stats: Vec<RowStats> = (0..q.rows())
        .into_par_iter()
        .map(|i| {
            let mut scores = vec![0.0; n];
            scores_into(q.row(i), k_mat, &mut scores);
            let mut st = RowStats {
                support: 0,
                min_on: f64::INFINITY,
                max_off: f64::NEG_INFINITY,
                min_off: f64::INFINITY,
            };
            for &s in &scores {
                if s >= tau {
                    st.support += 1;
                    st.min_on = st.min_on.min(s);
                } else {
                    st.max_off = st.max_off.max(s);
                    st.min_off = st.min_off.min(s);
                }
            }
            st
        })
        .collect();
    let mut report = GoodnessReport {
        is_good: false,
        max_row_support: 0,
        min_on_support_score: f64::INFINITY,
        max_off_support_score: f64::NEG_INFINITY,
        min_off_support_score: f64::INFINITY,
        tau,
        k,
        eta,
    };
    for st in stats {
        report.max_row_support = report.max_row_support.max(st.support);
        report.min_on_support_score = report.min_on_support_score.min(st.min_on);
        report.max_off_support_score = report.max_off_support_score.max(st.max_off);
        report.min_off_support_score = report.min_off_support_score.min(st.min_off);
    }
    report.is_good = report.violation().is_none();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    fn triple_loop(a: &DenseMatrix, b: &DenseMatrix) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let mut s = 0.0;
                for l in 0..a.cols() {
                    s += a.get(i, l) * b.get(j, l);
                }
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            DenseMatrix::new(0, 2, vec![]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn matmul_orthogonal_and_identity() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[0.0]);
        let i2 = DenseMatrix::identity(2).unwrap();
        assert_eq!(matmul(&i2, &i2).unwrap(), i2);
    }

    #[test]
    fn matmul_matches_triple_loop_on_seeded_pair() {
        let a = random(3, 2, 11);
        let b = random(3, 2, 12);
        assert_eq!(
            matmul(&a, &b).unwrap().data(),
            triple_loop(&a, &b).as_slice()
        );
    }

    #[test]
    fn matmul_shape_error() {
        let a = random(2, 3, 1);
        let b = random(2, 2, 2);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn inf_norm_examples() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[vec![1.0, 5.0]]).unwrap();
        assert_eq!(entrywise_inf_norm_diff(&x, &x).unwrap(), 0.0);
        assert_eq!(entrywise_inf_norm_diff(&x, &y).unwrap(), 3.0);
        let z = random(2, 1, 3);
        assert!(entrywise_inf_norm_diff(&x, &z).is_err());
    }

    #[test]
    fn inf_norm_matches_scan() {
        let x = random(5, 7, 4);
        let y = random(5, 7, 5);
        let mut best = 0.0f64;
        for i in 0..5 {
            for j in 0..7 {
                let d = (x.get(i, j) - y.get(i, j)).abs();
                if d > best {
                    best = d;
                }
            }
        }
        assert_eq!(entrywise_inf_norm_diff(&x, &y).unwrap(), best);
    }

    #[test]
    fn goodness_zero_matrices() {
        let z = DenseMatrix::zeros(4, 3).unwrap();
        for (tau, k, eta) in [(0.5, 0, 0.0), (3.0, 2, 0.1)] {
            let r = check_goodness(&z, &z, tau, k, eta).unwrap();
            assert!(r.is_good);
            assert_eq!(r.max_row_support, 0);
            assert_eq!(r.max_off_support_score, 0.0);
            assert_eq!(r.min_off_support_score, 0.0);
        }
    }

    #[test]
    fn goodness_hand_built_4x4() {
        let tau = 2.0 * 4f64.ln();
        let mut s = vec![vec![-0.01; 4]; 4];
        s[0][1] = tau;
        s[1][2] = tau + 0.5;
        s[1][3] = tau + 1.0;
        s[2][0] = tau + 0.2;
        s[3][3] = tau + 0.9;
        let q = DenseMatrix::from_rows(&s).unwrap();
        let k = DenseMatrix::identity(4).unwrap();
        let r = check_goodness(&q, &k, tau, 2, 0.01).unwrap();
        assert!(r.is_good, "{r:?}");
        assert_eq!(r.max_row_support, 2);
        assert_eq!(r.min_on_support_score, tau);
        // k = 1 is violated by row 1.
        assert!(!check_goodness(&q, &k, tau, 1, 0.01).unwrap().is_good);
        // Off-support band is violated once eta shrinks.
        assert!(!check_goodness(&q, &k, tau, 2, 0.001).unwrap().is_good);

        // A score strictly between 0 and tau breaks the gap.
        s[2][2] = tau / 2.0;
        let q = DenseMatrix::from_rows(&s).unwrap();
        let r = check_goodness(&q, &k, tau, 2, 0.01).unwrap();
        assert!(!r.is_good);
        assert!(r.violation().unwrap().contains("above 0"));
    }

    proptest! {
        #[test]
        fn matmul_bit_exact_vs_triple_loop(rows in 1usize..7, m in 1usize..9, d in 1usize..6, seed in any::<u64>()) {
            let a = random(rows, d, seed);
            let b = random(m, d, seed.wrapping_add(1));
            let got = matmul(&a, &b).unwrap();
            let want = triple_loop(&a, &b);
            prop_assert_eq!(got.data(), want.as_slice());
        }

        #[test]
        fn inf_norm_symmetric_nonnegative(seed in any::<u64>(), same in any::<bool>()) {
            let x = random(3, 4, seed);
            let y = if same { x.clone() } else { random(3, 4, seed ^ 0x9e37) };
            let a = entrywise_inf_norm_diff(&x, &y).unwrap();
            let b = entrywise_inf_norm_diff(&y, &x).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a == 0.0, x == y);
        }
    }
}
