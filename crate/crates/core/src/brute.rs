//! The `O(n^2 d)` support finder every other finder is checked against.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ledger::QueryCostLedger;
use crate::linalg::{dot, scores_into, DenseMatrix, SupportSets};

/// Evaluation oracle for one score `<Q_i, K_j>`. Charges one oracle call and
/// `d` flops.
pub fn row_score_oracle(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    i: usize,
    j: usize,
    ledger: &mut QueryCostLedger,
) -> Result<f64> {
    if q.cols() != k_mat.cols() {
        return Err(Error::Shape(format!(
            "Q has {} columns, K has {}",
            q.cols(),
            k_mat.cols()
        )));
    }
    if i >= q.rows() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: q.rows(),
        });
    }
    if j >= k_mat.rows() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: k_mat.rows(),
        });
    }
    ledger.charge_oracle(q.cols());
    Ok(dot(q.row(i), k_mat.row(j)))
}

/// Scans every score. Charges exactly `rows(Q) * rows(K)` oracle calls.
pub fn brute_force_support(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    tau: f64,
    ledger: &mut QueryCostLedger,
) -> Result<SupportSets> {
    if q.cols() != k_mat.cols() {
        return Err(Error::Shape(format!(
            "Q has {} columns, K has {}",
            q.cols(),
            k_mat.cols()
        )));
    }
    let n = k_mat.rows();
    let d = q.cols();
    let per_row: Vec<(Vec<(usize, f64)>, QueryCostLedger)> = (0..q.rows())
        .into_par_iter()
        .map(|i| {
            let mut scores = vec![0.0; n];
            scores_into(q.row(i), k_mat, &mut scores);
            let mut sub = QueryCostLedger::new();
            sub.oracle_calls = n as u64;
            sub.dot_product_flops = (n * d) as u64;
            let hits = scores
                .into_iter()
                .enumerate()
                .filter(|&(_, s)| s >= tau)
                .collect();
            (hits, sub)
        })
        .collect();
    let mut pairs = Vec::with_capacity(per_row.len());
    for (hits, sub) in per_row {
        ledger.merge(&sub);
        pairs.push(hits);
    }
    Ok(SupportSets::from_pairs(n, tau, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn thresholds_one_row() {
        let q = DenseMatrix::from_rows(&[vec![3.0, -0.5, 5.0]]).unwrap();
        let k = DenseMatrix::identity(3).unwrap();
        let mut l = QueryCostLedger::new();
        let s = brute_force_support(&q, &k, 2.0, &mut l).unwrap();
        assert_eq!(s.rows, vec![vec![0, 2]]);
        assert_eq!(s.scores, vec![vec![3.0, 5.0]]);
        assert_eq!(l.oracle_calls, 3);
    }

    #[test]
    fn zero_scores_give_empty_supports() {
        let z = DenseMatrix::zeros(5, 2).unwrap();
        let mut l = QueryCostLedger::new();
        let s = brute_force_support(&z, &z, 1.0, &mut l).unwrap();
        assert!(s.rows.iter().all(Vec::is_empty));
        assert_eq!(l.oracle_calls, 25);
        assert_eq!(l.dot_product_flops, 50);
    }

    #[test]
    fn ties_are_included() {
        let q = DenseMatrix::from_rows(&[vec![2.0, 1.999_999]]).unwrap();
        let k = DenseMatrix::identity(2).unwrap();
        let s = brute_force_support(&q, &k, 2.0, &mut QueryCostLedger::new()).unwrap();
        assert_eq!(s.rows, vec![vec![0]]);
    }

    #[test]
    fn oracle_examples() {
        let e1 = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut l = QueryCostLedger::new();
        assert_eq!(row_score_oracle(&e1, &e1, 0, 0, &mut l).unwrap(), 1.0);
        assert_eq!(row_score_oracle(&e1, &e1, 0, 1, &mut l).unwrap(), 0.0);
        assert_eq!(l.oracle_calls, 2);
        assert_eq!(l.dot_product_flops, 4);
        assert!(matches!(
            row_score_oracle(&e1, &e1, 2, 0, &mut l),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert_eq!(l.oracle_calls, 2);
    }

    #[test]
    fn oracle_matches_matmul_entry() {
        let q = random(4, 6, 1);
        let k = random(5, 6, 2);
        let s = matmul(&q, &k).unwrap();
        let mut l = QueryCostLedger::new();
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(row_score_oracle(&q, &k, i, j, &mut l).unwrap(), s.get(i, j));
            }
        }
    }

    proptest! {
        #[test]
        fn equals_filtered_matmul(seed in any::<u64>(), n in 1usize..20, d in 1usize..5, tau in -1.0f64..3.0) {
            let q = random(n, d, seed);
            let k = random(n, d, seed ^ 7);
            let s = matmul(&q, &k).unwrap();
            let mut l = QueryCostLedger::new();
            let sup = brute_force_support(&q, &k, tau, &mut l).unwrap();
            prop_assert_eq!(l.oracle_calls, (n * n) as u64);
            for i in 0..n {
                let want: Vec<usize> = (0..n).filter(|&j| s.get(i, j) >= tau).collect();
                let want_scores: Vec<f64> = want.iter().map(|&j| s.get(i, j)).collect();
                prop_assert_eq!(&sup.rows[i], &want);
                prop_assert_eq!(&sup.scores[i], &want_scores);
            }
        }
    }
}
