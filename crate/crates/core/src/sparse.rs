//! The sparse surrogate `B` and its error certification.
//!
//! `B` equals `A = exp(QK^T)` on every support set and `1 = exp(0)` off it, so
//! `B = 11^T + C` with `C` row-sparse. `D(B)^-1 B V` is then
//! `(colsum(V) + C_i V) / (n + sum_j C_ij)` per row, which is `O(nkd)` work.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::QueryCostLedger;
use crate::linalg::{check_goodness, DenseMatrix, SparseCorrection, SupportSets};
use crate::reference::{exact_dense_a, normalized_product, row_sums, AttentionOutput};

/// Allowance for rounding in the certified inequalities, per unit of the
/// compared quantity's magnitude.
pub fn fp_slack(n: usize) -> f64 {
    64.0 * f64::EPSILON * n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseB {
    pub n: usize,
    pub tau: f64,
    pub correction: SparseCorrection,
    /// `exp(score)` on the support, i.e. the stored entries of `B` itself.
    pub values: Vec<Vec<f64>>,
    /// `n + sum_j C_ij`.
    pub row_sums: Vec<f64>,
}

impl SparseB {
    pub fn support(&self, i: usize) -> &[usize] {
        &self.correction.row_indices[i]
    }

    /// `B_ij`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self.correction.row_indices[i].binary_search(&j) {
            Ok(pos) => self.values[i][pos],
            Err(_) => 1.0,
        }
    }

    pub fn dense(&self) -> DenseMatrix {
        let n = self.n;
        let rows = self.row_sums.len();
        let mut data = vec![1.0; rows * n];
        for i in 0..rows {
            for (&j, &x) in self.correction.row_indices[i].iter().zip(&self.values[i]) {
                data[i * n + j] = x;
            }
        }
        DenseMatrix::from_parts_unchecked(rows, n, data)
    }
}

/// `B` from support sets: `C_ij = exp(score) - 1` on `S_i`, `0` elsewhere.
pub fn build_b(support: &SupportSets) -> Result<SparseB> {
    let rows = support.rows.len();
    let mut values = Vec::with_capacity(rows);
    let mut corr = Vec::with_capacity(rows);
    let mut sums = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut row_vals = Vec::with_capacity(support.rows[i].len());
        let mut row_corr = Vec::with_capacity(support.rows[i].len());
        let mut sum = support.n as f64;
        for (&j, &s) in support.rows[i].iter().zip(&support.scores[i]) {
            if !(s >= support.tau) {
                return Err(Error::SupportBreach {
                    row: i,
                    col: j,
                    score: s,
                    tau: support.tau,
                });
            }
            let e = s.exp();
            if !e.is_finite() {
                return Err(Error::Range {
                    row: i,
                    col: j,
                    score: s,
                });
            }
            row_vals.push(e);
            row_corr.push(e - 1.0);
            sum += e - 1.0;
        }
        values.push(row_vals);
        corr.push(row_corr);
        sums.push(sum);
    }
    Ok(SparseB {
        n: support.n,
        tau: support.tau,
        correction: SparseCorrection {
            n: support.n,
            row_indices: support.rows.clone(),
            row_values: corr,
        },
        values,
        row_sums: sums,
    })
}

/// `D(B)^-1 B V` through the all-ones plus sparse split.
///
/// Charges `n d` flops for the column sums of `V`, `|S_i| d` per row for the
/// correction and `n d` for the normalization.
pub fn sparse_attention(
    b: &SparseB,
    v: &DenseMatrix,
    ledger: &mut QueryCostLedger,
) -> Result<AttentionOutput> {
    if v.rows() != b.n {
        return Err(Error::Shape(format!(
            "V has {} rows, B has {} columns",
            v.rows(),
            b.n
        )));
    }
    if let Some(i) = b.row_sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Invalid(format!(
            "row sum {} of row {i} is not positive",
            b.row_sums[i]
        )));
    }
    let d = v.cols();
    let mut colsum = vec![0.0; d];
    for j in 0..v.rows() {
        for (c, x) in colsum.iter_mut().zip(v.row(j)) {
            *c += x;
        }
    }
    let rows = b.row_sums.len();
    let mut data = vec![0.0; rows * d];
    data.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        out.copy_from_slice(&colsum);
        for (&j, &c) in b.correction.row_indices[i]
            .iter()
            .zip(&b.correction.row_values[i])
        {
            for (o, x) in out.iter_mut().zip(v.row(j)) {
                *o += c * x;
            }
        }
        let z = b.row_sums[i];
        for o in out.iter_mut() {
            *o /= z;
        }
    });
    let nnz = b.correction.nnz() as u64;
    ledger.charge_flops((v.rows() * d) as u64 + nnz * d as u64 + (rows * d) as u64);
    Ok(AttentionOutput {
        matrix: DenseMatrix::from_parts_unchecked(rows, d, data),
        row_sums: b.row_sums.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eta: f64,
    /// `||D(A)^-1 A - D(B)^-1 B||_inf`
    pub lhs_no_v: f64,
    /// `||D(A)^-1 A V - D(B)^-1 B V||_inf`, both sides dense.
    pub lhs_with_v: f64,
    pub bound_no_v: f64,
    pub bound_with_v: f64,
    /// `max_i |D(A)_ii - D(B)_ii| / D(A)_ii`
    pub diag_rel_err: f64,
    /// `max_i |D(A)_ii - D(B)_ii| / D(B)_ii`
    pub diag_rel_err_b: f64,
    /// `max_ij |A_ij - B_ij|`
    pub entry_err: f64,
    pub v_inf_norm: f64,
    /// `lhs_with_v / (eta * ||V||_inf)`; `0` when the denominator is.
    pub with_v_ratio: f64,
    /// `||sparse_attention(B, V) - D(A)^-1 A V||_inf`, the fast path against the
    /// exact output.
    pub fast_path_err: f64,
    /// Max over rows of `|sum_j D(B)^-1 B_ij - 1|`.
    pub normalization_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

impl CheckLine {
    fn at_most(name: &str, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            bound,
            margin: bound - measured,
            pass: measured <= bound,
        }
    }

    fn at_least(name: &str, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            bound,
            margin: measured - bound,
            pass: measured >= bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub report: ErrorReport,
    pub lines: Vec<CheckLine>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }

    pub fn line(&self, name: &str) -> Option<&CheckLine> {
        self.lines.iter().find(|l| l.name == name)
    }
}

/// Dense quantities shared by [`error_report`] and [`certify`].
struct DenseComparison {
    report: ErrorReport,
    lines: Vec<CheckLine>,
}

fn compare(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    v: &DenseMatrix,
    b: &SparseB,
    eta: f64,
    k: usize,
) -> Result<DenseComparison> {
    let goodness = check_goodness(q, k_mat, b.tau, k, eta)?;
    if let Some(why) = goodness.violation() {
        return Err(Error::NotGood(why));
    }
    let n = k_mat.rows();
    if b.n != n || b.row_sums.len() != q.rows() {
        return Err(Error::Shape(format!(
            "B is for n = {}, instance has n = {n}",
            b.n
        )));
    }
    let slack = fp_slack(n);
    let a = exact_dense_a(q, k_mat)?;
    let bd = b.dense();
    let da = row_sums(&a);
    let db = row_sums(&bd);

    // entrywise comparisons, split by support membership
    let mut off_err = 0.0f64;
    let mut on_err = 0.0f64;
    let mut lhs_no_v = 0.0f64;
    let mut norm_err = 0.0f64;
    for i in 0..q.rows() {
        let mut total = 0.0;
        let support = b.support(i);
        for j in 0..n {
            let (x, y) = (a.get(i, j), bd.get(i, j));
            let diff = (x - y).abs();
            if support.binary_search(&j).is_ok() {
                on_err = on_err.max(diff);
            } else {
                off_err = off_err.max(diff);
            }
            lhs_no_v = lhs_no_v.max((x / da[i] - y / db[i]).abs());
            total += y / db[i];
        }
        norm_err = norm_err.max((total - 1.0).abs());
    }

    let exact = normalized_product(&a, v);
    let surrogate = normalized_product(&bd, v);
    let lhs_with_v = max_abs_diff(exact.matrix.data(), surrogate.matrix.data());
    let fast = sparse_attention(b, v, &mut QueryCostLedger::new())?;
    let fast_path_err = max_abs_diff(exact.matrix.data(), fast.matrix.data());
    let v_inf = v.max_abs();

    let mut p3 = 0.0f64;
    let mut p5 = 0.0f64;
    let mut diag_b = 0.0f64;
    let mut p4_sum = f64::INFINITY;
    let mut p4_chain = f64::INFINITY;
    let e_tau = b.tau.exp();
    for i in 0..q.rows() {
        let diff = (da[i] - db[i]).abs();
        p3 = p3.max(diff);
        p5 = p5.max(diff / da[i]);
        diag_b = diag_b.max(diff / db[i]);
        // P4 is a statement about rows that have a support
        if b.support(i).is_empty() {
            continue;
        }
        let floor = b.support(i).len() as f64 * e_tau;
        p4_sum = p4_sum.min(da[i] / floor);
        p4_chain = p4_chain.min(floor / (2.0 * n as f64));
    }
    let da_max = da.iter().fold(0.0f64, |m, &x| m.max(x));

    let report = ErrorReport {
        eta,
        lhs_no_v,
        lhs_with_v,
        bound_no_v: 3.0 * eta,
        bound_with_v: 3.0 * eta * eta,
        diag_rel_err: p5,
        diag_rel_err_b: diag_b,
        entry_err: off_err.max(on_err),
        v_inf_norm: v_inf,
        with_v_ratio: if eta * v_inf > 0.0 {
            lhs_with_v / (eta * v_inf)
        } else {
            0.0
        },
        fast_path_err,
        normalization_err: norm_err,
    };

    let mut lines = vec![
        CheckLine::at_most("P1 off-support |A-B| <= 2 eta", off_err, 2.0 * eta + slack),
        CheckLine::at_most("P2 on-support |A-B| = 0", on_err, 0.0),
        CheckLine::at_most(
            "P3 |(A1)_i - (B1)_i| <= 2 n eta",
            p3,
            2.0 * n as f64 * eta + slack * da_max,
        ),
        CheckLine::at_least("P4 (A1)_i >= |S_i| exp(tau)", p4_sum, 1.0 - slack),
        CheckLine::at_least("P4 |S_i| exp(tau) >= 2n", p4_chain, 1.0 - slack),
        CheckLine::at_most("P5 |(A1)_i - (B1)_i| <= eta (A1)_i", p5, eta + slack),
        CheckLine::at_most("D1 |D(A)-D(B)| <= eta D(B)", diag_b, eta + slack),
        CheckLine::at_most("D2 |D(A)-D(B)| <= eta D(A)", p5, eta + slack),
        CheckLine::at_most("D3 |A-B| <= 2 eta", report.entry_err, 2.0 * eta + slack),
        CheckLine::at_most("N0 rows of D(B)^-1 B sum to 1", norm_err, 1e-12),
        CheckLine::at_most(
            "E1 ||D(A)^-1 A - D(B)^-1 B|| <= 3 eta",
            lhs_no_v,
            3.0 * eta + slack,
        ),
        CheckLine::at_most(
            "E2 ||D(A)^-1 AV - D(B)^-1 BV|| <= 3 eta ||V||",
            lhs_with_v,
            3.0 * eta * v_inf + slack * v_inf,
        ),
        CheckLine::at_most(
            "E3 fast path ||D(A)^-1 AV - sparse|| <= 3 eta ||V||",
            fast_path_err,
            3.0 * eta * v_inf + slack * v_inf,
        ),
    ];
    if v_inf <= eta {
        lines.push(CheckLine::at_most(
            "E4 ||D(A)^-1 AV - D(B)^-1 BV|| <= 3 eta^2",
            lhs_with_v,
            3.0 * eta * eta + slack * v_inf,
        ));
    }
    Ok(DenseComparison { report, lines })
}

fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Materializes `A` and `B` and measures every error quantity. The instance
/// must be good for `(b.tau, k, eta)`; otherwise the failing condition is
/// returned as [`Error::NotGood`].
pub fn error_report(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    v: &DenseMatrix,
    b: &SparseB,
    eta: f64,
    k: usize,
) -> Result<ErrorReport> {
    compare(q, k_mat, v, b, eta, k).map(|c| c.report)
}

/// [`error_report`] plus one pass/fail line per certified inequality.
pub fn certify(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    v: &DenseMatrix,
    b: &SparseB,
    eta: f64,
    k: usize,
) -> Result<Certificate> {
    compare(q, k_mat, v, b, eta, k).map(|c| Certificate {
        report: c.report,
        lines: c.lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brute::brute_force_support;
    use crate::linalg::entrywise_inf_norm_diff;
    use crate::reference::exact_attention;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn empty_supports_give_uniform_rows() {
        let s = SupportSets::from_pairs(3, 1.0, vec![vec![], vec![], vec![]]);
        let b = build_b(&s).unwrap();
        assert_eq!(b.row_sums, vec![3.0; 3]);
        assert!(b.dense().data().iter().all(|&x| x == 1.0));
        let v = random(3, 2, 1);
        let out = sparse_attention(&b, &v, &mut QueryCostLedger::new()).unwrap();
        let mean: Vec<f64> = (0..2)
            .map(|c| (v.get(0, c) + v.get(1, c) + v.get(2, c)) / 3.0)
            .collect();
        for i in 0..3 {
            for c in 0..2 {
                assert!((out.matrix.get(i, c) - mean[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_entry_row() {
        let s = SupportSets::from_pairs(2, 1.0, vec![vec![(1, 9f64.ln())], vec![]]);
        let b = build_b(&s).unwrap();
        assert!((b.entry(0, 1) - 9.0).abs() < 1e-14);
        assert_eq!(b.entry(0, 0), 1.0);
        assert!((b.row_sums[0] - 10.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_score_below_tau() {
        let s = SupportSets::from_pairs(2, 1.0, vec![vec![(0, 0.5)], vec![]]);
        assert!(matches!(
            build_b(&s),
            Err(Error::SupportBreach { row: 0, col: 0, .. })
        ));
    }

    #[test]
    fn full_support_equals_dense_a_and_exact_attention() {
        let (n, d) = (12, 4);
        let q = random(n, d, 2);
        let k = random(n, d, 3);
        let v = random(n, 3, 4);
        let s =
            brute_force_support(&q, &k, f64::NEG_INFINITY, &mut QueryCostLedger::new()).unwrap();
        let b = build_b(&s).unwrap();
        let a = exact_dense_a(&q, &k).unwrap();
        assert!(entrywise_inf_norm_diff(&a, &b.dense()).unwrap() <= 1e-13);
        let out = sparse_attention(&b, &v, &mut QueryCostLedger::new()).unwrap();
        let exact = exact_attention(&q, &k, &v).unwrap().matrix;
        assert!(entrywise_inf_norm_diff(&out.matrix, &exact).unwrap() <= 1e-12);
    }

    #[test]
    fn flop_charge() {
        let s = SupportSets::from_pairs(
            4,
            0.0,
            vec![vec![(0, 1.0), (2, 1.0)], vec![(1, 1.0)], vec![], vec![]],
        );
        let b = build_b(&s).unwrap();
        let v = random(4, 5, 5);
        let mut l = QueryCostLedger::new();
        sparse_attention(&b, &v, &mut l).unwrap();
        assert_eq!(l.dot_product_flops, (4 * 5 + 3 * 5 + 4 * 5) as u64);
    }

    #[test]
    fn rows_without_support_skip_p4() {
        use crate::instance::{generate, InstanceSpec};
        let spec = InstanceSpec::gram(16, 2, 0.05, 42);
        let mut inst = generate(&spec).unwrap();
        for &j in &inst.truth.rows[0].clone() {
            inst.q.set(0, j, 0.0).unwrap();
        }
        let s =
            brute_force_support(&inst.q, &inst.k, spec.tau, &mut QueryCostLedger::new()).unwrap();
        assert!(s.rows[0].is_empty());
        let cert = certify(
            &inst.q,
            &inst.k,
            &inst.v,
            &build_b(&s).unwrap(),
            spec.eta,
            spec.k,
        )
        .unwrap();
        assert!(cert.passed(), "{:?}", cert.lines);
    }

    #[test]
    fn shape_and_row_sum_guards() {
        let s = SupportSets::from_pairs(3, 1.0, vec![vec![], vec![], vec![]]);
        let mut b = build_b(&s).unwrap();
        assert!(sparse_attention(&b, &random(2, 2, 6), &mut QueryCostLedger::new()).is_err());
        b.row_sums[1] = 0.0;
        assert!(matches!(
            sparse_attention(&b, &random(3, 2, 6), &mut QueryCostLedger::new()),
            Err(Error::Invalid(_))
        ));
    }
}
