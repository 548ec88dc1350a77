//! Grover search, simulated at the level of its exact rotation dynamics.
//!
//! After `j` iterations on `t` marked items out of `n`, a measurement lands on
//! a marked item with probability `sin^2((2j + 1) theta)` where
//! `sin^2 theta = t / n`. The amplitudes never leave the plane spanned by the
//! uniform marked and unmarked states, so sampling from that formula
//! reproduces the measurement distribution of the full circuit.
//! [`validate_rotation_model`] checks this against an explicit statevector.
//!
//! [`find_all_marked`] recovers every marked index without knowing how many
//! there are: each run picks its iteration count uniformly below a cap `M`
//! that grows by `lambda` after every miss up to `sqrt(n)`, found items are
//! excluded classically, and the search stops after `fail_streak_limit`
//! consecutive misses at the full cap. A run of `m` iterations costs `m + 1`
//! oracle calls: `m` inside the iterations and one to verify the measured
//! index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::QueryCostLedger;
use crate::linalg::{dot, DenseMatrix, SupportSets};

/// Largest `n` the statevector cross-check will allocate.
pub const STATEVECTOR_LIMIT: usize = 1024;

pub const DEFAULT_LAMBDA: f64 = 6.0 / 5.0;

/// Expected oracle calls per find in the analytic cost model, in units of
/// `sqrt(n / t)`.
pub const DEFAULT_PER_FIND_CONSTANT: f64 = 9.0 / 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroverMode {
    /// Sample every run from the rotation model.
    Sampled,
    /// Return the marked set and charge the expected cost.
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroverConfig {
    pub mode: GroverMode,
    pub lambda: f64,
    /// `None` means `3 * ceil(log2 n)`.
    pub fail_streak_limit: Option<usize>,
    pub seed: u64,
    pub per_find_constant: f64,
}

impl GroverConfig {
    pub fn sampled(seed: u64) -> Self {
        Self {
            mode: GroverMode::Sampled,
            lambda: DEFAULT_LAMBDA,
            fail_streak_limit: None,
            seed,
            per_find_constant: DEFAULT_PER_FIND_CONSTANT,
        }
    }

    pub fn analytic() -> Self {
        Self {
            mode: GroverMode::Analytic,
            ..Self::sampled(0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0 && self.lambda < 4.0 / 3.0) {
            return Err(Error::Invalid(format!(
                "lambda must lie in (1, 4/3), got {}",
                self.lambda
            )));
        }
        if self.fail_streak_limit == Some(0) {
            return Err(Error::Invalid(
                "fail_streak_limit must be at least 1".into(),
            ));
        }
        if !(self.per_find_constant > 0.0) {
            return Err(Error::Invalid("per_find_constant must be positive".into()));
        }
        Ok(())
    }

    pub fn fail_streak_for(&self, n: usize) -> usize {
        self.fail_streak_limit
            .unwrap_or_else(|| default_fail_streak(n))
    }
}

/// `3 * ceil(log2 n)`, at least 1.
pub fn default_fail_streak(n: usize) -> usize {
    let log = n.max(1).next_power_of_two().trailing_zeros() as usize;
    (3 * log).max(1)
}

/// Probability of measuring a marked index after `j` iterations.
pub fn grover_success_prob(n: usize, t: usize, j: u64) -> f64 {
    if t == 0 || n == 0 {
        return 0.0;
    }
    debug_assert!(t <= n, "t = {t} exceeds n = {n}");
    let theta = (t as f64 / n as f64).sqrt().asin();
    let s = ((2 * j + 1) as f64 * theta).sin();
    s * s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    pub n: usize,
    pub marked: usize,
    pub iterations: u64,
    pub statevector_mass: f64,
    pub model_prob: f64,
    pub difference: f64,
}

/// Runs `j` oracle-plus-diffusion rounds on an explicit `n`-amplitude state and
/// compares the marked mass with [`grover_success_prob`].
pub fn validate_rotation_model(n: usize, marked: &[usize], j: u64) -> Result<RotationReport> {
    if n > STATEVECTOR_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: STATEVECTOR_LIMIT,
        });
    }
    if !n.is_power_of_two() {
        return Err(Error::Invalid(format!(
            "statevector size must be a power of two, got {n}"
        )));
    }
    let mut is_marked = vec![false; n];
    for &m in marked {
        if m >= n {
            return Err(Error::IndexOutOfRange { index: m, len: n });
        }
        is_marked[m] = true;
    }
    let t = is_marked.iter().filter(|&&b| b).count();
    let mut amp = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..j {
        for (a, &m) in amp.iter_mut().zip(&is_marked) {
            if m {
                *a = -*a;
            }
        }
        let mean = amp.iter().sum::<f64>() / n as f64;
        for a in amp.iter_mut() {
            *a = 2.0 * mean - *a;
        }
    }
    let mass: f64 = amp
        .iter()
        .zip(&is_marked)
        .filter(|(_, &m)| m)
        .map(|(a, _)| a * a)
        .sum();
    let model = grover_success_prob(n, t, j);
    Ok(RotationReport {
        n,
        marked: t,
        iterations: j,
        statevector_mass: mass,
        model_prob: model,
        difference: (mass - model).abs(),
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Analytic oracle-call charge for finding `marked` items among `n`:
/// `ceil(sum_{t=1..marked} c * sqrt(n / t))`.
pub fn analytic_charge(n: usize, marked: usize, per_find_constant: f64) -> u64 {
    let total: f64 = (1..=marked)
        .map(|t| per_find_constant * (n as f64 / t as f64).sqrt())
        .sum();
    total.ceil() as u64
}

/// Finds every `i < n` with `membership(i)`.
///
/// The simulator first scans the predicate once to know the marked set; those
/// evaluations go to `classical_scan_calls`. Only simulated quantum work is
/// charged to `oracle_calls` and `grover_iterations`. `stream` selects an
/// independent random stream under `cfg.seed`.
pub fn find_all_marked<F>(
    n: usize,
    membership: F,
    cfg: &GroverConfig,
    stream: u64,
    ledger: &mut QueryCostLedger,
) -> Result<Vec<usize>>
where
    F: Fn(usize) -> bool,
{
    cfg.validate()?;
    let mut unfound: Vec<usize> = (0..n).filter(|&i| membership(i)).collect();
    ledger.classical_scan_calls += n as u64;

    if cfg.mode == GroverMode::Analytic {
        let charge = analytic_charge(n, unfound.len(), cfg.per_find_constant);
        ledger.oracle_calls += charge;
        ledger.grover_iterations += charge;
        return Ok(unfound);
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut rng = stream_rng(cfg.seed, stream);
    let cap = (n as f64).sqrt().max(1.0);
    let limit = cfg.fail_streak_for(n);
    let mut found = Vec::with_capacity(unfound.len());
    let mut cap_now = 1.0f64;
    let mut streak = 0;
    loop {
        let m = rng.gen_range(0..cap_now.ceil() as u64);
        ledger.grover_iterations += m;
        ledger.oracle_calls += m + 1;
        let t = unfound.len();
        let hit = t > 0 && rng.gen::<f64>() < grover_success_prob(n, t, m);
        if hit {
            let idx = unfound.swap_remove(rng.gen_range(0..t));
            // the verifying oracle call
            if membership(idx) {
                found.push(idx);
            }
            streak = 0;
        } else {
            if cap_now >= cap {
                streak += 1;
                if streak >= limit {
                    break;
                }
            }
            cap_now = (cap_now * cfg.lambda).min(cap);
        }
    }
    found.sort_unstable();
    Ok(found)
}

/// Quantum support finder: one [`find_all_marked`] per query row with the
/// predicate `<Q_i, K_j> >= tau`. Row `i` uses random stream `i`; every oracle
/// call is charged `d` flops.
pub fn build_support_grover(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    tau: f64,
    cfg: &GroverConfig,
    ledger: &mut QueryCostLedger,
) -> Result<SupportSets> {
    if q.cols() != k_mat.cols() {
        return Err(Error::Shape(format!(
            "Q has {} columns, K has {}",
            q.cols(),
            k_mat.cols()
        )));
    }
    cfg.validate()?;
    let n = k_mat.rows();
    let d = q.cols() as u64;
    let per_row = (0..q.rows())
        .into_par_iter()
        .map(|i| {
            let qi = q.row(i);
            let mut sub = QueryCostLedger::new();
            let idx =
                find_all_marked(n, |j| dot(qi, k_mat.row(j)) >= tau, cfg, i as u64, &mut sub)?;
            sub.dot_product_flops += sub.oracle_calls * d;
            let hits: Vec<(usize, f64)> = idx
                .into_iter()
                .map(|j| (j, dot(qi, k_mat.row(j))))
                .collect();
            Ok((hits, sub))
        })
        .collect::<Result<Vec<_>>>()?;
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
    use crate::brute::brute_force_support;

    #[test]
    fn classic_perfect_case() {
        assert_eq!(grover_success_prob(4, 1, 1), 1.0);
    }

    #[test]
    fn uniform_superposition() {
        assert!((grover_success_prob(2, 1, 0) - 0.5).abs() < 1e-15);
        assert_eq!(grover_success_prob(8, 0, 3), 0.0);
    }

    #[test]
    fn model_matches_statevector_16_3_2() {
        let r = validate_rotation_model(16, &[1, 5, 11], 2).unwrap();
        assert!(r.difference <= 1e-9, "{r:?}");
        assert!((grover_success_prob(16, 3, 2) - r.statevector_mass).abs() <= 1e-9);
    }

    #[test]
    fn statevector_examples() {
        let r = validate_rotation_model(4, &[2], 1).unwrap();
        assert!((r.statevector_mass - 1.0).abs() < 1e-15);
        assert!(r.difference < 1e-15);
        for j in 0..5 {
            let r = validate_rotation_model(8, &[], j).unwrap();
            assert_eq!(r.statevector_mass, 0.0);
        }
        let mut rng = stream_rng(9, 0);
        let mut marked: Vec<usize> = (0..64).collect();
        for i in 0..5 {
            let s = rng.gen_range(i..64);
            marked.swap(i, s);
        }
        marked.truncate(5);
        let worst = (0..=10)
            .map(|j| validate_rotation_model(64, &marked, j).unwrap().difference)
            .fold(0.0, f64::max);
        assert!(worst <= 1e-9);
    }

    #[test]
    fn statevector_limits() {
        assert!(matches!(
            validate_rotation_model(2048, &[], 1),
            Err(Error::TooLarge { .. })
        ));
        assert!(matches!(
            validate_rotation_model(12, &[], 1),
            Err(Error::Invalid(_))
        ));
        assert!(validate_rotation_model(8, &[8], 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GroverConfig::sampled(1).validate().is_ok());
        let mut c = GroverConfig::sampled(1);
        c.lambda = 1.5;
        assert!(c.validate().is_err());
        c.lambda = 1.0;
        assert!(c.validate().is_err());
        let mut c = GroverConfig::sampled(1);
        c.fail_streak_limit = Some(0);
        assert!(c.validate().is_err());
        assert_eq!(default_fail_streak(1024), 30);
        assert_eq!(default_fail_streak(1000), 30);
        assert_eq!(default_fail_streak(1), 1);
    }

    #[test]
    fn empty_marked_set_stops_after_streak() {
        let cfg = GroverConfig::sampled(3);
        let mut l = QueryCostLedger::new();
        let found = find_all_marked(8, |_| false, &cfg, 0, &mut l).unwrap();
        assert!(found.is_empty());
        // ramp to the cap plus `limit` runs of at most ceil(sqrt 8) calls each
        let limit = cfg.fail_streak_for(8) as u64;
        assert!(l.oracle_calls <= (limit + 8) * 3, "{l:?}");
        assert_eq!(l.classical_scan_calls, 8);
    }

    #[test]
    fn everything_marked() {
        let mut l = QueryCostLedger::new();
        let found = find_all_marked(4, |_| true, &GroverConfig::sampled(5), 0, &mut l).unwrap();
        assert_eq!(found, vec![0, 1, 2, 3]);
    }

    #[test]
    fn analytic_charge_closed_form() {
        let mut l = QueryCostLedger::new();
        let marked = [3usize, 9, 40];
        let found = find_all_marked(
            64,
            |i| marked.contains(&i),
            &GroverConfig::analytic(),
            0,
            &mut l,
        )
        .unwrap();
        assert_eq!(found, marked.to_vec());
        let want = (2.25 * (8.0 + (32.0f64).sqrt() + (64.0f64 / 3.0).sqrt())).ceil() as u64;
        assert_eq!(l.oracle_calls, want);
    }

    #[test]
    fn sampled_is_deterministic_per_seed_and_stream() {
        let pred = |i: usize| i % 37 == 5;
        let cfg = GroverConfig::sampled(11);
        let mut a = QueryCostLedger::new();
        let mut b = QueryCostLedger::new();
        let fa = find_all_marked(512, pred, &cfg, 4, &mut a).unwrap();
        let fb = find_all_marked(512, pred, &cfg, 4, &mut b).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(a, b);
        let mut c = QueryCostLedger::new();
        find_all_marked(512, pred, &cfg, 5, &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn support_on_zero_instance_is_empty() {
        let z = DenseMatrix::zeros(6, 2).unwrap();
        for cfg in [GroverConfig::sampled(1), GroverConfig::analytic()] {
            let s = build_support_grover(&z, &z, 1.0, &cfg, &mut QueryCostLedger::new()).unwrap();
            assert!(s.rows.iter().all(Vec::is_empty));
        }
    }

    #[test]
    fn analytic_support_equals_brute_force() {
        let n = 24;
        let mut rng = stream_rng(21, 0);
        let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let q = DenseMatrix::new(n, 3, data.clone()).unwrap();
        let k = DenseMatrix::new(n, 3, data.into_iter().rev().collect()).unwrap();
        let brute = brute_force_support(&q, &k, 1.0, &mut QueryCostLedger::new()).unwrap();
        let mut l = QueryCostLedger::new();
        let g = build_support_grover(&q, &k, 1.0, &GroverConfig::analytic(), &mut l).unwrap();
        assert!(g.identical(&brute));
        let bound: u64 = brute
            .rows
            .iter()
            .map(|r| analytic_charge(n, r.len(), 2.25))
            .sum();
        assert_eq!(l.oracle_calls, bound);
        assert_eq!(l.dot_product_flops, bound * 3);
    }
}
