use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Result};
use qattn_core::instance::min_tau;
use qattn_core::reference::DENSE_GUARD;
use qattn_core::stats::{crossover, log_log_fit, LineFit};
use qattn_core::{
    brute_force_support, build_b, certify, error_report, generate as generate_instance,
    Certificate, ErrorReport, GoodnessReport, Instance, InstanceSpec, Method, Mode,
    QueryCostLedger,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::Grid;
use crate::{BENCH_SCHEMA, FIXED_CLOCK_ENV, RUN_SCHEMA};

fn fixed_clock() -> bool {
    std::env::var_os(FIXED_CLOCK_ENV).is_some_and(|v| !v.is_empty() && v != "0")
}

fn elapsed_ms(start: Instant) -> f64 {
    if fixed_clock() {
        0.0
    } else {
        start.elapsed().as_secs_f64() * 1e3
    }
}

fn checksum(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in values {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug)]
pub struct GenerateArgs {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub tau: Option<f64>,
    pub eta: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl GenerateArgs {
    pub fn spec(&self) -> InstanceSpec {
        InstanceSpec {
            n: self.n,
            d: self.d,
            k: self.k,
            tau: self.tau.unwrap_or_else(|| min_tau(self.n)),
            eta: self.eta,
            seed: self.seed,
            mode: self.mode,
            v_inf_cap: None,
        }
    }
}

pub fn generate(args: &GenerateArgs) -> Result<(Instance, GoodnessReport)> {
    let inst = generate_instance(&args.spec())?;
    let report = inst.goodness()?;
    Ok((inst, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub method: String,
    pub seed: u64,
    pub instance_seed: u64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub tau: f64,
    pub eta: f64,
    /// SHA-256 of the output matrix as little-endian `f64`s.
    pub checksum: String,
    pub search: QueryCostLedger,
    pub attention: QueryCostLedger,
    pub oracle_calls: u64,
    pub flops: u64,
    pub wall_ms: f64,
    pub support_match: Option<bool>,
    pub mismatched_rows: Option<usize>,
    pub error: Option<ErrorReport>,
    pub note: Option<String>,
}

pub fn run_record(inst: &Instance, method: Method, seed: u64) -> Result<RunRecord> {
    let spec = &inst.spec;
    let start = Instant::now();
    let outcome = qattn_core::run(
        method,
        &inst.q,
        &inst.k,
        &inst.v,
        spec.tau,
        seed,
        Some(&inst.truth),
    )?;
    let wall_ms = elapsed_ms(start);
    let total = outcome.total();

    let mut note = None;
    let (support_match, mismatched_rows, error) = match &outcome.support {
        None => {
            note = Some(
                "exact method has no support sets; error fields compare sparse paths only".into(),
            );
            (None, None, None)
        }
        Some(support) => {
            let mismatched = support.mismatched_rows(&inst.truth).len();
            let error = if inst.k.rows() > DENSE_GUARD {
                note = Some(format!(
                    "n exceeds the dense guard of {DENSE_GUARD}; error fields omitted"
                ));
                None
            } else {
                let b = build_b(support)?;
                match error_report(&inst.q, &inst.k, &inst.v, &b, spec.eta, spec.k) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        note = Some(format!("error report unavailable: {e}"));
                        None
                    }
                }
            };
            (Some(mismatched == 0), Some(mismatched), error)
        }
    };

    Ok(RunRecord {
        schema: RUN_SCHEMA.into(),
        method: method.name().into(),
        seed,
        instance_seed: spec.seed,
        n: inst.k.rows(),
        d: inst.q.cols(),
        k: spec.k,
        tau: spec.tau,
        eta: spec.eta,
        checksum: checksum(outcome.output.matrix.data()),
        search: outcome.search,
        attention: outcome.attention,
        oracle_calls: total.oracle_calls,
        flops: total.dot_product_flops,
        wall_ms,
        support_match,
        mismatched_rows,
        error,
        note,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum VerifyOutcome {
    /// The instance violates a goodness condition; nothing was certified.
    Refused(String),
    Certified(Certificate),
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, VerifyOutcome::Certified(c) if c.passed())
    }

    pub fn render(&self) -> String {
        match self {
            VerifyOutcome::Refused(why) => format!("REFUSED instance is not good: {why}\n"),
            VerifyOutcome::Certified(cert) => {
                let mut s = String::new();
                for l in &cert.lines {
                    s.push_str(&format!(
                        "{} {:<52} measured={:.6e} bound={:.6e} margin={:.6e}\n",
                        if l.pass { "PASS" } else { "FAIL" },
                        l.name,
                        l.measured,
                        l.bound,
                        l.margin
                    ));
                }
                s.push_str(if cert.passed() {
                    "RESULT pass\n"
                } else {
                    "RESULT fail\n"
                });
                s
            }
        }
    }
}

/// Certifies every perturbation and norm bound on `inst`, with supports taken
/// from the brute-force finder.
pub fn verify(inst: &Instance) -> Result<VerifyOutcome> {
    let n = inst.k.rows();
    if n > DENSE_GUARD {
        bail!("n = {n} exceeds the dense guard of {DENSE_GUARD}");
    }
    let report = inst.goodness()?;
    if let Some(why) = report.violation() {
        return Ok(VerifyOutcome::Refused(why));
    }
    let support =
        brute_force_support(&inst.q, &inst.k, inst.spec.tau, &mut QueryCostLedger::new())?;
    let b = build_b(&support)?;
    let cert = certify(&inst.q, &inst.k, &inst.v, &b, inst.spec.eta, inst.spec.k)?;
    Ok(VerifyOutcome::Certified(cert))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub method: Method,
    pub seed: u64,
    pub oracle_calls: u64,
    pub flops: u64,
    pub wall_ms: f64,
    pub support_match: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub k: usize,
    pub d: usize,
    pub metric: String,
    pub fit: LineFit,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<Summary>,
    pub crossovers: Vec<Crossover>,
}

/// `(k, d, method, n)` where the method's flop fit meets the exact path's.
pub type Crossover = (usize, usize, Method, f64);

pub struct BenchArgs<'a> {
    pub grid: &'a Grid,
    pub repeats: u64,
    pub seed: u64,
    pub mode: Mode,
    pub eta: f64,
    pub tau: Option<f64>,
}

pub fn bench(args: &BenchArgs<'_>) -> Result<BenchResult> {
    let mut rows = Vec::new();
    for &k in &args.grid.k {
        for &d in &args.grid.d {
            for &n in &args.grid.n {
                for rep in 0..args.repeats.max(1) {
                    let seed = args.seed.wrapping_add(rep);
                    let gen = GenerateArgs {
                        n,
                        d,
                        k,
                        tau: args.tau,
                        eta: args.eta,
                        seed,
                        mode: args.mode,
                    };
                    let inst = generate_instance(&gen.spec())?;
                    for &method in &args.grid.methods {
                        let start = Instant::now();
                        let out = qattn_core::run(
                            method,
                            &inst.q,
                            &inst.k,
                            &inst.v,
                            inst.spec.tau,
                            seed,
                            Some(&inst.truth),
                        )?;
                        let wall_ms = elapsed_ms(start);
                        let total = out.total();
                        rows.push(BenchRow {
                            n,
                            k,
                            d: inst.q.cols(),
                            method,
                            seed,
                            oracle_calls: total.oracle_calls,
                            flops: total.dot_product_flops,
                            wall_ms,
                            support_match: out
                                .support
                                .as_ref()
                                .filter(|_| method.finds_support())
                                .map(|s| s.mismatched_rows(&inst.truth).is_empty()),
                        });
                    }
                }
            }
        }
    }
    let (summaries, crossovers) = summarize(&rows);
    Ok(BenchResult {
        rows,
        summaries,
        crossovers,
    })
}

/// Per `(method, k, d)`: log-log fits of mean per-row oracle calls and mean
/// flops against `n`.
pub fn summarize(rows: &[BenchRow]) -> (Vec<Summary>, Vec<Crossover>) {
    type Key = (usize, usize, usize, Method);
    let mut groups: BTreeMap<(usize, usize, String), BTreeMap<usize, Vec<&BenchRow>>> =
        BTreeMap::new();
    let mut methods: BTreeMap<String, Method> = BTreeMap::new();
    for r in rows {
        let key: Key = (r.k, r.d, r.n, r.method);
        methods.insert(r.method.name().into(), r.method);
        groups
            .entry((key.0, key.1, r.method.name().to_string()))
            .or_default()
            .entry(key.2)
            .or_default()
            .push(r);
    }
    let mut summaries = Vec::new();
    let mut flop_fits: BTreeMap<(usize, usize), Vec<(Method, LineFit)>> = BTreeMap::new();
    for ((k, d, name), by_n) in &groups {
        let method = methods[name];
        let ns: Vec<f64> = by_n.keys().map(|&n| n as f64).collect();
        let mean = |f: &dyn Fn(&BenchRow) -> f64| -> Vec<f64> {
            by_n.values()
                .map(|rs| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64)
                .collect()
        };
        let mut push = |metric: &str, ys: Vec<f64>| {
            if let Some(fit) = log_log_fit(&ns, &ys) {
                summaries.push(Summary {
                    method,
                    k: *k,
                    d: *d,
                    metric: metric.into(),
                    fit,
                    points: ns.len(),
                });
                if metric == "flops" {
                    flop_fits.entry((*k, *d)).or_default().push((method, fit));
                }
            }
        };
        if method.finds_support() {
            push(
                "oracle_calls_per_row",
                mean(&|r| r.oracle_calls as f64 / r.n as f64),
            );
        }
        push("flops", mean(&|r| r.flops as f64));
    }
    let mut crossovers = Vec::new();
    for ((k, d), fits) in &flop_fits {
        if let Some((_, exact)) = fits.iter().find(|(m, _)| *m == Method::Exact) {
            for (m, fit) in fits.iter().filter(|(m, _)| *m != Method::Exact) {
                if let Some(x) = crossover(exact, fit) {
                    crossovers.push((*k, *d, *m, x));
                }
            }
        }
    }
    (summaries, crossovers)
}

pub fn render_csv(result: &BenchResult) -> String {
    let mut s = String::from("n,k,d,method,seed,oracle_calls,flops,wall_ms,support_match\n");
    for r in &result.rows {
        let matched = match r.support_match {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3},{}\n",
            r.n, r.k, r.d, r.method, r.seed, r.oracle_calls, r.flops, r.wall_ms, matched
        ));
    }
    s.push_str(&format!("# schema,{BENCH_SCHEMA}\n"));
    s.push_str("# summary,method,k,d,metric,slope,intercept,points\n");
    for sm in &result.summaries {
        s.push_str(&format!(
            "# summary,{},{},{},{},{:.6},{:.6},{}\n",
            sm.method, sm.k, sm.d, sm.metric, sm.fit.slope, sm.fit.intercept, sm.points
        ));
    }
    for (k, d, m, x) in &result.crossovers {
        s.push_str(&format!("# crossover,exact,{m},{k},{d},{x:.1}\n"));
    }
    s
}
