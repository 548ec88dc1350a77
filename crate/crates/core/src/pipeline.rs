//! End-to-end runs: find supports with a chosen method, build `B`, attend.

use serde::{Deserialize, Serialize};

use crate::brute::brute_force_support;
use crate::error::{Error, Result};
use crate::grover::{build_support_grover, GroverConfig};
use crate::hsr::build_support_hsr;
use crate::ledger::QueryCostLedger;
use crate::linalg::{DenseMatrix, SupportSets};
use crate::reference::{exact_attention_metered, AttentionOutput};
use crate::sparse::{build_b, sparse_attention};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Dense `D(A)^-1 A V`.
    Exact,
    /// Sparse attention on supports that are handed in, with no search cost.
    Sparse,
    Brute,
    Hsr,
    GroverSampled,
    GroverAnalytic,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Exact,
        Method::Sparse,
        Method::Brute,
        Method::Hsr,
        Method::GroverSampled,
        Method::GroverAnalytic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Sparse => "sparse",
            Method::Brute => "brute",
            Method::Hsr => "hsr",
            Method::GroverSampled => "grover-sampled",
            Method::GroverAnalytic => "grover-analytic",
        }
    }

    /// Whether the method searches for supports itself.
    pub fn finds_support(self) -> bool {
        !matches!(self, Method::Exact | Method::Sparse)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown method {s:?}")))
    }
}

pub struct RunOutcome {
    pub support: Option<SupportSets>,
    pub output: AttentionOutput,
    /// Work of the support search alone.
    pub search: QueryCostLedger,
    /// Work of the attention step alone.
    pub attention: QueryCostLedger,
}

impl RunOutcome {
    pub fn total(&self) -> QueryCostLedger {
        self.search + self.attention
    }
}

/// Finds supports with `method`. `None` for [`Method::Exact`] and
/// [`Method::Sparse`].
pub fn find_support(
    method: Method,
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    tau: f64,
    seed: u64,
    ledger: &mut QueryCostLedger,
) -> Result<Option<SupportSets>> {
    let support = match method {
        Method::Exact | Method::Sparse => return Ok(None),
        Method::Brute => brute_force_support(q, k_mat, tau, ledger)?,
        Method::Hsr => build_support_hsr(q, k_mat, tau, ledger)?,
        Method::GroverSampled => {
            build_support_grover(q, k_mat, tau, &GroverConfig::sampled(seed), ledger)?
        }
        Method::GroverAnalytic => {
            build_support_grover(q, k_mat, tau, &GroverConfig::analytic(), ledger)?
        }
    };
    Ok(Some(support))
}

/// Runs `method` end to end. [`Method::Sparse`] uses `given` as its supports
/// and fails without them.
pub fn run(
    method: Method,
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    v: &DenseMatrix,
    tau: f64,
    seed: u64,
    given: Option<&SupportSets>,
) -> Result<RunOutcome> {
    let mut search = QueryCostLedger::new();
    let mut attention = QueryCostLedger::new();
    if method == Method::Exact {
        let output = exact_attention_metered(q, k_mat, v, &mut attention)?;
        return Ok(RunOutcome {
            support: None,
            output,
            search,
            attention,
        });
    }
    let support = match find_support(method, q, k_mat, tau, seed, &mut search)? {
        Some(s) => s,
        None => given
            .cloned()
            .ok_or_else(|| Error::Invalid("sparse method needs support sets".into()))?,
    };
    let b = build_b(&support)?;
    let output = sparse_attention(&b, v, &mut attention)?;
    Ok(RunOutcome {
        support: Some(support),
        output,
        search,
        attention,
    })
}
