use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Work counters shared by every support finder and attention path.
///
/// `oracle_calls` is the query-complexity axis: one call is one `d`-length
/// dot product followed by a threshold test. `classical_scan_calls` counts
/// predicate evaluations the Grover simulator performs to know the marked set;
/// they are simulation overhead and never part of the quantum cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCostLedger {
    pub oracle_calls: u64,
    pub grover_iterations: u64,
    pub dot_product_flops: u64,
    pub classical_scan_calls: u64,
    pub nodes_visited: u64,
}

impl QueryCostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// One metered inner product of length `d`.
    pub fn charge_oracle(&mut self, d: usize) {
        self.oracle_calls += 1;
        self.dot_product_flops += d as u64;
    }

    pub fn charge_flops(&mut self, flops: u64) {
        self.dot_product_flops += flops;
    }

    pub fn merge(&mut self, other: &QueryCostLedger) {
        *self += *other;
    }
}

impl Add for QueryCostLedger {
    type Output = QueryCostLedger;

    fn add(mut self, rhs: QueryCostLedger) -> QueryCostLedger {
        self += rhs;
        self
    }
}

impl AddAssign for QueryCostLedger {
    fn add_assign(&mut self, rhs: QueryCostLedger) {
        self.oracle_calls += rhs.oracle_calls;
        self.grover_iterations += rhs.grover_iterations;
        self.dot_product_flops += rhs.dot_product_flops;
        self.classical_scan_calls += rhs.classical_scan_calls;
        self.nodes_visited += rhs.nodes_visited;
    }
}

impl Sum for QueryCostLedger {
    fn sum<I: Iterator<Item = QueryCostLedger>>(iter: I) -> Self {
        iter.fold(QueryCostLedger::default(), Add::add)
    }
}
