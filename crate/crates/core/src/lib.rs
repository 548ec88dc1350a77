//! Threshold-sparse softmax attention.
//!
//! The attention matrix `A = exp(QK^T)` is approximated by a matrix `B` that
//! keeps `A` on each row's support set `S_i = {j : <Q_i, K_j> >= tau}` and is
//! `1` everywhere else. `B` therefore splits into an all-ones rank-1 part and
//! a row-sparse correction, and `D(B)^-1 B V` costs `O(nkd)` once the supports
//! are known.
//!
//! Supports can be found three ways, all metered on the same
//! [`QueryCostLedger`] axis:
//!
//! * [`brute_force_support`]: the `n^2` scan, used as the oracle.
//! * [`build_support_hsr`]: a dynamic half-space reporting tree over the keys.
//! * [`build_support_grover`]: a simulated Grover search per row, sampled from
//!   the exact rotation dynamics or charged with the analytic cost model.
//!
//! [`error_report`] and [`certify`] check the perturbation bounds against the
//! exact dense path in [`exact_attention`].

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brute;
pub mod error;
pub mod grover;
pub mod hsr;
pub mod instance;
pub mod ledger;
pub mod linalg;
pub mod pipeline;
pub mod reference;
pub mod sparse;
pub mod stats;

pub use brute::{brute_force_support, row_score_oracle};
pub use error::{Error, Result};
pub use grover::{
    build_support_grover, find_all_marked, grover_success_prob, validate_rotation_model,
    GroverConfig, GroverMode, RotationReport,
};
pub use hsr::{build_support_hsr, HsrTree, PointId};
pub use instance::{generate, Instance, InstanceSpec, Mode};
pub use ledger::QueryCostLedger;
pub use linalg::{
    check_goodness, dot, entrywise_inf_norm_diff, matmul, DenseMatrix, GoodnessReport,
    SparseCorrection, SupportSets,
};
pub use pipeline::{run, Method, RunOutcome};
pub use reference::{exact_attention, exact_attention_metered, exact_dense_a, AttentionOutput};
pub use sparse::{
    build_b, certify, error_report, sparse_attention, Certificate, CheckLine, ErrorReport, SparseB,
};
