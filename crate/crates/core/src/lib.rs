//! Transaction graphs, absorbing-chain solvers, and fungibility metrics.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`graph`] builds a weighted directed transaction graph from utxo
//!    transactions or account transfers, augments it with one absorber
//!    per source of funds, and prunes states that could never absorb.
//! 2. [`chain`] turns the augmented graph into an absorbing Markov chain
//!    over reversed edges: walking a coin's value backward toward where
//!    it came from.
//! 3. [`solver`] computes each queried state's absorption distribution
//!    and expected steps, exactly via a dense factorization or at scale
//!    via a truncated power series.
//! 4. [`metrics`] scores states by the Shannon entropy of their origin
//!    distribution (fungibility in bits) and aggregates reports.
//!
//! [`oracle`] cross-checks the solvers with brute-force random walks, and
//! [`io`] owns every file format. All published numbers are deterministic
//! functions of the inputs and settings, independent of thread count.

pub mod chain;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod solver;
pub mod sparse;

pub use chain::{apply_overrides, build_chain, AbsorbingChain, HeuristicOverride};
pub use error::{Error, Result};
pub use graph::{
    augment_absorbers, build_account_graph, build_temporal_account_graph, build_utxo_graph,
    collapse_shielded_graph, collapse_shielded_records, prune_non_absorbing, AugmentedGraph,
    NodeId, NodeKind, PruneReport, TransferRecord, TxGraph, UtxoTransaction, MINT, SHIELDED_POOL,
};
pub use metrics::{
    fungibility, fungibility_trajectory, shannon_entropy, summary_stats,
    zcash_adjusted_fungibility, FungibilityReport, PriorPoolDistribution, SummaryStats,
};
pub use oracle::{simulate, WalkStats};
pub use solver::{solve, solve_exact, solve_iterative, AbsorptionResult, SolverConfig, SolverMode};
