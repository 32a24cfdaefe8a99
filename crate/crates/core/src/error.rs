//! Crate-wide error type. Variants carry enough context (node ids, line
//! numbers, sums) that callers can print them without extra lookups.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    // ---- graph construction ----
    #[error("amount overflow while accumulating {what}")]
    AmountOverflow { what: String },
    #[error("unknown node {id}")]
    UnknownNode { id: String },
    #[error("node {id} already declared as {existing}, now used as {requested}")]
    NodeKindConflict {
        id: String,
        existing: &'static str,
        requested: &'static str,
    },
    #[error("record {seq}: {reason}")]
    InvalidRecord { seq: u64, reason: String },
    #[error("account {account} overdrawn at record {seq}: holds {held}, needs {needed}")]
    Overdraft {
        account: String,
        seq: u64,
        held: u64,
        needed: u64,
    },

    // ---- utxo construction ----
    #[error("duplicate txid {txid}")]
    DuplicateTxid { txid: String },
    #[error("coinbase {txid} must not list inputs")]
    CoinbaseWithInputs { txid: String },
    #[error("{spender} double-spends {txid}:{vout}")]
    DoubleSpend {
        txid: String,
        vout: u32,
        spender: String,
    },
    #[error("{spender} spends {txid}:{vout} from outside the window without a value")]
    MissingBoundaryValue {
        spender: String,
        txid: String,
        vout: u32,
    },
    #[error("{spender} declares {declared} for {txid}:{vout} but the window recorded {resolved}")]
    BoundaryValueMismatch {
        spender: String,
        txid: String,
        vout: u32,
        declared: u64,
        resolved: u64,
    },
    #[error("{txid} outputs {outputs} exceed its inputs {inputs}")]
    OutputsExceedInputs {
        txid: String,
        inputs: u128,
        outputs: u128,
    },

    // ---- absorber augmentation ----
    #[error("{node} declares balance {declared} but sent {outflow} against {inflow} received")]
    BalanceShortfall {
        node: String,
        declared: u64,
        inflow: u128,
        outflow: u128,
    },
    #[error("absorber id {id} collides with an existing node")]
    AbsorberIdCollision { id: String },

    // ---- chain construction ----
    #[error("no absorbing states: no node declares a balance or spends more than it received")]
    NoAbsorbers,
    #[error("row for {node} sums to {sum}, not 1")]
    RowNotStochastic { node: String, sum: f64 },
    #[error("{id} is not a transient state")]
    NotTransient { id: String },
    #[error("more than one override for {id}")]
    DuplicateOverride { id: String },
    #[error("override for {node} is not a distribution: {reason}")]
    InvalidOverrideRow { node: String, reason: String },
    #[error("override leaves {node} sending mass toward {target}, which can no longer absorb")]
    OverrideStrandsMass { node: String, target: String },

    // ---- solving ----
    #[error("invalid solver config: {reason}")]
    InvalidConfig { reason: String },
    #[error("{transients} transient states exceed the exact-solver cutoff {cutoff}")]
    ExactSizeExceeded { transients: usize, cutoff: usize },
    #[error("(I - Q) is numerically singular")]
    SingularSystem,
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("query {id} is not a transient state of the chain")]
    UnknownQuery { id: String },
    #[error("{id} was not queried in this result")]
    NotQueried { id: String },
    #[error("absorption row for {node} sums to {sum}, outside tolerance")]
    AbsorptionMassInvalid { node: String, sum: f64 },

    // ---- metrics ----
    #[error("negative probability {value}")]
    NegativeProbability { value: f64 },
    #[error("probabilities sum to {sum}, more than {tolerance} away from 1")]
    MassOutOfTolerance { sum: f64, tolerance: f64 },
    #[error("{what} is empty")]
    EmptyInput { what: String },
    #[error("{id} does not own an absorbing state")]
    NotAbsorberOwner { id: String },
    #[error("pool mass {value} is outside [0, 1]")]
    PoolMassRange { value: f64 },
    #[error("walk count must be positive")]
    NoWalks,

    // ---- monte carlo ----
    #[error("walk from {start} exceeded {cap} steps without absorbing")]
    WalkStepCap { start: String, cap: u64 },

    // ---- io ----
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("json line {line}: {message}")]
    Json { line: u64, message: String },
    #[error("bad header: expected {expected}, found {found}")]
    BadHeader { expected: String, found: String },
    #[error("line {line}: bad amount {text:?}: {reason}")]
    BadAmount {
        line: u64,
        text: String,
        reason: String,
    },
    #[error("report has no data rows")]
    EmptyReport,
    #[error("report line {line}: {reason}")]
    BadReport { line: u64, reason: String },
    #[error("node id {id} is reserved here: {context}")]
    ReservedNodeId { id: String, context: String },
}
