use thiserror::Error;

/// Errors raised by the library. Messages are prefixed with the module that
/// produced them so the CLI can surface them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data: dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("data: non-finite value at row {row}, column {col}")]
    InvalidValue { row: usize, col: usize },
    #[error("data: binary label at index {index} is {value}, expected -1 or +1")]
    InvalidLabel { index: usize, value: f64 },
    #[error("data: invalid test fraction {0}, must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("data: {0}")]
    InvalidData(String),
    #[error("data: a split of {n} rows with test fraction {fraction} leaves one side empty")]
    EmptyPartition { n: usize, fraction: f64 },

    #[error("mining: transaction database is empty")]
    EmptyDatabase,
    #[error("mining: support entry missing for itemset {{{0}}}")]
    MissingSupportEntry(String),
    #[error("mining: rule references item `{0}` which is not a dataset column")]
    UnknownItem(String),
    #[error("mining: malformed rule line {line}: {reason}")]
    RuleFormat { line: usize, reason: String },

    #[error("selection: rule set is empty")]
    EmptyRuleSet,
    #[error("selection: bounds infeasible: {0}")]
    BoundsInfeasible(String),
    #[error("{module}: no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence {
        module: &'static str,
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("decorrelation: weighted design is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },
    #[error("models: singular system in {0}; try a ridge penalty")]
    Singular(String),

    #[error("synthesis: label generation needs at least 2 stable columns, got {0}")]
    TooFewStableColumns(usize),
    #[error("synthesis: bias sampling rejected every row; enlarge the pool")]
    EmptySelection,

    #[error("evaluation: empty input")]
    EmptyInput,
    #[error("evaluation: need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("evaluation: need at least 2 items, got {0}")]
    TooFewItems(usize),

    #[error("ingestion: schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("ingestion: cannot parse `{value}` at row {row}, column {col}")]
    ParseError {
        row: usize,
        col: usize,
        value: String,
    },
    #[error("ingestion: column `{0}` is constant and cannot be discretized")]
    DegenerateColumn(String),
    #[error("ingestion: column `{0}` has no observed values")]
    AllMissingColumn(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
