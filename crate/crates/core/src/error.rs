use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bus index {index} out of range for a {buses}-bus network")]
    BusOutOfRange { index: usize, buses: usize },

    #[error("line {from}-{to} has zero series impedance")]
    ZeroImpedance { from: usize, to: usize },

    #[error("invalid line {from}-{to}: {reason}")]
    InvalidLine {
        from: usize,
        to: usize,
        reason: &'static str,
    },

    #[error("network has no lines")]
    NoLines,

    #[error("degenerate machine: r_a^2 + X'_d X'_q = {det:e}")]
    DegenerateMachine { det: f64 },

    #[error("network equations are singular (condition estimate {condition:e})")]
    NetworkSingular { condition: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "protocol violation: generator {receiver} received a message from non-neighbour {sender}"
    )]
    ProtocolViolation { receiver: usize, sender: usize },

    #[error("communication graph is not connected")]
    DisconnectedGraph,

    #[error("invalid adjacency matrix: {0}")]
    InvalidAdjacency(String),

    #[error(
        "power flow did not converge after {iterations} iterations (max mismatch {mismatch:e})"
    )]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("infeasible dispatch for generator {generator}: {reason}")]
    InfeasibleDispatch { generator: usize, reason: String },

    #[error("integration diverged at t = {time} s")]
    IntegrationDiverged { time: f64 },

    #[error("controller state {state} of generator {generator} left its bounds by {excess:e} at t = {time} s")]
    BoundViolation {
        generator: usize,
        state: &'static str,
        excess: f64,
        time: f64,
    },

    #[error("at t = {time} s: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("no records to export")]
    EmptyRecords,

    #[error("window {t0}..{t1} s lies outside the recorded time span")]
    WindowOutOfRange { t0: f64, t1: f64 },

    #[error("malformed trajectory file: {0}")]
    MalformedCsv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(self, time: f64) -> Error {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime {
                time,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping time-context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
