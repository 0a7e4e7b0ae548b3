use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("state index {index} out of range for a table with {len} states")]
    StateIndex { index: usize, len: usize },

    #[error("state {state}: |refl|^2 + |refr|^2 = {total} exceeds 1 (insertion loss bound)")]
    InsertionLoss { state: usize, total: f64 },

    #[error("invalid element table: {0}")]
    InvalidTable(String),

    #[error("non-finite admittance in {0}")]
    NonFiniteAdmittance(&'static str),

    #[error("frequency must be positive, got {0} Hz")]
    NonPositiveFrequency(f64),

    #[error("singular two-port network: A + B/Z0 + Z0*C + D vanishes")]
    SingularNetwork,

    #[error("phase resolution must be at least one bit")]
    ZeroBits,

    #[error("distances must be positive (d1 = {d1}, d2 = {d2})")]
    NonPositiveDistance { d1: f64, d2: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("effective channel is rank deficient: rank {rank} < {users} users")]
    RankDeficient { rank: usize, users: usize },

    #[error("more users ({users}) than transmit antennas ({antennas})")]
    TooManyUsers { users: usize, antennas: usize },

    #[error("exhaustive search over {configurations} configurations exceeds the bound of {bound}")]
    InstanceTooLarge { configurations: f64, bound: usize },

    #[error("codebook size {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("only {sections} distinguishable sections for {users} users")]
    InsufficientSections { sections: usize, users: usize },

    #[error("invalid grouping: {0}")]
    Grouping(String),

    #[error("pattern is flat; main lobe undefined")]
    FlatPattern,

    #[error("invalid scenario: {key}: {msg}")]
    InvalidScenario { key: String, msg: String },

    #[error("config error{}: {key}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        msg: String,
    },

    #[error("probe failed: {0}")]
    Probe(String),

    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 numerical, 3 infeasible.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::InvalidScenario { .. }
            | Error::Io { .. }
            | Error::InvalidTable(_)
            | Error::InsertionLoss { .. } => 1,
            Error::InstanceTooLarge { .. }
            | Error::InsufficientSections { .. }
            | Error::TooManyUsers { .. } => 3,
            _ => 2,
        }
    }
}
