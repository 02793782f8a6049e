use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The rollout schedule is not a standard stepped wedge design.
    #[error("invalid design: {0}")]
    Design(String),

    /// Periods where no new cluster adopts (ties in the cumulative counts).
    #[error("non-standard design: period {period} adds no new treated clusters")]
    NonStandardDesign { period: usize },

    #[error("assignment inconsistent with design: {0}")]
    Consistency(String),

    #[error("period {period} out of range 0..={max}")]
    PeriodOutOfRange { period: usize, max: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("empty cell: cluster {cluster}, period {period}")]
    EmptyCell { cluster: i64, period: usize },

    #[error("degenerate period {period}: {reason}")]
    DegeneratePeriod { period: usize, reason: String },

    #[error("singular design: column `{role}` is linearly dependent on earlier columns")]
    SingularDesign { role: String },

    #[error("too many parameters: {columns} columns for {rows} rows")]
    TooManyParameters { columns: usize, rows: usize },

    #[error("closed-form and coefficient estimates disagree at period {period}: {coefficient} vs {closed_form}")]
    InternalConsistency {
        period: usize,
        coefficient: f64,
        closed_form: f64,
    },

    #[error("incomplete potential-outcome table: {0}")]
    IncompleteTable(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("replication {index} failed: {cause}")]
    Replication { index: usize, cause: Box<Error> },

    #[error("invalid simulation setup: {0}")]
    Simulation(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
