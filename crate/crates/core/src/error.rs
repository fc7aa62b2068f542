use thiserror::Error;

#[derive(Debug, Error)]
pub enum QmgmError {
    #[error("constant column `{0}`")]
    ConstantColumn(String),

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("binary column `{column}` has value {value} at row {row}, expected 0 or 1")]
    InvalidBinary {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("count column `{column}` has negative value {value} at row {row}")]
    NegativeCount {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("dataset contains {0} missing cells; impute before fitting")]
    MissingValues(usize),

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid quantile grid: {0}")]
    QuantileGrid(String),

    #[error("invalid lambda grid: {0}")]
    LambdaGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("csv error at row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column `{0}` is not declared in the schema")]
    UnknownColumn(String),

    #[error("schema column `{0}` is missing from the data")]
    MissingColumn(String),

    #[error("need at least {needed} complete rows for imputation, found {found}")]
    NotEnoughCompleteRows { needed: usize, found: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("document error: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QmgmError {
    /// True for errors caused by the input data rather than by the solver.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, QmgmError::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, QmgmError>;
