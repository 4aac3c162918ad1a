use fracshape::FracError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Frac(#[from] FracError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for usage, config and input errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Frac(
                FracError::NotConverged { .. } | FracError::NotPositiveDefinite | FracError::MaximumPrinciple(_),
            ) => 3,
            _ => 2,
        }
    }
}
