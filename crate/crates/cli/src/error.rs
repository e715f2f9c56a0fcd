use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] dressed_ion::Error),

    #[error("output error: {0}")]
    Output(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use dressed_ion::Error as E;
        match self {
            CliError::Config(_) => 2,
            // these come straight from configured values
            CliError::Model(E::InvalidParameter { .. } | E::ResonanceCollision { .. } | E::IllegalStep { .. }) => 2,
            CliError::Model(_) => 3,
            CliError::Output(_) | CliError::Csv(_) => 1,
        }
    }
}

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
