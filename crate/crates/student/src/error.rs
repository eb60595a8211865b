use thiserror::Error;

pub type Result<T, E = StudentError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StudentError {
    #[error(transparent)]
    Core(#[from] lvkd_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model has {count} parameters, budget is {budget}")]
    Budget { count: usize, budget: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl StudentError {
    pub fn shape(dimension: &'static str, expected: usize, actual: usize) -> Self {
        lvkd_core::Error::shape(dimension, expected, actual).into()
    }
}
