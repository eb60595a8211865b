use lvkd_core::Error as CoreError;
use lvkd_student::StudentError;
use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failures grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorLine {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("plain struct serializes")
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if matches!(e, CoreError::PhantomConfig(_)) {
            CliError::Config(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<StudentError> for CliError {
    fn from(e: StudentError) -> Self {
        match e {
            StudentError::Core(inner) => inner.into(),
            StudentError::Config(_) | StudentError::Budget { .. } => {
                CliError::Config(e.to_string())
            }
            StudentError::Divergence { .. } => CliError::Numerical(e.to_string()),
            StudentError::Checkpoint(_) => CliError::Data(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_categories() {
        let div: CliError = StudentError::Divergence {
            epoch: 3,
            step: 7,
            loss: f64::NAN,
        }
        .into();
        assert_eq!(div.exit_code(), 4);
        let budget: CliError = StudentError::Budget {
            count: 5,
            budget: 4,
        }
        .into();
        assert_eq!(budget.exit_code(), 2);
        let key: CliError = CoreError::Key("x".into()).into();
        assert_eq!(key.exit_code(), 3);
        let degenerate: CliError = CoreError::DegenerateSeries("flat".into()).into();
        assert_eq!(degenerate.exit_code(), 4);
    }

    #[test]
    fn json_line_is_single_line() {
        let e = CliError::Data("bad\nrow".into());
        let line = e.to_json();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["exit_code"], 3);
        assert_eq!(v["error"], "data");
    }
}
