use serde::Serialize;

/// Exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNCONVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Error record printed to stderr as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            kind: "io",
            message: message.into(),
        }
    }

    pub fn ingest(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "ingest",
            message: message.into(),
        }
    }

    pub fn unconverged(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_UNCONVERGED,
            kind: "unconverged",
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&serde_json::json!({ "error": self })).unwrap_or_default()
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for Failure {}

impl From<usot::Error> for Failure {
    fn from(e: usot::Error) -> Self {
        use usot::Error as E;
        match e {
            E::Convergence { .. } => Self::unconverged(e.to_string()),
            E::Ingest(_) => Self::ingest(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}
