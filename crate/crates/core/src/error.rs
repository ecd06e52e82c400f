use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{kind} '{name}' unknown{}", Suggestions(.suggestions))]
    Unknown {
        kind: &'static str,
        name: String,
        suggestions: Vec<String>,
    },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("unsupported model file version '{0}'")]
    UnsupportedVersion(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(
        "training diverged at outer iteration {iteration} (objective {objective}); \
         try a smaller step size"
    )]
    Diverged { iteration: usize, objective: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Process exit code for this error: 1 for I/O, 3 for numerical
    /// divergence, 2 for every input or validation problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 1,
            Error::Diverged { .. } | Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}

struct Suggestions<'a>(&'a [String]);

impl fmt::Display for Suggestions<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return Ok(());
        }
        write!(f, " (did you mean: {}?)", self.0.join(", "))
    }
}
