use std::fmt;

/// Command failure, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    /// Errors from the dynamics and numeric code, passed through verbatim.
    Domain(String),
    Divergence(String),
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Domain(_) | CliError::Output(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Domain(_) => "domain",
            CliError::Divergence(_) => "divergence",
            CliError::Output(_) => "output",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Domain(m) | CliError::Divergence(m) | CliError::Output(m) => m,
        }
    }

    /// One line of JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.message(), "exit_code": self.exit_code() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl From<rbp_core::Error> for CliError {
    fn from(e: rbp_core::Error) -> Self {
        use rbp_core::Error as E;
        let msg = e.to_string();
        if e.is_data_error() {
            return CliError::Data(msg);
        }
        match e {
            E::Divergence(_) => CliError::Divergence(msg),
            E::Domain(_) => CliError::Domain(msg),
            _ => CliError::Config(msg),
        }
    }
}
