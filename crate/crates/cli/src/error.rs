use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error("missing required keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("comparison error: {0}")]
    Compare(String),
    #[error(transparent)]
    Core(#[from] ocp_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Stable identifier written to failure records.
    pub fn kind(&self) -> &'static str {
        use ocp_core::Error as E;
        match self {
            CliError::Config { .. } => "config",
            CliError::MissingKeys(_) => "missing-keys",
            CliError::Compare(_) => "compare",
            CliError::Io(_) => "io",
            CliError::Core(e) => match e {
                E::Config(_) => "config",
                E::Shape(_) => "shape",
                E::Contract(_) => "contract",
                E::Numeric(_) => "numeric",
                E::Geometry(_) => "geometry",
                E::Domain(_) => "domain",
                E::SamplerCollapse(_) => "sampler-collapse",
                E::Divergence(_) => "divergence",
                E::Unsupported(_) => "unsupported",
                E::UndefinedMetric(_) => "undefined-metric",
                E::Range(_) => "range",
                E::Integrity(_) => "integrity",
                E::Parse(_) => "parse",
                E::Io(_) => "io",
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
