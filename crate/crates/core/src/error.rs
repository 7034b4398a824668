use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("inadmissible control: {0}")]
    Admissibility(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("degenerate observation: shock density at r = {r} is below the underflow floor")]
    DegenerateObservation { r: f64 },

    #[error("filter collapse: density has no positive mass")]
    FilterCollapse,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("pruning removed every codebook row (eps = {eps})")]
    PruningExhausted { eps: f64 },

    #[error("bound unavailable: {0}")]
    BoundUnavailable(String),

    #[error("divergent tail integral: p = {p} must exceed N = {n}")]
    DivergentTail { n: u32, p: f64 },

    #[error("domain too wide: {0}")]
    DomainTooWide(String),

    #[error("numerical failure at t = {t}, x index = {x}, codebook row = {k}: {what}")]
    NumericalFailure {
        t: usize,
        x: usize,
        k: usize,
        what: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("configuration invalid:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<String>),

    #[error("stage `{stage}` needs `{missing}`; run `{run_first}` first")]
    MissingArtifact {
        stage: String,
        missing: String,
        run_first: String,
    },

    #[error("artifact `{file}` was produced under different settings; rerun `{run_first}`")]
    StaleArtifact { file: String, run_first: String },

    #[error("artifact `{0}` does not match the manifest")]
    ArtifactMismatch(String),

    #[error("malformed artifact `{file}`: {msg}")]
    Parse { file: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParams(_) => 2,
            Error::NumericalFailure { .. }
            | Error::FilterCollapse
            | Error::DegenerateObservation { .. }
            | Error::BoundUnavailable(_)
            | Error::DomainTooWide(_)
            | Error::DivergentTail { .. }
            | Error::PruningExhausted { .. }
            | Error::Invariant(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
