use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at offset {offset}: {message} (expected one of: {})", expected.join(", "))]
    Parse {
        offset: usize,
        message: String,
        expected: Vec<String>,
    },

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("memory budget exceeded: plan needs {needed} elements, budget is {budget}")]
    MemoryBudget { needed: usize, budget: usize },

    #[error("range error: signal `{signal}` produced {value}, outside {lo}..={hi} or not an integer")]
    Range {
        signal: String,
        value: f64,
        lo: i64,
        hi: i64,
    },

    #[error("no solution: FTNILO number {ftnilo:.4} is below 0.25")]
    NoSolution { ftnilo: f64 },

    #[error("ambiguous solution: FTNILO number {ftnilo:.4} exceeds 1.5")]
    AmbiguousSolution { ftnilo: f64 },

    #[error("non-isolated solutions for `{variable}` in [{lo}, {hi}]: count {count:.3}{}", evidence.map(|r| format!(", renormalized ratio {r:.3}")).unwrap_or_default())]
    NonIsolatedSolutions {
        variable: String,
        lo: f64,
        hi: f64,
        count: f64,
        evidence: Option<f64>,
    },

    #[error("degenerate ratio: inner region mass {0:e} is below the numeric floor")]
    DegenerateRatio(f64),

    #[error("divergent amplitude: {0}")]
    DivergentAmplitude(String),

    #[error("infeasible box: every grid node violates a constraint gate")]
    InfeasibleBox,

    #[error("point is outside the box of `{variable}`: {value} not in [{lo}, {hi}]")]
    OutOfBox {
        variable: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("no peak: density never rises above the empty-box baseline")]
    NoPeak,

    #[error("missing marginal for `{0}`")]
    MissingMarginal(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable identifier used in result files and CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DomainError",
            Error::Parse { .. } => "ParseError",
            Error::UnboundVariable(_) => "UnboundVariable",
            Error::UnknownVariable(_) => "UnknownVariable",
            Error::Topology(_) => "TopologyError",
            Error::Mode(_) => "ModeError",
            Error::MemoryBudget { .. } => "MemoryBudgetError",
            Error::Range { .. } => "RangeError",
            Error::NoSolution { .. } => "NoSolution",
            Error::AmbiguousSolution { .. } => "AmbiguousSolution",
            Error::NonIsolatedSolutions { .. } => "NonIsolatedSolutions",
            Error::DegenerateRatio(_) => "DegenerateRatio",
            Error::DivergentAmplitude(_) => "DivergentAmplitude",
            Error::InfeasibleBox => "InfeasibleBox",
            Error::OutOfBox { .. } => "OutOfBox",
            Error::NoPeak => "NoPeak",
            Error::MissingMarginal(_) => "MissingMarginal",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
