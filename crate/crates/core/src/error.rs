use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("syntax error at byte {offset}: expected {}", .expected.join(" | "))]
    Parse { offset: usize, expected: Vec<String> },

    #[error("cannot evaluate `{expr}` at x = {x}: {reason}")]
    Eval { expr: String, x: f64, reason: String },

    #[error("rank-deficient frame ({0})")]
    RankDeficient(String),

    #[error("leading coefficient not positive at x = {x} (value {value})")]
    DegenerateLeading { x: f64, value: f64 },

    #[error("integration blew up at x = {x} (lambda = {lambda})")]
    BlowUp { x: f64, lambda: f64 },

    #[error("invariance violated on {place} at node {node} (t = {t}, rho = {rho:e})")]
    InvarianceViolation { place: String, node: usize, t: f64, rho: f64 },

    #[error("grid too coarse near t = {t}: {reason}")]
    NeedsFinerGrid { t: f64, reason: String },

    #[error("assumption (B) does not hold: {0}")]
    AssumptionB(String),

    #[error("config error: {0}")]
    Config(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach a location label to an invariance violation coming from a generic path.
    pub fn at_place(self, label: &str) -> Self {
        match self {
            Error::InvarianceViolation { node, t, rho, .. } => Error::InvarianceViolation {
                place: label.to_string(),
                node,
                t,
                rho,
            },
            other => other,
        }
    }
}
