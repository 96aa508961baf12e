use thiserror::Error;

/// Errors raised anywhere in the construction and verification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("energy {energy} lies within {delta} of the band edge")]
    EdgeEnergy { energy: f64, delta: f64 },

    #[error("energies {a} and {b} coincide")]
    DuplicateEnergy { a: f64, b: f64 },

    #[error("boundary angle {0} is outside [0, pi)")]
    InvalidAngle(f64),

    #[error("step with |V|/sin(pi k) = {ratio} exceeds the admissible bound {limit}")]
    StepTooLarge { ratio: f64, limit: f64 },

    #[error("site {site} is outside the horizon {horizon}")]
    OutOfHorizon { site: u64, horizon: u64 },

    #[error("no block length up to {nmax} certifies the averaging bound {epsilon}")]
    NoBlockFound { nmax: usize, epsilon: f64 },

    #[error("quasimomentum {k} makes the nu = {nu} averages degenerate")]
    ResonantBlockDegenerate { k: f64, nu: u32 },

    #[error("target energy {target} (or its mirror) appears among the bystanders")]
    ResonantHypothesisViolated { target: f64 },

    #[error("horizon {horizon} does not extend past the piece start {start}")]
    HorizonTooShort { start: u64, horizon: u64 },

    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),

    #[error("envelope never admits class {class} before site {horizon}")]
    EnvelopeNeverFits { class: usize, horizon: u64 },

    #[error("envelope violated at site {site}: |V|(1+n) = {scaled} > h(n) = {bound}")]
    EnvelopeViolated { site: u64, scaled: f64, bound: f64 },

    #[error("trace has {samples} samples spanning a factor {span} in n - b; need >= 50 samples over a decade")]
    InsufficientSpan { samples: usize, span: f64 },

    #[error("trace is decimated inside the requested window at site {0}")]
    DecimatedTrace(u64),

    #[error("malformed potential: {0}")]
    MalformedPotential(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
