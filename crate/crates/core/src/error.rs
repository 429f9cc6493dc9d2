use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // lattice
    #[error("negative rate {rate} on edge {from} -> {to}")]
    NegativeRate { from: String, to: String, rate: String },
    #[error("asymmetric kernel: p({a},{b}) = {ab} but p({b},{a}) = {ba}")]
    AsymmetricKernel { a: String, b: String, ab: String, ba: String },
    #[error("self-loop on site {0}")]
    SelfLoop(String),
    #[error("unknown site {0:?}")]
    UnknownSite(String),
    #[error("duplicate site {0:?}")]
    DuplicateSite(String),
    #[error("boundary entry refers to unknown site {0:?}")]
    UnknownBoundarySite(String),

    // algebra
    #[error("invalid spin {0}: 2j must be a positive integer")]
    InvalidSpin(String),
    #[error("cutoff {got} too small, need at least {min}")]
    CutoffTooSmall { got: usize, min: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("matrix is not strictly lower triangular")]
    NotNilpotentOrTriangular,
    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    // models
    #[error("sector with {0} particles is empty")]
    EmptySector(u32),
    #[error("boundary site {0} has no reservoir parameter")]
    MissingReservoirParam(String),
    #[error("reservoir parameter {value} at site {site} is out of range")]
    InvalidReservoirParam { site: String, value: String },
    #[error("kernel has no boundary sites / sinks")]
    MissingSinks,
    #[error("invalid m = {0}: need m >= 1")]
    InvalidM(u32),
    #[error("transition leads to {0}, outside the enumerated state space")]
    StateOutsideSpace(String),

    // polyops
    #[error("operator uses variable {var} outside the polynomial's {nvars} variables")]
    UnknownVariable { var: usize, nvars: usize },
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("index {index} exceeds the exact range below cutoff {cutoff}")]
    CutoffExceeded { index: usize, cutoff: usize },
    #[error("polynomial is not a function of the site energies")]
    NotExpressibleInEnergy,

    // duality
    #[error("detailed balance fails between states {0} and {1}")]
    NotReversible(usize, usize),
    #[error("matrix does not commute with the generator (worst entry {0:?})")]
    NotASymmetry(Option<(usize, usize)>),
    #[error("Q L Q^-1 differs from L^T (worst entry {0:?})")]
    NotAConjugation(Option<(usize, usize)>),
    #[error("derived symmetry does not commute with the generator (worst entry {0:?})")]
    CommutatorNonzero(Option<(usize, usize)>),
    #[error("unknown sink index {0}")]
    UnknownSink(usize),
    #[error("matrix is singular")]
    Singular,

    // simulate
    #[error("total rate {rate} exceeds bound {bound}")]
    RateOverflow { rate: f64, bound: f64 },
    #[error("invalid time step {0}")]
    InvalidDt(f64),
    #[error("negative energy {0}")]
    NegativeEnergy(f64),
    #[error("site {0} holds particles but cannot reach a boundary site")]
    NotAbsorbable(String),
    #[error("lambda {0} outside (0, 1/2)")]
    LambdaOutOfRange(String),
    #[error("event budget of {0} exhausted before completion")]
    MaxEventsExceeded(u64),

    // verify
    #[error("state space of {size} transient states exceeds limit {limit}")]
    SectorTooLarge { size: usize, limit: usize },
    #[error("chain is not lumpable: fine state {fine} to block {block}")]
    NotLumpable { fine: usize, block: usize },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
