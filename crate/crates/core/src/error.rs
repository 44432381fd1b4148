use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite sample at grid index ({j}, {k})")]
    NonFinite { j: usize, k: usize },

    #[error("grid mismatch: expected n={expected_n}, L={expected_l}; found n={found_n}, L={found_l}")]
    GridMismatch {
        expected_n: usize,
        expected_l: f64,
        found_n: usize,
        found_l: f64,
    },

    #[error("region is empty")]
    EmptyRegion,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("oracle refused: grid n={n} exceeds the oracle limit {limit}")]
    OracleLimit { n: usize, limit: usize },

    #[error("k must be < 1 (got {0})")]
    DistortionTooLarge(f64),

    #[error("coefficient not supported in the unit disk: |mu| = {value:.3e} at z = {z}")]
    SupportViolation { z: Complex64, value: f64 },

    #[error("coefficient exceeds its bound: |mu| = {value} > k = {k}")]
    BoundViolation { value: f64, k: f64 },

    #[error("Neumann iteration did not converge after {iterations} iterations (last increment ratio {last:.3e})")]
    NonConvergence { iterations: usize, last: f64, history: Vec<f64> },

    #[error("Jacobian negative on {count} cells (allowed {allowed}); discretization failure")]
    NegativeJacobian { count: usize, allowed: usize },

    #[error("Newton inversion stagnated for target {target}: best residual {residual:.3e}")]
    InversionStagnated { target: Complex64, residual: f64 },

    #[error("target {0} lies outside the image of the map")]
    OutsideImage(Complex64),

    #[error("disks {0} and {1} of the cover intersect")]
    NotDisjoint(usize, usize),

    #[error("dilated disk {index} leaves the grid")]
    DiskLeavesGrid { index: usize },

    #[error("test function is not supported inside the reliable window (|z| <= {radius})")]
    TestSupport { radius: f64 },

    #[error("masked area {masked:.3e} exceeds 1% of the test support area {support:.3e}")]
    PairingMask { masked: f64, support: f64 },

    #[error("Hölder exponents do not pair: 1/p + 1/q = {0}")]
    ExponentPairing(f64),

    #[error("exponent bookkeeping failed: q(alpha-1)+2 = {lhs} but d = {rhs}")]
    ExponentIdentity { lhs: f64, rhs: f64 },

    #[error("{0}")]
    Format(String),

    #[error("truncation {index}: {source}")]
    Truncation { index: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure lies in the numerics rather than in the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Self::NonConvergence { .. }
            | Self::NegativeJacobian { .. }
            | Self::InversionStagnated { .. }
            | Self::OutsideImage(_)
            | Self::PairingMask { .. }
            | Self::ExponentIdentity { .. } => true,
            Self::Truncation { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Short kebab-case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidGrid(_) => "invalid-grid",
            Self::NonFinite { .. } => "non-finite",
            Self::GridMismatch { .. } => "grid-mismatch",
            Self::EmptyRegion => "empty-region",
            Self::InvalidParameter(_) => "invalid-parameter",
            Self::OracleLimit { .. } => "oracle-limit",
            Self::DistortionTooLarge(_) => "distortion-too-large",
            Self::SupportViolation { .. } => "support-violation",
            Self::BoundViolation { .. } => "bound-violation",
            Self::NonConvergence { .. } => "non-convergence",
            Self::NegativeJacobian { .. } => "negative-jacobian",
            Self::InversionStagnated { .. } => "inversion-stagnated",
            Self::OutsideImage(_) => "outside-image",
            Self::NotDisjoint(..) => "not-disjoint",
            Self::DiskLeavesGrid { .. } => "disk-leaves-grid",
            Self::TestSupport { .. } => "test-support",
            Self::PairingMask { .. } => "pairing-mask",
            Self::ExponentPairing(_) => "exponent-pairing",
            Self::ExponentIdentity { .. } => "exponent-identity",
            Self::Format(_) => "format",
            Self::Truncation { source, .. } => source.kind(),
            Self::Io(_) => "io",
        }
    }
}
