use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("surface description could not be parsed: {0}")]
    Parse(String),
    #[error("patch {patch} references vertex {vertex}, but only {count} vertices exist")]
    BadVertexIndex { patch: usize, vertex: usize, count: usize },
    #[error("patch {patch} is not planar (corner offset {offset:.3e} from its plane)")]
    NonPlanar { patch: usize, offset: f64 },
    #[error("patch {patch} is degenerate (area {area:.3e})")]
    Degenerate { patch: usize, area: f64 },
    #[error("patch {patch} has a singular bilinear parametrization")]
    SingularParametrization { patch: usize },
    #[error("non-manifold edge ({a}, {b}) shared by {count} patches")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("patches {first} and {second} share {shared} edges")]
    MultipleSharedEdges { first: usize, second: usize, shared: usize },
    #[error("patches {first} and {second} traverse edge ({a}, {b}) in the same direction")]
    InconsistentOrientation { first: usize, second: usize, a: usize, b: usize },
    #[error("vertex {vertex} is not a manifold vertex (incident patches do not form one fan)")]
    NonManifoldVertex { vertex: usize },
    #[error("point is not on cone face ({vertex}, {face}): off by {offset:.3e}")]
    NotOnFace { vertex: usize, face: usize, offset: f64 },
    #[error("point is not on the surface")]
    NotOnSurface,
    #[error("resolution of unity invalid for this surface: {0}")]
    Resolution(String),
    #[error("vertex {vertex} or face {face} out of range")]
    BadFace { vertex: usize, face: usize },
}

#[derive(Debug, Error)]
pub enum WaveletError {
    #[error("sampler returned a non-finite value on patch {patch} at uv = ({u}, {v})")]
    Sampler { patch: usize, u: f64, v: f64 },
    #[error("max level {max_level} below the coarsest level {coarsest}")]
    LevelTooSmall { max_level: u32, coarsest: u32 },
    #[error("coefficient storage of {bytes} bytes exceeds the budget of {budget} bytes")]
    MemoryBudget { bytes: u64, budget: u64 },
    #[error("index {0} is not valid for this basis and surface")]
    BadIndex(String),
    #[error("moment check refused: index is a boundary index")]
    BoundaryIndex,
    #[error("coefficient file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SpacesError {
    #[error("parameters (alpha={alpha}, p={p}, q={q}) are not admissible")]
    NotAdmissible { alpha: f64, p: f64, q: f64 },
    #[error("interpolation parameter {0} outside (0, 1)")]
    Theta(f64),
    #[error("both fine indices are infinite")]
    InfiniteFineIndices,
    #[error("weighted space needs rho >= 0 (got k={k}, rho={rho})")]
    BadWeightedSpec { k: u32, rho: f64 },
    #[error("derivative order {0} not supported (at most 2)")]
    UnsupportedOrder(u32),
    #[error("function handle produced a non-finite value on face ({vertex}, {face})")]
    NonFinite { vertex: usize, face: usize },
    #[error("finite differences requested within {dist:.3e} of the face boundary (minimum {min:.3e}); supply analytic derivatives")]
    FiniteDifferenceNearBoundary { dist: f64, min: f64 },
    #[error("weighted quadrature did not converge; worst face (vertex {vertex}, face {face})")]
    Divergent { vertex: usize, face: usize },
    #[error(transparent)]
    Surface(#[from] SurfaceError),
}

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("target must satisfy p = q < infinity (got p={p}, q={q})")]
    TargetNotDiagonal { p: f64, q: f64 },
    #[error("pair does not embed")]
    NoEmbedding,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("tau = {tau} outside the admissible range for this estimate")]
    TauOutOfRange { tau: f64 },
    #[error("basis has {have} vanishing moments, {need} needed")]
    TooFewMoments { have: u32, need: u32 },
    #[error("rate fit needs at least 4 samples with positive errors")]
    BadSamples,
    #[error("Whitney seminorm vanished with nonzero polynomial residual {0:.3e}")]
    ZeroSeminorm(f64),
    #[error(transparent)]
    Spaces(#[from] SpacesError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
}

#[derive(Debug, Error)]
pub enum BemError {
    #[error("kernel evaluated at coincident points")]
    Coincident,
    #[error("system with {unknowns} unknowns exceeds the budget of {budget}")]
    Budget { unknowns: usize, budget: usize },
    #[error("discretization level must be at least 1")]
    Level,
    #[error("matrix is numerically singular")]
    Singular,
    #[error("GMRES stalled at relative residual {0:.3e}")]
    NoConvergence(f64),
    #[error("evaluation point too close to the surface (distance {dist:.3e}, minimum {min:.3e})")]
    TooClose { dist: f64, min: f64 },
    #[error("point lies on a patch edge")]
    OnEdge,
    #[error("right-hand side has {got} entries, expected {expected}")]
    RhsLength { got: usize, expected: usize },
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Spaces(#[from] SpacesError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Bem(#[from] BemError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
