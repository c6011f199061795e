//! Numeric tolerances used across the crate and its test suites.
//!
//! Every tolerance is a deliberate, documented constant rather than an ad-hoc
//! literal at the assertion site. Three regimes appear:
//!
//! * **Algebraic identities** (group laws, exact equivariance with co-rotated
//!   grids): these hold to rounding error and are tested near machine
//!   precision, `1e-12`…`1e-9` depending on the depth of the computation.
//! * **Finite-difference oracles**: central differences with step `h = 1e-6`
//!   in double precision leave ≈`1e-10` truncation + cancellation noise per
//!   coordinate, so gradients are checked at `1e-6` (single primitives) or
//!   `1e-5` (deep composites) *relative* error.
//! * **Discretization/optimization artifacts** (repulsion grids vs. analytic
//!   platonic solids): degrees-scale tolerances reflecting optimizer
//!   convergence, not float error.

/// Max deviation for single-shot algebraic identities on small matrices:
/// group axioms, action homomorphism, Gram invariance under rotation.
pub const EPS_GROUP: f64 = 1e-12;

/// Max deviation for attribute invariance under random group actions and for
/// attribute → representative → attribute round trips (a handful of matrix
/// products and norms deep).
pub const EPS_ATTR: f64 = 1e-10;

/// Max deviation for stabilizer independence of attributes (Lemma-level
/// identity; two representative choices differ by one extra rotation).
pub const EPS_STABILIZER: f64 = 1e-12;

/// Orthogonality / unit-determinant tolerance for rotation matrices.
pub const EPS_ROTATION: f64 = 1e-10;

/// Unit-norm tolerance for orientations and grid points.
pub const EPS_UNIT: f64 = 1e-10;

/// Relative tolerance for exact co-rotated network equivariance (scalar
/// outputs equal; vector outputs rotated) at float64: deep composites
/// accumulate ≈1e3 ulps through five blocks of matmuls.
pub const EPS_EQUIVARIANCE: f64 = 1e-9;

/// Absolute tolerance for the separable vs. non-separable convolution
/// identity on random graphs — one layer deep but kernel nets inside.
pub const EPS_SEPARABLE: f64 = 1e-8;

/// Relative error bound for finite-difference checks of single primitives
/// (float64, central differences, h = 1e-6).
pub const EPS_FD_PRIMITIVE: f64 = 1e-6;

/// Relative error bound for finite-difference checks of composite networks.
pub const EPS_FD_COMPOSITE: f64 = 1e-5;

/// Central finite-difference step used by the gradient-check oracles.
pub const FD_STEP: f64 = 1e-6;

/// Absolute bound on the net force Σᵢ Fᵢ of a translation-invariant energy.
pub const EPS_NET_FORCE: f64 = 1e-7;

/// Relative tolerance for force equivariance (F → R·F under co-rotation).
pub const EPS_FORCE_EQUIVARIANCE: f64 = 1e-8;

/// Degrees of slack allowed between repulsion-converged grids and analytic
/// platonic minimum pairwise angles (optimizer convergence, not float error).
pub const GRID_ANGLE_TOL_DEG: f64 = 0.5;

/// Per-entry tolerance on the icosahedral second moment Σ o oᵀ = (N/3)·I.
pub const EPS_SECOND_MOMENT_EXACT: f64 = 1e-6;

/// Per-entry relative slack (× N/3) on second moments of repulsion grids
/// with N ≥ 12 points.
pub const SECOND_MOMENT_REL_SLACK: f64 = 0.05;

/// Tolerance for the two-point repulsion optimum reaching the antipode.
pub const EPS_ANTIPODAL: f64 = 1e-6;

/// Max point displacement at which repulsion iterations count as converged.
pub const REPULSION_CONVERGENCE: f64 = 1e-9;

/// Momentum-conservation drift allowed per unit simulated time in the
/// charged-particle integrator (internal forces only).
pub const EPS_MOMENTUM_DRIFT: f64 = 1e-9;

/// Relative energy drift allowed for the symplectic integrator over a full
/// trajectory at dt = 1e-3.
pub const EPS_ENERGY_DRIFT: f64 = 1e-4;
