//! SE(n)-equivariant group convolutional networks over homogeneous spaces.
//!
//! The crate implements weight sharing over equivalence classes of point
//! pairs: every convolution kernel is conditioned on a bijective invariant
//! attribute of the (sender, receiver) pair, which makes the layers exactly
//! equivariant under rigid motions while keeping the feature maps plain
//! scalar fields. Networks operate on three homogeneous spaces of SE(n):
//!
//! * position space ℝⁿ — isotropic (distance-conditioned) kernels,
//! * position-orientation space ℝⁿ×Sⁿ⁻¹ — the main separable architecture,
//! * the full group SE(n) — pose features, used for attribute computation.
//!
//! Module map:
//!
//! * [`geometry`] — rotations, rigid motions, homogeneous-space points.
//! * [`attributes`] — bijective invariant pair attributes and their inverse
//!   representative constructions.
//! * [`grids`] — uniform spherical grids (repulsion method + exact platonic
//!   solids), grid rotation, Gram matrices, binary grid cache.
//! * [`tensor`] — dense tensors with tape-based reverse-mode autodiff,
//!   Adam, cosine learning-rate schedule, checkpoints.
//! * [`kernel`] — polynomial attribute embedding, shared kernel basis MLP,
//!   per-layer kernel heads.
//! * [`layers`] — spatial/spherical/point-cloud group convolutions, lifting
//!   and readout modules, ConvNeXt-style blocks, full network forwards,
//!   energy/force evaluation.
//! * [`nbody`] — synthetic charged-particle data generator and featurizer.
//! * [`data`] — JSON point-cloud file format.
//! * [`train`] — desk-scale training loops and metric logs.
//! * [`audit`] — equivariance/gradient audit batteries.
//! * [`tolerances`] — the numeric tolerances used throughout, documented.

pub mod attributes;
pub mod audit;
pub mod data;
pub mod geometry;
pub mod grids;
pub mod kernel;
pub mod layers;
pub mod nbody;
pub mod params;
pub mod tensor;
pub mod tolerances;
pub mod train;
