//! Group-convolution layers and full network architectures.
//!
//! The layer zoo covers both computational forms of position-orientation
//! processing:
//!
//! * **bundle form** — every position carries the same `N`-point spherical
//!   grid; features are `[P, N, C]` and the convolution factorizes into a
//!   spatial stage, a spherical (orientation-mixing) stage, and channel
//!   mixing ([`spatial_gconv`], [`spherical_gconv`]);
//! * **point-cloud form** — features sit on arbitrary (position,
//!   orientation) nodes with full matrix-valued kernels
//!   ([`pointcloud_gconv`]); forcing those kernels into the factorized form
//!   reproduces the separable pipeline exactly
//!   ([`factorized_pointcloud_kernel`]).
//!
//! Every kernel is conditioned exclusively on invariant pair attributes,
//! computed *in-graph* so that gradients flow back to positions (the force
//! path). Lifting from ℝⁿ inputs and reading out scalars/vectors is handled
//! by the four sphere modules in [`lift`]; the residual block and the
//! complete architectures live in [`block`] and [`model`].

mod block;
mod conv;
mod graph;
mod lift;
mod model;

pub use block::{ConvNeXtBlock, PnitaBlock};
pub use conv::{
    distance_invariants, factorized_pointcloud_kernel, pointcloud_gconv, pointcloud_invariants,
    position_gconv, spatial_gconv, spatial_invariants, spherical_gconv, PERP_SMOOTHING,
};
pub use graph::{fully_connected_edges, radius_edges, GeomGraph, GraphForm};
pub use lift::{scalar_to_sphere, sphere_to_scalar, sphere_to_vec, vec_to_sphere};
pub use model::{
    energy_and_forces, pnita_forward, ponita_forward, Conditioning, Pnita, PnitaConfig, Ponita,
    PonitaConfig, PonitaOutput, ReadoutKind,
};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::grids::GridError;
use crate::kernel::KernelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum LayersError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{op} requires the {expected} graph form")]
    WrongForm {
        op: &'static str,
        expected: &'static str,
    },
    #[error("edge references node {index} but the graph has {nodes} nodes")]
    EdgeOutOfRange { index: usize, nodes: usize },
    #[error("{0}")]
    ConfigMismatch(String),
    #[error(
        "vector readout needs directional features; this architecture only carries scalar fields"
    )]
    VectorReadoutUnavailable,
}
