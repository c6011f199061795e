//! Lifting ℝⁿ inputs onto the sphere and reading spherical signals back out.
//!
//! Readout sums are written exactly as the architecture defines them — plain
//! sums over grid points with no `1/N` or `n/N` normalization. In particular
//! `vec_to_sphere` followed by `sphere_to_vec` scales vectors by the grid's
//! second moment (`N/3` on a 3-D grid with exact second-moment symmetry, e.g.
//! 4 on the icosahedron).

use crate::grids::SphereGrid;
use crate::tensor::{DTensor, Scalar, Tape, TensorError};

use super::LayersError;

fn grid_constant<T: Scalar>(tape: &Tape<T>, grid: &SphereGrid) -> Result<DTensor, TensorError> {
    tape.constant(
        &[grid.len(), grid.dim()],
        grid.coords().iter().map(|&v| T::fr(v)).collect(),
    )
}

/// `[P, S] → [P, N, S]`: copies each scalar channel to every orientation.
pub fn scalar_to_sphere<T: Scalar>(
    tape: &Tape<T>,
    s: &DTensor,
    num_ori: usize,
) -> Result<DTensor, LayersError> {
    let (p, c) = match s.shape() {
        [p, c] => (*p, *c),
        other => {
            return Err(LayersError::ConfigMismatch(format!(
                "scalar features must be [nodes, channels], got {other:?}"
            )))
        }
    };
    let narrow = tape.reshape(s, &[p, 1, c])?;
    Ok(tape.broadcast(&narrow, &[p, num_ori, c])?)
}

/// `[P, n, V] → [P, N, V]`: spherical-harmonic embedding of frequency one,
/// `f[p, o, c] = o_o · v[p, :, c]`.
pub fn vec_to_sphere<T: Scalar>(
    tape: &Tape<T>,
    v: &DTensor,
    grid: &SphereGrid,
) -> Result<DTensor, LayersError> {
    let (p, n, c) = match v.shape() {
        [p, n, c] => (*p, *n, *c),
        other => {
            return Err(LayersError::ConfigMismatch(format!(
                "vector features must be [nodes, dim, channels], got {other:?}"
            )))
        }
    };
    if n != grid.dim() {
        return Err(LayersError::ConfigMismatch(format!(
            "vector dimension {n} does not match grid dimension {}",
            grid.dim()
        )));
    }
    let g = grid_constant(tape, grid)?;
    // [N, n] ⊗ [P, n, C] contracted over n → [N, P, C] → [P, N, C].
    let lifted = tape.contract_axis(&g, 1, v, 1)?;
    let _ = (p, c);
    Ok(tape.permute(&lifted, &[1, 0, 2])?)
}

/// `[P, N, C] → [P, C]`: plain sum over orientations.
pub fn sphere_to_scalar<T: Scalar>(tape: &Tape<T>, f: &DTensor) -> Result<DTensor, LayersError> {
    if f.rank() != 3 {
        return Err(LayersError::ConfigMismatch(format!(
            "spherical features must be [nodes, orientations, channels], got {:?}",
            f.shape()
        )));
    }
    Ok(tape.sum_axes(f, &[1])?)
}

/// `[P, N, C] → [P, n, C]`: `v[p, :, c] = Σ_o f[p, o, c] · o_o`.
pub fn sphere_to_vec<T: Scalar>(
    tape: &Tape<T>,
    f: &DTensor,
    grid: &SphereGrid,
) -> Result<DTensor, LayersError> {
    let num_ori = match f.shape() {
        [_, n, _] => *n,
        other => {
            return Err(LayersError::ConfigMismatch(format!(
                "spherical features must be [nodes, orientations, channels], got {other:?}"
            )))
        }
    };
    if num_ori != grid.len() {
        return Err(LayersError::ConfigMismatch(format!(
            "feature map has {num_ori} orientations, grid has {}",
            grid.len()
        )));
    }
    let g = grid_constant(tape, grid)?;
    // [P, N, C] ⊗ [N, n] contracted over N → [P, C, n] → [P, n, C].
    let out = tape.contract_axis(f, 1, &g, 0)?;
    Ok(tape.permute(&out, &[0, 2, 1])?)
}
