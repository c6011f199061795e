//! Residual ConvNeXt-style blocks for both processing forms.

use rand::Rng;

use crate::kernel::KernelHead;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{DTensor, Scalar, Tape};

use super::conv::{position_gconv, spatial_gconv, spherical_gconv};
use super::graph::GeomGraph;
use super::LayersError;

const LAYER_NORM_EPS: f64 = 1e-5;

/// One bundle-form block:
/// `SpatialGConv → SphericalGConv → LayerNorm → Linear(C→widen·C) → GELU →
/// Linear(widen·C→C) → + input`.
///
/// The two convolution stages draw their kernels from the model's shared
/// bases through this block's own heads. In the distance-only configuration
/// the spherical stage is absent (`k2_head` is `None`) and the spatial kernel
/// is isotropic (`[E, C]`, shared across orientations).
pub struct ConvNeXtBlock {
    pub(super) k1_head: KernelHead,
    pub(super) k2_head: Option<KernelHead>,
    ln_gamma: ParamId,
    ln_beta: ParamId,
    w_up: ParamId,
    b_up: ParamId,
    w_down: ParamId,
    b_down: ParamId,
    channels: usize,
}

impl ConvNeXtBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        basis_dim: usize,
        channels: usize,
        widen: usize,
        with_spherical: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let k1_head = KernelHead::new(store, &format!("{name}.k1"), basis_dim, channels, rng);
        let k2_head = with_spherical
            .then(|| KernelHead::new(store, &format!("{name}.k2"), basis_dim, channels, rng));
        let ln_gamma = store.alloc(
            &format!("{name}.ln.gamma"),
            &[channels],
            vec![1.0; channels],
        );
        let ln_beta = store.alloc(&format!("{name}.ln.beta"), &[channels], vec![0.0; channels]);
        let wide = widen * channels;
        let w_up = store.alloc_weight(&format!("{name}.up.w"), channels, wide, rng);
        let b_up = store.alloc_bias(&format!("{name}.up.b"), channels, wide, rng);
        let w_down = store.alloc_weight(&format!("{name}.down.w"), wide, channels, rng);
        let b_down = store.alloc_bias(&format!("{name}.down.b"), wide, channels, rng);
        Self {
            k1_head,
            k2_head,
            ln_gamma,
            ln_beta,
            w_up,
            b_up,
            w_down,
            b_down,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Applies the block to bundle features `[P, N, C]`.
    ///
    /// `spatial_basis` is the shared basis evaluated on this graph's spatial
    /// invariants (`[E·N, basis_dim]` anisotropic, `[E, basis_dim]`
    /// isotropic); `sphere_basis` is the shared basis on the grid's Gram
    /// entries (`[N·N, basis_dim]`), present exactly when the block has a
    /// spherical stage.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &BoundParams,
        graph: &GeomGraph,
        features: &DTensor,
        spatial_basis: &DTensor,
        sphere_basis: Option<&DTensor>,
        mean: bool,
    ) -> Result<DTensor, LayersError> {
        let (p, n, c) = match features.shape() {
            [p, n, c] => (*p, *n, *c),
            other => {
                return Err(LayersError::ConfigMismatch(format!(
                    "bundle features must be rank 3, got {other:?}"
                )))
            }
        };
        let e = graph.num_edges();

        let k1_rows = self.k1_head.eval(tape, params, spatial_basis)?;
        let k1 = if spatial_basis.shape()[0] == e * n {
            tape.reshape(&k1_rows, &[e, n, c])?
        } else {
            k1_rows // [E, C] isotropic
        };
        let mut h = spatial_gconv(tape, graph, features, &k1, mean)?;

        match (&self.k2_head, sphere_basis) {
            (Some(head), Some(sb)) => {
                let k2 = tape.reshape(&head.eval(tape, params, sb)?, &[n, n, c])?;
                h = spherical_gconv(tape, &h, &k2)?;
            }
            (None, None) => {}
            _ => {
                return Err(LayersError::ConfigMismatch(
                    "spherical basis presence must match the block's spherical head".into(),
                ))
            }
        }

        let flat = tape.reshape(&h, &[p * n, c])?;
        let normed = tape.layer_norm(
            &flat,
            params.get(self.ln_gamma),
            params.get(self.ln_beta),
            LAYER_NORM_EPS,
        )?;
        let up = tape.gelu(&tape.linear(
            &normed,
            params.get(self.w_up),
            Some(params.get(self.b_up)),
        )?)?;
        let down = tape.linear(&up, params.get(self.w_down), Some(params.get(self.b_down)))?;
        let residual = tape.reshape(&down, &[p, n, c])?;
        Ok(tape.add(features, &residual)?)
    }
}

/// One ℝⁿ block: `PositionGConv → LayerNorm → Linear → GELU → Linear → +input`.
pub struct PnitaBlock {
    pub(super) k_head: KernelHead,
    ln_gamma: ParamId,
    ln_beta: ParamId,
    w_up: ParamId,
    b_up: ParamId,
    w_down: ParamId,
    b_down: ParamId,
    channels: usize,
}

impl PnitaBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        basis_dim: usize,
        channels: usize,
        widen: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let k_head = KernelHead::new(store, &format!("{name}.k"), basis_dim, channels, rng);
        let ln_gamma = store.alloc(
            &format!("{name}.ln.gamma"),
            &[channels],
            vec![1.0; channels],
        );
        let ln_beta = store.alloc(&format!("{name}.ln.beta"), &[channels], vec![0.0; channels]);
        let wide = widen * channels;
        let w_up = store.alloc_weight(&format!("{name}.up.w"), channels, wide, rng);
        let b_up = store.alloc_bias(&format!("{name}.up.b"), channels, wide, rng);
        let w_down = store.alloc_weight(&format!("{name}.down.w"), wide, channels, rng);
        let b_down = store.alloc_bias(&format!("{name}.down.b"), wide, channels, rng);
        Self {
            k_head,
            ln_gamma,
            ln_beta,
            w_up,
            b_up,
            w_down,
            b_down,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Applies the block to position features `[P, C]`; `basis` is the shared
    /// basis on distance attributes, `[E, basis_dim]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &BoundParams,
        graph: &GeomGraph,
        features: &DTensor,
        basis: &DTensor,
        mean: bool,
    ) -> Result<DTensor, LayersError> {
        let k = self.k_head.eval(tape, params, basis)?;
        let h = position_gconv(tape, graph, features, &k, mean)?;
        let normed = tape.layer_norm(
            &h,
            params.get(self.ln_gamma),
            params.get(self.ln_beta),
            LAYER_NORM_EPS,
        )?;
        let up = tape.gelu(&tape.linear(
            &normed,
            params.get(self.w_up),
            Some(params.get(self.b_up)),
        )?)?;
        let down = tape.linear(&up, params.get(self.w_down), Some(params.get(self.b_down)))?;
        Ok(tape.add(features, &down)?)
    }
}
