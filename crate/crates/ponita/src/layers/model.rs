//! Full architectures: the position-orientation network (bundle form), the
//! position-space baseline, and energy/force evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grids::gram_matrix;
use crate::kernel::KernelBasis;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{DTensor, Scalar, Tape};

use super::block::{ConvNeXtBlock, PnitaBlock};
use super::conv::{distance_invariants, spatial_invariants};
use super::graph::{GeomGraph, GraphForm};
use super::lift::{scalar_to_sphere, sphere_to_vec, vec_to_sphere};
use super::LayersError;

/// What the network predicts.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum ReadoutKind {
    /// One invariant scalar per node (summed per graph by the caller).
    Scalar,
    /// One equivariant vector per node.
    Vector,
}

/// What the convolution kernels are conditioned on.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum Conditioning {
    /// Full per-orientation spatial invariants plus orientation mixing.
    Anisotropic,
    /// Pair distance only: isotropic spatial kernels, no orientation mixing.
    /// Features still live on the sphere so vector inputs/outputs work; all
    /// *learned* structure is distance-conditioned.
    DistanceOnly,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct PonitaConfig {
    /// Ambient dimension (2 or 3).
    pub dim: usize,
    /// Grid resolution N.
    pub num_ori: usize,
    /// Feature channels C.
    pub channels: usize,
    /// Number of residual blocks L.
    pub layers: usize,
    /// Shared kernel basis width.
    pub basis_dim: usize,
    /// Polynomial embedding degree.
    pub degree: u32,
    /// Inverted-bottleneck widening factor.
    pub widen: usize,
    /// Length scale dividing spatial attribute components.
    pub length_scale: f64,
    /// Input scalar channels per node.
    pub scalar_in: usize,
    /// Input vector channels per node.
    pub vector_in: usize,
    /// Extra invariant kernel inputs per edge (e.g. charge products).
    pub edge_extra: usize,
    pub readout: ReadoutKind,
    pub conditioning: Conditioning,
    /// Divide neighbor sums by in-degree.
    pub mean_aggregation: bool,
}

impl Default for PonitaConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            num_ori: 12,
            channels: 64,
            layers: 5,
            basis_dim: 256,
            degree: 3,
            widen: 4,
            length_scale: 1.0,
            scalar_in: 1,
            vector_in: 0,
            edge_extra: 0,
            readout: ReadoutKind::Scalar,
            conditioning: Conditioning::Anisotropic,
            mean_aggregation: false,
        }
    }
}

/// Per-node predictions; which field is set follows the configured readout.
pub struct PonitaOutput {
    /// `[P]` invariant node scalars.
    pub node_scalar: Option<DTensor>,
    /// `[P, n]` equivariant node vectors.
    pub node_vector: Option<DTensor>,
}

/// The position-orientation network:
/// `NodeEmbed → ConvNeXt × L → per-block readout heads`.
pub struct Ponita {
    pub config: PonitaConfig,
    pub store: ParamStore,
    spatial_basis: KernelBasis,
    sphere_basis: Option<KernelBasis>,
    embed_w: ParamId,
    embed_b: ParamId,
    blocks: Vec<ConvNeXtBlock>,
    head_w: Vec<ParamId>,
    head_b: Vec<ParamId>,
}

impl Ponita {
    /// Builds the model with seeded uniform(±1/√fan_in) initialization.
    ///
    /// # Panics
    /// On structurally impossible configs (no input channels, dim outside
    /// {2, 3}, zero orientations).
    pub fn new(config: PonitaConfig, seed: u64) -> Self {
        assert!(
            config.dim == 2 || config.dim == 3,
            "supported ambient dimensions are 2 and 3"
        );
        assert!(config.num_ori >= 1, "need at least one orientation");
        assert!(
            config.scalar_in + config.vector_in > 0,
            "the network needs at least one input channel"
        );
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let ls = config.length_scale;
        let (spatial_in, spatial_scale) = match config.conditioning {
            Conditioning::Anisotropic => {
                let mut scale = vec![ls, ls];
                scale.extend(std::iter::repeat_n(1.0, config.edge_extra));
                (2 + config.edge_extra, scale)
            }
            Conditioning::DistanceOnly => {
                let mut scale = vec![ls];
                scale.extend(std::iter::repeat_n(1.0, config.edge_extra));
                (1 + config.edge_extra, scale)
            }
        };
        let spatial_basis = KernelBasis::new(
            &mut store,
            "spatial_basis",
            spatial_in,
            config.degree,
            config.basis_dim,
            &spatial_scale,
            &mut rng,
        );
        let sphere_basis = match config.conditioning {
            Conditioning::Anisotropic => Some(KernelBasis::new(
                &mut store,
                "sphere_basis",
                1,
                config.degree,
                config.basis_dim,
                &[1.0],
                &mut rng,
            )),
            Conditioning::DistanceOnly => None,
        };

        let embed_in = config.scalar_in + config.vector_in;
        let embed_w = store.alloc_weight("embed.w", embed_in, config.channels, &mut rng);
        let embed_b = store.alloc_bias("embed.b", embed_in, config.channels, &mut rng);

        let blocks = (0..config.layers)
            .map(|l| {
                ConvNeXtBlock::new(
                    &mut store,
                    &format!("block{l}"),
                    config.basis_dim,
                    config.channels,
                    config.widen,
                    matches!(config.conditioning, Conditioning::Anisotropic),
                    &mut rng,
                )
            })
            .collect();

        let num_heads = config.layers.max(1);
        let mut head_w = Vec::with_capacity(num_heads);
        let mut head_b = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            head_w.push(store.alloc_weight(&format!("head{h}.w"), config.channels, 1, &mut rng));
            head_b.push(store.alloc_bias(&format!("head{h}.b"), config.channels, 1, &mut rng));
        }

        Self {
            config,
            store,
            spatial_basis,
            sphere_basis,
            embed_w,
            embed_b,
            blocks,
            head_w,
            head_b,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn bind<T: Scalar>(&self, tape: &Tape<T>) -> Result<BoundParams, LayersError> {
        Ok(self.store.bind(tape)?)
    }

    fn embed<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &BoundParams,
        graph: &GeomGraph,
    ) -> Result<DTensor, LayersError> {
        let grid = graph.grid().expect("bundle form checked by caller");
        let p = graph.num_nodes;
        let n = grid.len();
        let mut lifted = Vec::new();
        if self.config.scalar_in > 0 {
            let s = graph.scalars.as_ref().ok_or_else(|| {
                LayersError::ConfigMismatch(format!(
                    "model expects {} scalar channels but the graph carries none",
                    self.config.scalar_in
                ))
            })?;
            if s.shape() != [p, self.config.scalar_in] {
                return Err(LayersError::ConfigMismatch(format!(
                    "scalar features {:?}, expected [{p}, {}]",
                    s.shape(),
                    self.config.scalar_in
                )));
            }
            lifted.push(scalar_to_sphere(tape, s, n)?);
        }
        if self.config.vector_in > 0 {
            let v = graph.vectors.as_ref().ok_or_else(|| {
                LayersError::ConfigMismatch(format!(
                    "model expects {} vector channels but the graph carries none",
                    self.config.vector_in
                ))
            })?;
            if v.shape() != [p, self.config.dim, self.config.vector_in] {
                return Err(LayersError::ConfigMismatch(format!(
                    "vector features {:?}, expected [{p}, {}, {}]",
                    v.shape(),
                    self.config.dim,
                    self.config.vector_in
                )));
            }
            lifted.push(vec_to_sphere(tape, v, grid)?);
        }
        let refs: Vec<&DTensor> = lifted.iter().collect();
        let cat = if refs.len() == 1 {
            refs[0].clone()
        } else {
            tape.concat(&refs, 2)?
        };
        let width = cat.shape()[2];
        let flat = tape.reshape(&cat, &[p * n, width])?;
        let emb = tape.linear(
            &flat,
            params.get(self.embed_w),
            Some(params.get(self.embed_b)),
        )?;
        Ok(tape.reshape(&emb, &[p, n, self.config.channels])?)
    }

    /// Runs the network on a bundle-form graph.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &BoundParams,
        graph: &GeomGraph,
    ) -> Result<PonitaOutput, LayersError> {
        let GraphForm::Bundle(grid) = &graph.form else {
            return Err(LayersError::WrongForm {
                op: "ponita_forward",
                expected: "bundle",
            });
        };
        if grid.len() != self.config.num_ori {
            return Err(LayersError::ConfigMismatch(format!(
                "graph grid has {} orientations, model expects {}",
                grid.len(),
                self.config.num_ori
            )));
        }
        if graph.dim != self.config.dim {
            return Err(LayersError::ConfigMismatch(format!(
                "graph dimension {} vs model dimension {}",
                graph.dim, self.config.dim
            )));
        }
        let extra = graph.edge_extra.as_ref().map(|e| e.shape()[1]).unwrap_or(0);
        if extra != self.config.edge_extra {
            return Err(LayersError::ConfigMismatch(format!(
                "graph has {extra} extra edge attributes, model expects {}",
                self.config.edge_extra
            )));
        }
        let p = graph.num_nodes;
        let n = grid.len();

        // Shared bases: computed once, reused by every block's heads.
        let spatial_attr = match self.config.conditioning {
            Conditioning::Anisotropic => spatial_invariants(tape, graph)?,
            Conditioning::DistanceOnly => distance_invariants(tape, graph)?,
        };
        let spatial_basis = self.spatial_basis.eval_basis(tape, params, &spatial_attr)?;
        let sphere_basis = match &self.sphere_basis {
            Some(basis) => {
                let gram = gram_matrix(grid);
                let attrs = tape.constant(&[n * n, 1], gram.iter().map(|&g| T::fr(g)).collect())?;
                Some(basis.eval_basis(tape, params, &attrs)?)
            }
            None => None,
        };

        let mut f = self.embed(tape, params, graph)?;
        let mut block_outputs = Vec::with_capacity(self.blocks.len().max(1));
        if self.blocks.is_empty() {
            block_outputs.push(f.clone());
        }
        for block in &self.blocks {
            f = block.forward(
                tape,
                params,
                graph,
                &f,
                &spatial_basis,
                sphere_basis.as_ref(),
                self.config.mean_aggregation,
            )?;
            block_outputs.push(f.clone());
        }

        match self.config.readout {
            ReadoutKind::Scalar => {
                let mut acc: Option<DTensor> = None;
                for (h, feat) in block_outputs.iter().enumerate() {
                    let flat = tape.reshape(feat, &[p * n, self.config.channels])?;
                    let s = tape.linear(
                        &flat,
                        params.get(self.head_w[h]),
                        Some(params.get(self.head_b[h])),
                    )?;
                    let per_node = tape.sum_axes(&tape.reshape(&s, &[p, n])?, &[1])?;
                    acc = Some(match acc {
                        None => per_node,
                        Some(a) => tape.add(&a, &per_node)?,
                    });
                }
                Ok(PonitaOutput {
                    node_scalar: Some(acc.expect("at least one head")),
                    node_vector: None,
                })
            }
            ReadoutKind::Vector => {
                let mut acc: Option<DTensor> = None;
                for (h, feat) in block_outputs.iter().enumerate() {
                    let flat = tape.reshape(feat, &[p * n, self.config.channels])?;
                    let s = tape.linear(
                        &flat,
                        params.get(self.head_w[h]),
                        Some(params.get(self.head_b[h])),
                    )?;
                    let on_sphere = tape.reshape(&s, &[p, n, 1])?;
                    let v = sphere_to_vec(tape, &on_sphere, grid)?;
                    let v2 = tape.reshape(&v, &[p, self.config.dim])?;
                    acc = Some(match acc {
                        None => v2,
                        Some(a) => tape.add(&a, &v2)?,
                    });
                }
                let mean = tape.scale(
                    &acc.expect("at least one head"),
                    1.0 / block_outputs.len() as f64,
                )?;
                Ok(PonitaOutput {
                    node_scalar: None,
                    node_vector: Some(mean),
                })
            }
        }
    }
}

/// Runs the position-orientation network (free-function form of
/// [`Ponita::forward`]).
pub fn ponita_forward<T: Scalar>(
    tape: &Tape<T>,
    model: &Ponita,
    params: &BoundParams,
    graph: &GeomGraph,
) -> Result<PonitaOutput, LayersError> {
    model.forward(tape, params, graph)
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct PnitaConfig {
    pub dim: usize,
    pub channels: usize,
    pub layers: usize,
    pub basis_dim: usize,
    pub degree: u32,
    pub widen: usize,
    pub length_scale: f64,
    pub scalar_in: usize,
    pub edge_extra: usize,
    pub readout: ReadoutKind,
    pub mean_aggregation: bool,
}

impl Default for PnitaConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            channels: 64,
            layers: 5,
            basis_dim: 256,
            degree: 3,
            widen: 4,
            length_scale: 1.0,
            scalar_in: 1,
            edge_extra: 0,
            readout: ReadoutKind::Scalar,
            mean_aggregation: false,
        }
    }
}

/// The position-space baseline: distance-conditioned convolutions on `[P, C]`
/// feature maps. Carries no directional features, so only scalar readout
/// exists.
pub struct Pnita {
    pub config: PnitaConfig,
    pub store: ParamStore,
    basis: KernelBasis,
    embed_w: ParamId,
    embed_b: ParamId,
    blocks: Vec<PnitaBlock>,
    head_w: Vec<ParamId>,
    head_b: Vec<ParamId>,
}

impl Pnita {
    /// # Panics
    /// If the config has no scalar inputs (the ℝⁿ model takes only scalars).
    pub fn new(config: PnitaConfig, seed: u64) -> Self {
        assert!(
            config.scalar_in > 0,
            "the position-space model needs scalar input channels"
        );
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scale = vec![config.length_scale];
        scale.extend(std::iter::repeat_n(1.0, config.edge_extra));
        let basis = KernelBasis::new(
            &mut store,
            "basis",
            1 + config.edge_extra,
            config.degree,
            config.basis_dim,
            &scale,
            &mut rng,
        );
        let embed_w = store.alloc_weight("embed.w", config.scalar_in, config.channels, &mut rng);
        let embed_b = store.alloc_bias("embed.b", config.scalar_in, config.channels, &mut rng);
        let blocks = (0..config.layers)
            .map(|l| {
                PnitaBlock::new(
                    &mut store,
                    &format!("block{l}"),
                    config.basis_dim,
                    config.channels,
                    config.widen,
                    &mut rng,
                )
            })
            .collect();
        let num_heads = config.layers.max(1);
        let mut head_w = Vec::with_capacity(num_heads);
        let mut head_b = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            head_w.push(store.alloc_weight(&format!("head{h}.w"), config.channels, 1, &mut rng));
            head_b.push(store.alloc_bias(&format!("head{h}.b"), config.channels, 1, &mut rng));
        }
        Self {
            config,
            store,
            basis,
            embed_w,
            embed_b,
            blocks,
            head_w,
            head_b,
        }
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn bind<T: Scalar>(&self, tape: &Tape<T>) -> Result<BoundParams, LayersError> {
        Ok(self.store.bind(tape)?)
    }

    /// Runs the baseline on a position-form graph.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &BoundParams,
        graph: &GeomGraph,
    ) -> Result<PonitaOutput, LayersError> {
        if self.config.readout == ReadoutKind::Vector {
            return Err(LayersError::VectorReadoutUnavailable);
        }
        if !matches!(graph.form, GraphForm::Position) {
            return Err(LayersError::WrongForm {
                op: "pnita_forward",
                expected: "position",
            });
        }
        if graph.dim != self.config.dim {
            return Err(LayersError::ConfigMismatch(format!(
                "graph dimension {} vs model dimension {}",
                graph.dim, self.config.dim
            )));
        }
        let p = graph.num_nodes;
        let s = graph.scalars.as_ref().ok_or_else(|| {
            LayersError::ConfigMismatch("the position-space model needs scalar features".into())
        })?;
        if s.shape() != [p, self.config.scalar_in] {
            return Err(LayersError::ConfigMismatch(format!(
                "scalar features {:?}, expected [{p}, {}]",
                s.shape(),
                self.config.scalar_in
            )));
        }

        let attrs = distance_invariants(tape, graph)?;
        let basis = self.basis.eval_basis(tape, params, &attrs)?;

        let mut f = tape.linear(s, params.get(self.embed_w), Some(params.get(self.embed_b)))?;
        let mut block_outputs = Vec::with_capacity(self.blocks.len().max(1));
        if self.blocks.is_empty() {
            block_outputs.push(f.clone());
        }
        for block in &self.blocks {
            f = block.forward(
                tape,
                params,
                graph,
                &f,
                &basis,
                self.config.mean_aggregation,
            )?;
            block_outputs.push(f.clone());
        }

        let mut acc: Option<DTensor> = None;
        for (h, feat) in block_outputs.iter().enumerate() {
            let sc = tape.linear(
                feat,
                params.get(self.head_w[h]),
                Some(params.get(self.head_b[h])),
            )?;
            let per_node = tape.sum_axes(&sc, &[1])?;
            acc = Some(match acc {
                None => per_node,
                Some(a) => tape.add(&a, &per_node)?,
            });
        }
        Ok(PonitaOutput {
            node_scalar: Some(acc.expect("at least one head")),
            node_vector: None,
        })
    }
}

/// Runs the position-space baseline (free-function form of
/// [`Pnita::forward`]).
pub fn pnita_forward<T: Scalar>(
    tape: &Tape<T>,
    model: &Pnita,
    params: &BoundParams,
    graph: &GeomGraph,
) -> Result<PonitaOutput, LayersError> {
    model.forward(tape, params, graph)
}

/// Evaluates the total energy `E = Σ_i s_i` of a scalar-readout model and the
/// forces `F = −∂E/∂positions`, differentiating through the network and the
/// in-graph attribute computation.
///
/// The graph's positions must have been created with `Tape::var`; the force
/// tensor is made of tape nodes, so a force loss built on it can be
/// differentiated again (the backward graph extends the tape).
pub fn energy_and_forces<T: Scalar>(
    tape: &Tape<T>,
    model: &Ponita,
    params: &BoundParams,
    graph: &GeomGraph,
) -> Result<(DTensor, DTensor), LayersError> {
    if model.config.readout != ReadoutKind::Scalar {
        return Err(LayersError::ConfigMismatch(
            "energy evaluation needs a scalar-readout model".into(),
        ));
    }
    let out = model.forward(tape, params, graph)?;
    let node_energy = out.node_scalar.expect("scalar readout");
    let energy = tape.sum_all(&node_energy)?;
    let grads = tape.backward(&energy)?;
    let g = grads.wrt(&graph.positions).ok_or_else(|| {
        LayersError::ConfigMismatch(
            "positions are not differentiable; create them with Tape::var to get forces".into(),
        )
    })?;
    let forces = tape.scale(&g, -1.0)?;
    Ok((energy, forces))
}
