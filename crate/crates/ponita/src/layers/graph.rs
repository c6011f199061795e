//! Geometric graphs: positions, edges, and the processing form.

use crate::grids::SphereGrid;
use crate::tensor::DTensor;

use super::LayersError;

/// Which homogeneous-space form the graph's features take.
pub enum GraphForm {
    /// Features live on positions only: `[P, C]`.
    Position,
    /// Every position carries the same spherical grid; features `[P, N, C]`.
    Bundle(SphereGrid),
    /// Each node carries its own orientation; features `[P, C]`.
    PointCloud {
        /// `[P, n]` unit orientations on the tape (for in-graph attributes).
        orientations: DTensor,
        /// The same orientations on the host.
        orientations_host: Vec<f64>,
    },
}

/// A geometric graph plus its raw input features.
///
/// `positions` is the tape-resident copy — create it with `Tape::var` when
/// derivatives with respect to positions are needed (forces), `Tape::constant`
/// otherwise. `positions_host` mirrors the same values for host-side edge
/// building and diagnostics.
///
/// Input features are separated by transformation behavior: `scalars`
/// `[P, S]` are invariant channels, `vectors` `[P, n, V]` rotate with the
/// geometry. `edge_extra` `[E, K]` carries additional invariant kernel
/// conditioning (for example products of charges).
pub struct GeomGraph {
    pub dim: usize,
    pub num_nodes: usize,
    pub positions: DTensor,
    pub positions_host: Vec<f64>,
    /// Edge list as parallel arrays: edge `e` sends node `senders[e]` to
    /// node `receivers[e]`.
    pub receivers: Vec<usize>,
    pub senders: Vec<usize>,
    pub form: GraphForm,
    pub scalars: Option<DTensor>,
    pub vectors: Option<DTensor>,
    pub edge_extra: Option<DTensor>,
}

impl GeomGraph {
    /// Validates edge indices and dimension bookkeeping.
    pub fn new(
        dim: usize,
        positions: DTensor,
        positions_host: Vec<f64>,
        receivers: Vec<usize>,
        senders: Vec<usize>,
        form: GraphForm,
    ) -> Result<Self, LayersError> {
        if positions.rank() != 2 || positions.shape()[1] != dim {
            return Err(LayersError::ConfigMismatch(format!(
                "positions must be [nodes, {dim}], got {:?}",
                positions.shape()
            )));
        }
        let num_nodes = positions.shape()[0];
        if positions_host.len() != num_nodes * dim {
            return Err(LayersError::ConfigMismatch(format!(
                "host positions hold {} values for {num_nodes} nodes of dimension {dim}",
                positions_host.len()
            )));
        }
        if receivers.len() != senders.len() {
            return Err(LayersError::ConfigMismatch(format!(
                "{} receivers vs {} senders",
                receivers.len(),
                senders.len()
            )));
        }
        for &i in receivers.iter().chain(&senders) {
            if i >= num_nodes {
                return Err(LayersError::EdgeOutOfRange {
                    index: i,
                    nodes: num_nodes,
                });
            }
        }
        if let GraphForm::Bundle(grid) = &form {
            if grid.dim() != dim {
                return Err(LayersError::ConfigMismatch(format!(
                    "grid dimension {} does not match graph dimension {dim}",
                    grid.dim()
                )));
            }
        }
        if let GraphForm::PointCloud { orientations, .. } = &form {
            if orientations.shape() != [num_nodes, dim] {
                return Err(LayersError::ConfigMismatch(format!(
                    "orientations must be [{num_nodes}, {dim}], got {:?}",
                    orientations.shape()
                )));
            }
        }
        Ok(Self {
            dim,
            num_nodes,
            positions,
            positions_host,
            receivers,
            senders,
            form,
            scalars: None,
            vectors: None,
            edge_extra: None,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.receivers.len()
    }

    /// Edge pairs `(receiver, sender)` in edge order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.receivers
            .iter()
            .copied()
            .zip(self.senders.iter().copied())
    }

    pub fn grid(&self) -> Option<&SphereGrid> {
        match &self.form {
            GraphForm::Bundle(g) => Some(g),
            _ => None,
        }
    }
}

/// All ordered pairs `i ≠ j` as `(receivers, senders)`.
pub fn fully_connected_edges(num_nodes: usize) -> (Vec<usize>, Vec<usize>) {
    let mut receivers = Vec::with_capacity(num_nodes.saturating_sub(1) * num_nodes);
    let mut senders = Vec::with_capacity(receivers.capacity());
    for i in 0..num_nodes {
        for j in 0..num_nodes {
            if i != j {
                receivers.push(i);
                senders.push(j);
            }
        }
    }
    (receivers, senders)
}

/// Ordered pairs within `cutoff` Euclidean distance, self-loops excluded:
/// node `i` never appears in its own neighborhood.
pub fn radius_edges(positions_host: &[f64], dim: usize, cutoff: f64) -> (Vec<usize>, Vec<usize>) {
    let p = positions_host.len() / dim;
    let mut receivers = Vec::new();
    let mut senders = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let d2: f64 = (0..dim)
                .map(|k| {
                    let d = positions_host[j * dim + k] - positions_host[i * dim + k];
                    d * d
                })
                .sum();
            if d2 <= cutoff * cutoff {
                receivers.push(i);
                senders.push(j);
            }
        }
    }
    (receivers, senders)
}
