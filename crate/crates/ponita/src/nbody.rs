//! Synthetic charged-particle dynamics: a softened-Coulomb system integrated
//! with velocity-Verlet leapfrog, plus the featurization that turns a state
//! into a bundle-form graph.
//!
//! Physics constants are fixed for integrator stability: Coulomb constant 1,
//! unit masses, softening ε = 0.1 inside `(r² + ε²)^{3/2}` so close
//! encounters stay bounded. The matching potential `q_i q_j/√(r² + ε²)`
//! makes the force exactly `−∇U`, so the leapfrog's energy drift is a real
//! integrator self-check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CloudTargets, DataError, PointCloudFile, ScalarField};
use crate::grids::SphereGrid;
use crate::layers::{GeomGraph, GraphForm, LayersError};
use crate::tensor::{Scalar, Tape};

/// Softening length in the force denominator.
pub const SOFTENING: f64 = 0.1;
/// Below this distance from the centroid, the direction feature is zero.
const DIRECTION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NBodyConfig {
    pub particles: usize,
    /// Integrator step.
    pub dt: f64,
    /// Number of leapfrog steps between the input state and the target.
    pub steps: usize,
    /// Standard deviation of initial positions.
    pub pos_std: f64,
    /// Standard deviation of initial velocities.
    pub vel_std: f64,
}

impl Default for NBodyConfig {
    fn default() -> Self {
        Self {
            particles: 5,
            dt: 1e-3,
            steps: 1000,
            pos_std: 1.0,
            vel_std: 0.5,
        }
    }
}

/// One instantaneous state of the particle system (row-major `[P, 3]`
/// positions/velocities, `[P]` charges in {−1, +1}).
#[derive(Debug, Clone, PartialEq)]
pub struct NBodyState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub charges: Vec<f64>,
}

impl NBodyState {
    pub fn particles(&self) -> usize {
        self.charges.len()
    }
}

/// One supervised sample: the initial state and the positions after the
/// configured horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct NBodySample {
    pub state: NBodyState,
    pub final_positions: Vec<f64>,
}

/// Softened Coulomb accelerations (unit masses → forces). Each pair is
/// computed once and applied antisymmetrically, so the total momentum change
/// is zero to rounding.
pub fn accelerations(positions: &[f64], charges: &[f64]) -> Vec<f64> {
    let p = charges.len();
    let mut acc = vec![0.0; p * 3];
    for i in 0..p {
        for j in (i + 1)..p {
            let dx = [
                positions[i * 3] - positions[j * 3],
                positions[i * 3 + 1] - positions[j * 3 + 1],
                positions[i * 3 + 2] - positions[j * 3 + 2],
            ];
            let r2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
            let inv = charges[i] * charges[j] / (r2 + SOFTENING * SOFTENING).powf(1.5);
            for k in 0..3 {
                let f = dx[k] * inv;
                acc[i * 3 + k] += f;
                acc[j * 3 + k] -= f;
            }
        }
    }
    acc
}

/// Kinetic plus softened-Coulomb potential energy.
pub fn total_energy(state: &NBodyState) -> f64 {
    let p = state.particles();
    let kinetic: f64 = state.velocities.iter().map(|v| 0.5 * v * v).sum();
    let mut potential = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            let r2: f64 = (0..3)
                .map(|k| {
                    let d = state.positions[i * 3 + k] - state.positions[j * 3 + k];
                    d * d
                })
                .sum();
            potential += state.charges[i] * state.charges[j] / (r2 + SOFTENING * SOFTENING).sqrt();
        }
    }
    kinetic + potential
}

/// Total momentum (unit masses), `[3]`.
pub fn total_momentum(state: &NBodyState) -> [f64; 3] {
    let mut m = [0.0; 3];
    for v in state.velocities.chunks(3) {
        for k in 0..3 {
            m[k] += v[k];
        }
    }
    m
}

/// Integrates the state in place with velocity-Verlet leapfrog.
pub fn leapfrog(state: &mut NBodyState, dt: f64, steps: usize) {
    let mut acc = accelerations(&state.positions, &state.charges);
    for _ in 0..steps {
        for (v, a) in state.velocities.iter_mut().zip(&acc) {
            *v += 0.5 * dt * a;
        }
        for (x, v) in state.positions.iter_mut().zip(&state.velocities) {
            *x += dt * v;
        }
        acc = accelerations(&state.positions, &state.charges);
        for (v, a) in state.velocities.iter_mut().zip(&acc) {
            *v += 0.5 * dt * a;
        }
    }
}

/// Runs the integrator on a copy and returns the final positions.
pub fn simulate(initial: &NBodyState, dt: f64, steps: usize) -> Vec<f64> {
    let mut state = initial.clone();
    leapfrog(&mut state, dt, steps);
    state.positions
}

/// Draws a random initial state: Gaussian positions and velocities, fair
/// ±1 charges.
pub fn random_state(config: &NBodyConfig, rng: &mut impl Rng) -> NBodyState {
    let pos = Normal::new(0.0, config.pos_std).expect("finite std");
    let vel = Normal::new(0.0, config.vel_std).expect("finite std");
    let p = config.particles;
    NBodyState {
        positions: (0..p * 3).map(|_| pos.sample(rng)).collect(),
        velocities: (0..p * 3).map(|_| vel.sample(rng)).collect(),
        charges: (0..p)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect(),
    }
}

/// Generates `count` independent trajectories. Each sample draws from its own
/// seeded stream, so the dataset is deterministic per `seed` regardless of
/// evaluation order.
pub fn nbody_generate(count: usize, seed: u64, config: &NBodyConfig) -> Vec<NBodySample> {
    (0..count)
        .map(|idx| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let state = random_state(config, &mut rng);
            let final_positions = simulate(&state, config.dt, config.steps);
            NBodySample {
                state,
                final_positions,
            }
        })
        .collect()
}

/// Host-side node and edge features for one state (fully connected graph).
pub struct HostFeatures {
    /// `[P, 2]`: speed ‖v‖ and charge.
    pub scalars: Vec<f64>,
    /// `[P, 3, 2]`: velocity and the unit direction to the centroid
    /// (zero within `DIRECTION_FLOOR` of it).
    pub vectors: Vec<f64>,
    pub receivers: Vec<usize>,
    pub senders: Vec<usize>,
    /// `[E, 1]`: product of receiver and sender charges.
    pub edge_extra: Vec<f64>,
}

/// Computes the input features of the dynamics task: scalars (speed, charge),
/// vectors (velocity, direction to the mean position), and the charge product
/// on every edge.
pub fn featurize_host(state: &NBodyState) -> HostFeatures {
    let p = state.particles();
    let mut centroid = [0.0; 3];
    for pos in state.positions.chunks(3) {
        for k in 0..3 {
            centroid[k] += pos[k] / p as f64;
        }
    }
    let mut scalars = Vec::with_capacity(p * 2);
    let mut vectors = Vec::with_capacity(p * 3 * 2);
    for i in 0..p {
        let v = &state.velocities[i * 3..i * 3 + 3];
        let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        scalars.push(speed);
        scalars.push(state.charges[i]);
        let d: Vec<f64> = (0..3)
            .map(|k| centroid[k] - state.positions[i * 3 + k])
            .collect();
        let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        for k in 0..3 {
            vectors.push(v[k]);
            vectors.push(if dn < DIRECTION_FLOOR { 0.0 } else { d[k] / dn });
        }
    }
    let mut receivers = Vec::with_capacity(p * (p - 1));
    let mut senders = Vec::with_capacity(p * (p - 1));
    let mut edge_extra = Vec::with_capacity(p * (p - 1));
    for i in 0..p {
        for j in 0..p {
            if i != j {
                receivers.push(i);
                senders.push(j);
                edge_extra.push(state.charges[i] * state.charges[j]);
            }
        }
    }
    HostFeatures {
        scalars,
        vectors,
        receivers,
        senders,
        edge_extra,
    }
}

/// Builds the bundle-form graph for one state on the given grid.
pub fn nbody_featurize<T: Scalar>(
    tape: &Tape<T>,
    state: &NBodyState,
    grid: &SphereGrid,
    differentiable_positions: bool,
) -> Result<GeomGraph, LayersError> {
    let p = state.particles();
    let feats = featurize_host(state);
    let pos_data: Vec<T> = state.positions.iter().map(|&v| T::fr(v)).collect();
    let positions = if differentiable_positions {
        tape.var(&[p, 3], pos_data)?
    } else {
        tape.constant(&[p, 3], pos_data)?
    };
    let mut graph = GeomGraph::new(
        3,
        positions,
        state.positions.clone(),
        feats.receivers,
        feats.senders,
        GraphForm::Bundle(grid.clone()),
    )?;
    graph.scalars =
        Some(tape.constant(&[p, 2], feats.scalars.iter().map(|&v| T::fr(v)).collect())?);
    graph.vectors = Some(tape.constant(
        &[p, 3, 2],
        feats.vectors.iter().map(|&v| T::fr(v)).collect(),
    )?);
    let e = graph.num_edges();
    graph.edge_extra = Some(tape.constant(
        &[e, 1],
        feats.edge_extra.iter().map(|&v| T::fr(v)).collect(),
    )?);
    Ok(graph)
}

/// Serializes a sample as a point cloud: raw state in, final positions as the
/// vector target. Derived channels (speed, direction) are recomputed at
/// training time from the raw state.
pub fn sample_to_cloud(sample: &NBodySample) -> PointCloudFile {
    let p = sample.state.particles();
    let rows = |flat: &[f64]| -> Vec<Vec<f64>> { flat.chunks(3).map(<[f64]>::to_vec).collect() };
    let mut scalars = std::collections::BTreeMap::new();
    scalars.insert(
        "charge".to_string(),
        ScalarField::Flat(sample.state.charges.clone()),
    );
    let mut vectors = std::collections::BTreeMap::new();
    vectors.insert("velocity".to_string(), rows(&sample.state.velocities));
    let _ = p;
    PointCloudFile {
        positions: rows(&sample.state.positions),
        scalars,
        vectors,
        edges: None,
        targets: Some(CloudTargets {
            scalar: None,
            node_vector: Some(rows(&sample.final_positions)),
        }),
    }
}

/// Reads a sample back from its point-cloud form.
pub fn cloud_to_sample(cloud: &PointCloudFile) -> Result<NBodySample, DataError> {
    let state = cloud_to_state(cloud)?;
    let final_positions: Vec<f64> = cloud
        .targets
        .as_ref()
        .and_then(|t| t.node_vector.as_ref())
        .ok_or_else(|| DataError::Inconsistent("missing final-position target".into()))?
        .iter()
        .flatten()
        .copied()
        .collect();
    Ok(NBodySample {
        state,
        final_positions,
    })
}

/// Parses only the raw state (positions, `"velocity"` vectors, `"charge"`
/// scalars) of a cloud, ignoring targets; for running predictions on
/// unlabelled data.
pub fn cloud_to_state(cloud: &PointCloudFile) -> Result<NBodyState, DataError> {
    cloud.validate()?;
    if cloud.dim() != 3 {
        return Err(DataError::Inconsistent(format!(
            "charged-particle states are 3-D, file has dimension {}",
            cloud.dim()
        )));
    }
    let charges = cloud
        .scalars
        .get("charge")
        .ok_or_else(|| DataError::Inconsistent("missing \"charge\" scalar field".into()))?
        .to_rows();
    let velocities: Vec<f64> = cloud
        .vectors
        .get("velocity")
        .ok_or_else(|| DataError::Inconsistent("missing \"velocity\" vector field".into()))?
        .iter()
        .flatten()
        .copied()
        .collect();
    Ok(NBodyState {
        positions: cloud.positions_flat(),
        velocities,
        charges,
    })
}
