//! Training harness: mega-batched Adam loops for the two desk-scale tasks
//! (particle displacement regression and energy+force regression), dataset
//! splitting, the parameter-matched distance-only baseline search, and the
//! toy-energy data generator.
//!
//! # Batching
//! Each optimizer step concatenates `batch` graphs into one mega-graph (no
//! cross-graph edges), so every kernel-basis and channel-mixing matmul runs
//! once over large row blocks, and the orientation kernel is evaluated once
//! per step instead of once per graph.
//!
//! # Augmentation
//! Per-graph random grid rotation (training only) is realized as its exact
//! loss-level equivalent: rotating the graph's data instead of the grid.
//! Exact co-rotated equivariance gives `forward(data, R·grid) =
//! R·forward(R⁻¹·data, grid)`, and the mean-squared losses used here are
//! rotation invariant, so rotating positions, input vectors, and vector
//! targets by `R⁻¹` yields the identical loss and gradients (up to rounding)
//! while the whole mega-batch shares the single base grid. Evaluation always
//! uses the fixed grid with no rotation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CloudTargets, DataError, PointCloudFile, ScalarField};
use crate::geometry::{random_rotation, Rotation};
use crate::grids::SphereGrid;
use crate::layers::{
    energy_and_forces, fully_connected_edges, Conditioning, GeomGraph, GraphForm, LayersError,
    Ponita, PonitaConfig,
};
use crate::nbody::{featurize_host, nbody_featurize, NBodySample, NBodyState};
use crate::params::ParamStore;
use crate::tensor::{cosine_lr, AdamConfig, AdamState, DTensor, Scalar, Tape, TensorError};

#[derive(Error, Debug)]
pub enum TrainError {
    #[error(transparent)]
    Layers(#[from] LayersError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("training aborted: non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFinite {
        epoch: usize,
        step: usize,
        value: f64,
    },
    #[error("invalid training setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Warmup epochs for the cosine schedule.
    pub warmup: usize,
    pub seed: u64,
    /// Fraction of the dataset held out for validation.
    pub val_fraction: f64,
    /// Weight of the force term in the energy task loss.
    pub lambda_force: f64,
    /// Per-graph random rotation augmentation during training.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch: 32,
            lr: 5e-4,
            warmup: 50,
            seed: 0,
            val_fraction: 0.1,
            lambda_force: 500.0,
            augment: true,
        }
    }
}

/// Summary of one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainOutcome {
    /// Mean train loss of the first epoch.
    pub initial_train_loss: f64,
    /// Mean train loss of the last epoch.
    pub final_train_loss: f64,
    /// Validation loss after the last epoch.
    pub final_val_loss: f64,
    pub epochs_run: usize,
}

/// Seeded shuffle-and-split into (train, validation).
pub fn split_train_val<T>(mut items: Vec<T>, val_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        items.swap(i, rng.gen_range(0..=i));
    }
    let val = ((items.len() as f64 * val_fraction).round() as usize)
        .max(1)
        .min(items.len().saturating_sub(1));
    let train = items.len() - val;
    let val_items = items.split_off(train);
    (items, val_items)
}

fn shuffled_indices(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    idx
}

fn rotate_state(state: &NBodyState, r: &Rotation) -> NBodyState {
    let rot = |flat: &[f64]| -> Vec<f64> { flat.chunks(3).flat_map(|v| r.apply(v)).collect() };
    NBodyState {
        positions: rot(&state.positions),
        velocities: rot(&state.velocities),
        charges: state.charges.clone(),
    }
}

// ---------------------------------------------------------------------------
// Displacement task (charged-particle dynamics)
// ---------------------------------------------------------------------------

struct DisplacementBatch {
    nodes: usize,
    positions: Vec<f64>,
    scalars: Vec<f64>,
    vectors: Vec<f64>,
    receivers: Vec<usize>,
    senders: Vec<usize>,
    edge_extra: Vec<f64>,
    /// `[nodes, 3]` displacement targets (final − initial positions).
    targets: Vec<f64>,
}

fn assemble_displacement(
    samples: &[&NBodySample],
    rotations: Option<&[Rotation]>,
) -> DisplacementBatch {
    let mut batch = DisplacementBatch {
        nodes: 0,
        positions: Vec::new(),
        scalars: Vec::new(),
        vectors: Vec::new(),
        receivers: Vec::new(),
        senders: Vec::new(),
        edge_extra: Vec::new(),
        targets: Vec::new(),
    };
    for (g, sample) in samples.iter().enumerate() {
        let (state, disp): (NBodyState, Vec<f64>) = {
            let raw_disp: Vec<f64> = sample
                .final_positions
                .iter()
                .zip(&sample.state.positions)
                .map(|(f, i)| f - i)
                .collect();
            match rotations {
                Some(rs) => {
                    let r = &rs[g];
                    (
                        rotate_state(&sample.state, r),
                        raw_disp.chunks(3).flat_map(|v| r.apply(v)).collect(),
                    )
                }
                None => (sample.state.clone(), raw_disp),
            }
        };
        let feats = featurize_host(&state);
        let base = batch.nodes;
        batch.nodes += state.particles();
        batch.positions.extend_from_slice(&state.positions);
        batch.scalars.extend_from_slice(&feats.scalars);
        batch.vectors.extend_from_slice(&feats.vectors);
        batch
            .receivers
            .extend(feats.receivers.iter().map(|&i| i + base));
        batch
            .senders
            .extend(feats.senders.iter().map(|&j| j + base));
        batch.edge_extra.extend_from_slice(&feats.edge_extra);
        batch.targets.extend_from_slice(&disp);
    }
    batch
}

fn displacement_graph<T: Scalar>(
    tape: &Tape<T>,
    batch: &DisplacementBatch,
    grid: &SphereGrid,
) -> Result<GeomGraph, LayersError> {
    let p = batch.nodes;
    let to_t = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::fr(x)).collect() };
    let mut graph = GeomGraph::new(
        3,
        tape.constant(&[p, 3], to_t(&batch.positions))?,
        batch.positions.clone(),
        batch.receivers.clone(),
        batch.senders.clone(),
        GraphForm::Bundle(grid.clone()),
    )?;
    graph.scalars = Some(tape.constant(&[p, 2], to_t(&batch.scalars))?);
    graph.vectors = Some(tape.constant(&[p, 3, 2], to_t(&batch.vectors))?);
    graph.edge_extra = Some(tape.constant(&[batch.receivers.len(), 1], to_t(&batch.edge_extra))?);
    Ok(graph)
}

fn displacement_loss<T: Scalar>(
    tape: &Tape<T>,
    model: &Ponita,
    params: &crate::params::BoundParams,
    batch: &DisplacementBatch,
    grid: &SphereGrid,
) -> Result<(DTensor, f64), TrainError> {
    let graph = displacement_graph(tape, batch, grid)?;
    let out = model.forward(tape, params, &graph)?;
    let pred = out.node_vector.ok_or_else(|| {
        TrainError::Setup("displacement training needs a vector-readout model".into())
    })?;
    let target = tape.constant(
        &[batch.nodes, 3],
        batch.targets.iter().map(|&v| T::fr(v)).collect(),
    )?;
    let diff = tape.sub(&pred, &target)?;
    let sq = tape.sum_all(&tape.square(&diff)?)?;
    let loss = tape.scale(&sq, 1.0 / (batch.nodes * 3) as f64)?;
    let value = tape.read_f64(&loss)?[0];
    Ok((loss, value))
}

/// Mean squared displacement error over a dataset (no augmentation, fixed
/// grid), batched for throughput.
pub fn evaluate_displacement<T: Scalar>(
    model: &Ponita,
    grid: &SphereGrid,
    samples: &[NBodySample],
    batch_size: usize,
) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Setup("empty evaluation set".into()));
    }
    let mut total_sq = 0.0;
    let mut total_terms = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&NBodySample> = chunk.iter().collect();
        let batch = assemble_displacement(&refs, None);
        let tape = Tape::<T>::new();
        let params = model.bind(&tape)?;
        let (_, value) = displacement_loss(&tape, model, &params, &batch, grid)?;
        total_sq += value * (batch.nodes * 3) as f64;
        total_terms += batch.nodes * 3;
    }
    Ok(total_sq / total_terms as f64)
}

/// Trains a vector-readout model to predict particle displacements.
///
/// Writes one CSV row per epoch (`epoch,lr,train_loss,val_loss`) and applies
/// one Adam update per mega-batch. Aborts with a diagnostic on the first
/// non-finite loss.
pub fn train_displacement<T: Scalar>(
    model: &mut Ponita,
    grid: &SphereGrid,
    train: &[NBodySample],
    val: &[NBodySample],
    config: &TrainConfig,
    mut log: impl Write,
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Setup(
            "training needs non-empty train and validation sets".into(),
        ));
    }
    if config.batch == 0 {
        return Err(TrainError::Setup("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7261_696e));
    let mut adam = AdamState::<f64>::new(&model.store.param_lens());
    writeln!(log, "epoch,lr,train_loss,val_loss")?;

    let mut initial_train_loss = f64::NAN;
    let mut final_train_loss = f64::NAN;
    let mut final_val_loss = f64::NAN;
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.warmup, config.lr);
        let adam_cfg = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order
            .chunks_exact(config.batch.min(train.len()))
            .enumerate()
        {
            let refs: Vec<&NBodySample> = chunk.iter().map(|&i| &train[i]).collect();
            let rotations: Option<Vec<Rotation>> = if config.augment {
                Some(
                    (0..refs.len())
                        .map(|_| random_rotation(3, &mut rng).expect("3-D rotation"))
                        .collect(),
                )
            } else {
                None
            };
            let batch = assemble_displacement(&refs, rotations.as_deref());
            let tape = Tape::<T>::new();
            let params = model.store.bind(&tape)?;
            let (loss, value) = displacement_loss(&tape, model, &params, &batch, grid)?;
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, step, value });
            }
            let grads = tape.backward(&loss)?;
            let grad_vecs = model.store.grad_vecs(&tape, &params, &grads)?;
            model.store.adam_update(&grad_vecs, &mut adam, &adam_cfg);
            epoch_loss += value;
            steps += 1;
        }
        let train_loss = epoch_loss / steps.max(1) as f64;
        let val_loss = evaluate_displacement::<T>(model, grid, val, config.batch)?;
        writeln!(log, "{epoch},{lr},{train_loss},{val_loss}")?;
        if epoch == 0 {
            initial_train_loss = train_loss;
        }
        final_train_loss = train_loss;
        final_val_loss = val_loss;
    }
    Ok(TrainOutcome {
        initial_train_loss,
        final_train_loss,
        final_val_loss,
        epochs_run: config.epochs,
    })
}

// ---------------------------------------------------------------------------
// Parameter-matched baseline
// ---------------------------------------------------------------------------

/// Picks a distance-only configuration whose parameter count is as close as
/// possible to the full model's, searching over channels and basis width.
/// Returns the config and its relative parameter mismatch.
pub fn matched_distance_only_config(full: &PonitaConfig) -> (PonitaConfig, f64) {
    let target = Ponita::new(full.clone(), 0).param_count() as f64;
    let mut best: Option<(f64, PonitaConfig)> = None;
    let basis_options: Vec<usize> = [-8i64, 0, 8, 16, 24, 32, 48, 64]
        .iter()
        .filter_map(|&d| {
            let b = full.basis_dim as i64 + d;
            (b >= 8).then_some(b as usize)
        })
        .collect();
    for &basis_dim in &basis_options {
        for channels in full.channels..=full.channels * 2 {
            let mut cfg = full.clone();
            cfg.conditioning = Conditioning::DistanceOnly;
            cfg.channels = channels;
            cfg.basis_dim = basis_dim;
            let count = Ponita::new(cfg.clone(), 0).param_count() as f64;
            let mismatch = (count - target).abs() / target;
            if best.as_ref().is_none_or(|(m, _)| mismatch < *m) {
                best = Some((mismatch, cfg));
            }
        }
    }
    let (mismatch, cfg) = best.expect("non-empty search space");
    (cfg, mismatch)
}

// ---------------------------------------------------------------------------
// Energy + force task
// ---------------------------------------------------------------------------

/// One energy-labelled cloud in flat form.
pub struct EnergySample {
    pub positions: Vec<f64>,
    /// `[P, S]` input scalars (field values concatenated in name order).
    pub scalars: Vec<f64>,
    pub scalar_width: usize,
    pub energy: f64,
    /// `[P, 3]` reference forces.
    pub forces: Vec<f64>,
}

impl EnergySample {
    pub fn particles(&self) -> usize {
        self.positions.len() / 3
    }
}

/// Parses an energy-task cloud: every scalar field (in name order) becomes an
/// input channel; the graph scalar target is the energy, the vector target
/// the forces.
pub fn cloud_to_energy_sample(cloud: &PointCloudFile) -> Result<EnergySample, DataError> {
    let mut sample = cloud_to_energy_inputs(cloud)?;
    let targets = cloud
        .targets
        .as_ref()
        .ok_or_else(|| DataError::Inconsistent("missing targets".into()))?;
    sample.energy = targets
        .scalar
        .ok_or_else(|| DataError::Inconsistent("missing energy target".into()))?;
    sample.forces = targets
        .node_vector
        .as_ref()
        .ok_or_else(|| DataError::Inconsistent("missing force target".into()))?
        .iter()
        .flatten()
        .copied()
        .collect();
    Ok(sample)
}

/// Parses only the model inputs of an energy-task cloud, leaving the label
/// fields zeroed; for running predictions on unlabelled data.
pub fn cloud_to_energy_inputs(cloud: &PointCloudFile) -> Result<EnergySample, DataError> {
    cloud.validate()?;
    if cloud.dim() != 3 {
        return Err(DataError::Inconsistent("energy task clouds are 3-D".into()));
    }
    let p = cloud.num_points();
    let mut widths = Vec::new();
    for (name, field) in &cloud.scalars {
        widths.push((name, field.width().expect("validated"), field.to_rows()));
    }
    let scalar_width: usize = widths.iter().map(|(_, w, _)| w).sum();
    if scalar_width == 0 {
        return Err(DataError::Inconsistent(
            "energy task needs at least one scalar input field".into(),
        ));
    }
    let mut scalars = vec![0.0; p * scalar_width];
    let mut offset = 0;
    for (_, w, rows) in &widths {
        for i in 0..p {
            scalars[i * scalar_width + offset..i * scalar_width + offset + w]
                .copy_from_slice(&rows[i * w..(i + 1) * w]);
        }
        offset += w;
    }
    Ok(EnergySample {
        positions: cloud.positions_flat(),
        scalars,
        scalar_width,
        energy: 0.0,
        forces: vec![0.0; p * 3],
    })
}

/// Generates labelled clouds for the toy potential
/// `E = Σ_{i<j} 1/(‖Δp‖² + ½)` with analytic forces `F = −∇E`. Each node
/// carries a constant scalar input of 1.
pub fn toy_energy_generate(count: usize, particles: usize, seed: u64) -> Vec<PointCloudFile> {
    (0..count)
        .map(|idx| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
            let positions: Vec<f64> = (0..particles * 3)
                .map(|_| rng.gen_range(-1.5..1.5))
                .collect();
            let mut energy = 0.0;
            let mut forces = vec![0.0; particles * 3];
            for i in 0..particles {
                for j in (i + 1)..particles {
                    let d: Vec<f64> = (0..3)
                        .map(|k| positions[i * 3 + k] - positions[j * 3 + k])
                        .collect();
                    let r2: f64 = d.iter().map(|x| x * x).sum();
                    let denom = r2 + 0.5;
                    energy += 1.0 / denom;
                    for k in 0..3 {
                        // −∂E/∂p_i = 2·Δp/denom².
                        let f = 2.0 * d[k] / (denom * denom);
                        forces[i * 3 + k] += f;
                        forces[j * 3 + k] -= f;
                    }
                }
            }
            let rows =
                |flat: &[f64]| -> Vec<Vec<f64>> { flat.chunks(3).map(<[f64]>::to_vec).collect() };
            let mut scalars = std::collections::BTreeMap::new();
            scalars.insert("one".to_string(), ScalarField::Flat(vec![1.0; particles]));
            PointCloudFile {
                positions: rows(&positions),
                scalars,
                vectors: std::collections::BTreeMap::new(),
                edges: None,
                targets: Some(CloudTargets {
                    scalar: Some(energy),
                    node_vector: Some(rows(&forces)),
                }),
            }
        })
        .collect()
}

struct EnergyBatch {
    nodes: usize,
    graphs: usize,
    positions: Vec<f64>,
    scalars: Vec<f64>,
    scalar_width: usize,
    receivers: Vec<usize>,
    senders: Vec<usize>,
    graph_ids: Vec<usize>,
    energies: Vec<f64>,
    forces: Vec<f64>,
}

fn assemble_energy(samples: &[&EnergySample], rotations: Option<&[Rotation]>) -> EnergyBatch {
    let mut batch = EnergyBatch {
        nodes: 0,
        graphs: samples.len(),
        positions: Vec::new(),
        scalars: Vec::new(),
        scalar_width: samples.first().map(|s| s.scalar_width).unwrap_or(0),
        receivers: Vec::new(),
        senders: Vec::new(),
        graph_ids: Vec::new(),
        energies: Vec::new(),
        forces: Vec::new(),
    };
    for (g, sample) in samples.iter().enumerate() {
        let p = sample.particles();
        let (pos, frc) = match rotations {
            Some(rs) => {
                let r = &rs[g];
                let rot = |flat: &[f64]| -> Vec<f64> {
                    flat.chunks(3).flat_map(|v| r.apply(v)).collect()
                };
                (rot(&sample.positions), rot(&sample.forces))
            }
            None => (sample.positions.clone(), sample.forces.clone()),
        };
        let base = batch.nodes;
        batch.nodes += p;
        batch.positions.extend_from_slice(&pos);
        batch.scalars.extend_from_slice(&sample.scalars);
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    batch.receivers.push(base + i);
                    batch.senders.push(base + j);
                }
            }
        }
        batch.graph_ids.extend(std::iter::repeat_n(g, p));
        batch.energies.push(sample.energy);
        batch.forces.extend_from_slice(&frc);
    }
    batch
}

struct EnergyEval {
    loss: DTensor,
    loss_value: f64,
    energy_mse: f64,
    force_mse: f64,
}

fn energy_loss<T: Scalar>(
    tape: &Tape<T>,
    model: &Ponita,
    params: &crate::params::BoundParams,
    batch: &EnergyBatch,
    grid: &SphereGrid,
    lambda_force: f64,
) -> Result<EnergyEval, TrainError> {
    let p = batch.nodes;
    let to_t = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::fr(x)).collect() };
    let mut graph = GeomGraph::new(
        3,
        tape.var(&[p, 3], to_t(&batch.positions))?,
        batch.positions.clone(),
        batch.receivers.clone(),
        batch.senders.clone(),
        GraphForm::Bundle(grid.clone()),
    )?;
    graph.scalars = Some(tape.constant(&[p, batch.scalar_width], to_t(&batch.scalars))?);

    let out = model.forward(tape, params, &graph)?;
    let node_scalar = out
        .node_scalar
        .ok_or_else(|| TrainError::Setup("energy training needs a scalar-readout model".into()))?;
    // One backward pass of the total energy yields every graph's forces at
    // once — graphs are disconnected, so cross-graph gradients are zero.
    let total = tape.sum_all(&node_scalar)?;
    let grads = tape.backward(&total)?;
    let g = grads
        .wrt(&graph.positions)
        .expect("positions created as a differentiable variable");
    let pred_forces = tape.scale(&g, -1.0)?;

    let node_col = tape.reshape(&node_scalar, &[p, 1])?;
    let pred_e = tape.segment_sum(&node_col, &batch.graph_ids, batch.graphs)?;
    let target_e = tape.constant(&[batch.graphs, 1], to_t(&batch.energies))?;
    let de = tape.sub(&pred_e, &target_e)?;
    let loss_e = tape.scale(
        &tape.sum_all(&tape.square(&de)?)?,
        1.0 / batch.graphs as f64,
    )?;
    let target_f = tape.constant(&[p, 3], to_t(&batch.forces))?;
    let df = tape.sub(&pred_forces, &target_f)?;
    let loss_f = tape.scale(&tape.sum_all(&tape.square(&df)?)?, 1.0 / (3 * p) as f64)?;
    let loss = tape.add(&loss_e, &tape.scale(&loss_f, lambda_force)?)?;
    Ok(EnergyEval {
        loss_value: tape.read_f64(&loss)?[0],
        energy_mse: tape.read_f64(&loss_e)?[0],
        force_mse: tape.read_f64(&loss_f)?[0],
        loss,
    })
}

/// Weighted energy+force objective over a dataset (fixed grid, no
/// augmentation): returns `(total loss, energy MSE, force MSE)`.
pub fn evaluate_energy<T: Scalar>(
    model: &Ponita,
    grid: &SphereGrid,
    samples: &[EnergySample],
    batch_size: usize,
    lambda_force: f64,
) -> Result<(f64, f64, f64), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Setup("empty evaluation set".into()));
    }
    let mut e_sq = 0.0;
    let mut f_sq = 0.0;
    let mut graphs = 0usize;
    let mut terms = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&EnergySample> = chunk.iter().collect();
        let batch = assemble_energy(&refs, None);
        let tape = Tape::<T>::new();
        let params = model.bind(&tape)?;
        let eval = energy_loss(&tape, model, &params, &batch, grid, lambda_force)?;
        e_sq += eval.energy_mse * batch.graphs as f64;
        f_sq += eval.force_mse * (3 * batch.nodes) as f64;
        graphs += batch.graphs;
        terms += 3 * batch.nodes;
    }
    let e_mse = e_sq / graphs as f64;
    let f_mse = f_sq / terms as f64;
    Ok((e_mse + lambda_force * f_mse, e_mse, f_mse))
}

/// Trains a scalar-readout model on energies and forces with the weighted
/// loss `‖Ê−E‖²/G + λ_F · ‖F̂−F‖²/(3M)`, differentiating through the force
/// computation (second-order backward per step).
pub fn train_energy<T: Scalar>(
    model: &mut Ponita,
    grid: &SphereGrid,
    train: &[EnergySample],
    val: &[EnergySample],
    config: &TrainConfig,
    mut log: impl Write,
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Setup(
            "training needs non-empty train and validation sets".into(),
        ));
    }
    if config.batch == 0 {
        return Err(TrainError::Setup("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x656e_6572));
    let mut adam = AdamState::<f64>::new(&model.store.param_lens());
    writeln!(log, "epoch,lr,train_loss,val_loss")?;

    let mut initial_train_loss = f64::NAN;
    let mut final_train_loss = f64::NAN;
    let mut final_val_loss = f64::NAN;
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.warmup, config.lr);
        let adam_cfg = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order
            .chunks_exact(config.batch.min(train.len()))
            .enumerate()
        {
            let refs: Vec<&EnergySample> = chunk.iter().map(|&i| &train[i]).collect();
            let rotations: Option<Vec<Rotation>> = if config.augment {
                Some(
                    (0..refs.len())
                        .map(|_| random_rotation(3, &mut rng).expect("3-D rotation"))
                        .collect(),
                )
            } else {
                None
            };
            let batch = assemble_energy(&refs, rotations.as_deref());
            let tape = Tape::<T>::new();
            let params = model.store.bind(&tape)?;
            let eval = energy_loss(&tape, model, &params, &batch, grid, config.lambda_force)?;
            if !eval.loss_value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step,
                    value: eval.loss_value,
                });
            }
            let grads = tape.backward(&eval.loss)?;
            let grad_vecs = model.store.grad_vecs(&tape, &params, &grads)?;
            model.store.adam_update(&grad_vecs, &mut adam, &adam_cfg);
            epoch_loss += eval.loss_value;
            steps += 1;
        }
        let train_loss = epoch_loss / steps.max(1) as f64;
        let (val_loss, _, _) =
            evaluate_energy::<T>(model, grid, val, config.batch, config.lambda_force)?;
        writeln!(log, "{epoch},{lr},{train_loss},{val_loss}")?;
        if epoch == 0 {
            initial_train_loss = train_loss;
        }
        final_train_loss = train_loss;
        final_val_loss = val_loss;
    }
    Ok(TrainOutcome {
        initial_train_loss,
        final_train_loss,
        final_val_loss,
        epochs_run: config.epochs,
    })
}

/// Saves a model checkpoint directory: `params.ckpt` (binary tensors) and
/// `config.json` (the architecture).
pub fn save_model(dir: &std::path::Path, model: &Ponita) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    model
        .store
        .save(&dir.join("params.ckpt"))
        .map_err(TrainError::Tensor)?;
    let cfg = serde_json::to_string_pretty(&model.config)
        .map_err(|e| TrainError::Setup(format!("config serialization failed: {e}")))?;
    std::fs::write(dir.join("config.json"), cfg)?;
    Ok(())
}

/// Rebuilds a model from a checkpoint directory written by [`save_model`].
pub fn load_model(dir: &std::path::Path) -> Result<Ponita, TrainError> {
    let cfg_text = std::fs::read_to_string(dir.join("config.json"))?;
    let config: PonitaConfig = serde_json::from_str(&cfg_text)
        .map_err(|e| TrainError::Setup(format!("bad config.json: {e}")))?;
    let mut model = Ponita::new(config, 0);
    model
        .store
        .load(&dir.join("params.ckpt"))
        .map_err(TrainError::Tensor)?;
    Ok(model)
}

/// Convenience: keep only the store from a freshly built model but a
/// caller-provided parameter snapshot (used by tests comparing runs).
pub fn store_snapshot(store: &ParamStore) -> Vec<f64> {
    store.flat_values()
}

/// Predicted per-particle displacements (flat `[P, 3]`) for one raw state,
/// using frozen weights and the fixed grid.
pub fn predict_displacement<T: Scalar>(
    model: &Ponita,
    grid: &SphereGrid,
    state: &NBodyState,
) -> Result<Vec<f64>, TrainError> {
    let tape = Tape::<T>::new();
    let params = model.bind(&tape)?;
    let graph = nbody_featurize(&tape, state, grid, false)?;
    let out = model.forward(&tape, &params, &graph)?;
    let pred = out.node_vector.ok_or_else(|| {
        TrainError::Setup("displacement prediction needs a vector-readout model".into())
    })?;
    Ok(tape.read_f64(&pred)?)
}

/// Predicted `(energy, forces)` for one energy-task sample (forces flat
/// `[P, 3]`), differentiating the scalar readout with frozen weights.
pub fn predict_energy<T: Scalar>(
    model: &Ponita,
    grid: &SphereGrid,
    sample: &EnergySample,
) -> Result<(f64, Vec<f64>), TrainError> {
    let p = sample.particles();
    let to_t = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::fr(x)).collect() };
    let tape = Tape::<T>::new();
    let params = model.bind(&tape)?;
    let (receivers, senders) = fully_connected_edges(p);
    let mut graph = GeomGraph::new(
        3,
        tape.var(&[p, 3], to_t(&sample.positions))?,
        sample.positions.clone(),
        receivers,
        senders,
        GraphForm::Bundle(grid.clone()),
    )?;
    graph.scalars = Some(tape.constant(&[p, sample.scalar_width], to_t(&sample.scalars))?);
    let (energy, forces) = energy_and_forces(&tape, model, &params, &graph)?;
    Ok((tape.read_f64(&energy)?[0], tape.read_f64(&forces)?))
}
