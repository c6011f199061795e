//! Flat parameter storage shared by every learnable component.
//!
//! Master parameter values live in `f64` host buffers regardless of compute
//! precision. Each forward pass binds them onto a fresh tape as
//! differentiation roots ([`ParamStore::bind`]); after `backward`, gradients
//! are read back as `f64` in registration order and fed to Adam against the
//! masters. Computing in `f32` therefore runs mixed precision: low-precision
//! forward/backward, full-precision weight updates.

use std::path::Path;

use rand::Rng;

use crate::tensor::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, CheckpointEntry, DTensor,
    Gradients, Scalar, Tape, TensorError,
};

/// Handle to one tensor in a [`ParamStore`]. Only meaningful for the store
/// that issued it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(usize);

/// Registry of named parameter tensors with `f64` master values.
#[derive(Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

/// The tape-bound form of a store: one differentiable leaf per parameter.
pub struct BoundParams {
    vars: Vec<DTensor>,
}

impl BoundParams {
    pub fn get(&self, id: ParamId) -> &DTensor {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a named parameter tensor.
    ///
    /// # Panics
    /// If the name is already taken or the value length does not match the
    /// shape — both are construction-time programming errors.
    pub fn alloc(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> ParamId {
        assert!(
            self.names.iter().all(|n| n != name),
            "duplicate parameter name {name}"
        );
        let len: usize = shape.iter().product();
        assert_eq!(
            value.len(),
            len,
            "parameter {name}: {} values for shape {shape:?}",
            value.len()
        );
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.values.push(value);
        ParamId(self.names.len() - 1)
    }

    /// Registers a weight matrix `[fan_in, fan_out]` initialized
    /// uniform(−1/√fan_in, +1/√fan_in).
    pub fn alloc_weight(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let value = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        self.alloc(name, &[fan_in, fan_out], value)
    }

    /// Registers a bias vector `[fan_out]` with the same uniform bound as the
    /// matrix it accompanies.
    pub fn alloc_bias(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let value = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        self.alloc(name, &[fan_out], value)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters across all tensors.
    pub fn param_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Per-tensor element counts in registration order (for `AdamState::new`).
    pub fn param_lens(&self) -> Vec<usize> {
        self.values.iter().map(Vec::len).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Looks a parameter up by its registered name.
    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// All registered parameter names in registration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    /// Overwrites one parameter's master values.
    ///
    /// # Panics
    /// If the length does not match the registered shape.
    pub fn set_value(&mut self, id: ParamId, value: Vec<f64>) {
        assert_eq!(
            value.len(),
            self.values[id.0].len(),
            "parameter {}: value length changed",
            self.names[id.0]
        );
        self.values[id.0] = value;
    }

    /// All master values concatenated in registration order (finite-difference
    /// oracles perturb this flat view).
    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// Restores masters from a flat view produced by [`Self::flat_values`].
    ///
    /// # Panics
    /// If the total length differs.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut offset = 0;
        for v in &mut self.values {
            let len = v.len();
            v.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    /// Creates one differentiable leaf per parameter on `tape`, downcasting
    /// masters to the tape's precision.
    pub fn bind<T: Scalar>(&self, tape: &Tape<T>) -> Result<BoundParams, TensorError> {
        let mut vars = Vec::with_capacity(self.names.len());
        for (shape, value) in self.shapes.iter().zip(&self.values) {
            vars.push(tape.var(shape, value.iter().map(|&v| T::fr(v)).collect())?);
        }
        Ok(BoundParams { vars })
    }

    /// Reads one gradient buffer per parameter (registration order) off a
    /// finished backward pass, upcast to `f64`. Parameters the loss never
    /// touched come back as zeros.
    pub fn grad_vecs<T: Scalar>(
        &self,
        tape: &Tape<T>,
        bound: &BoundParams,
        grads: &Gradients,
    ) -> Result<Vec<Vec<f64>>, TensorError> {
        bound
            .vars
            .iter()
            .map(|v| {
                let g = grads
                    .wrt(v)
                    .expect("bound parameter missing from gradients");
                tape.read_f64(&g)
            })
            .collect()
    }

    /// One Adam update of the masters from `grad_vecs` output.
    pub fn adam_update(
        &mut self,
        grads: &[Vec<f64>],
        state: &mut AdamState<f64>,
        config: &AdamConfig,
    ) {
        adam_step(&mut self.values, grads, state, config);
    }

    pub fn to_checkpoint(&self) -> Vec<CheckpointEntry> {
        self.names
            .iter()
            .zip(self.shapes.iter().zip(&self.values))
            .map(|(name, (shape, value))| CheckpointEntry {
                name: name.clone(),
                shape: shape.clone(),
                data: value.clone(),
            })
            .collect()
    }

    /// Loads masters from checkpoint entries, matching by name. Every
    /// registered parameter must be present with its registered shape;
    /// entries for unknown names are rejected (they signal a config/model
    /// mismatch).
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<(), TensorError> {
        for e in entries {
            let Some(i) = self.names.iter().position(|n| n == &e.name) else {
                return Err(TensorError::CheckpointFormat(format!(
                    "checkpoint tensor {:?} does not exist in this model",
                    e.name
                )));
            };
            if self.shapes[i] != e.shape {
                return Err(TensorError::CheckpointFormat(format!(
                    "checkpoint tensor {:?} has shape {:?}, model expects {:?}",
                    e.name, e.shape, self.shapes[i]
                )));
            }
            self.values[i] = e.data.clone();
        }
        for (i, name) in self.names.iter().enumerate() {
            if !entries.iter().any(|e| &e.name == name) {
                return Err(TensorError::CheckpointFormat(format!(
                    "checkpoint is missing tensor {:?} (index {i})",
                    name
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        save_checkpoint(&self.to_checkpoint(), path)
    }

    pub fn load(&mut self, path: &Path) -> Result<(), TensorError> {
        let entries = load_checkpoint(path)?;
        self.load_entries(&entries)
    }
}
