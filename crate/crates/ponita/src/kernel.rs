//! Continuous convolution kernels as neural fields.
//!
//! Invariant edge attributes enter a polynomial embedding (all monomials up
//! to a maximum total degree), then a single two-hidden-layer GELU MLP that
//! produces a shared basis vector per edge, computed once per forward pass.
//! Each convolution layer then derives its own kernel by applying a small
//! linear head to that shared basis: channelwise kernels `k¹`/`k²` use a
//! `basis_dim → C` head, full point-cloud kernels a `basis_dim → C_out·C_in`
//! head.
//!
//! The orientation kernel `k²` consumes the raw inner product `o·o′ ∈ [−1,1]`
//! rather than the angle `arccos(o·o′)`: the inner product is smooth at the
//! poles where the angle's derivative blows up. Since the inner product and
//! the angle determine each other on `[0,π]`, no information changes.
//!
//! Polynomial embeddings are scale-sensitive, so spatial attribute components
//! are divided by a configurable length scale (default 1.0) before embedding;
//! angular/rotational components pass through unscaled.

use rand::Rng;
use thiserror::Error;

use crate::grids::{gram_matrix, SphereGrid};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{DTensor, Scalar, Tape, TensorError};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("attribute tensor has {got} components but this kernel embeds {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("attribute tensor must be rank 2 [edges, components], got shape {0:?}")]
    AttrRank(Vec<usize>),
    #[error(
        "random Fourier features are a stub interface kept for configuration \
         compatibility; use the polynomial embedding"
    )]
    RffUnavailable,
}

// ---------------------------------------------------------------------------
// Polynomial embedding
// ---------------------------------------------------------------------------

/// All monomials of total degree `1..=degree` in `input_dim` variables,
/// enumerated in graded-lexicographic order (by total degree, then by
/// descending exponent tuple), constant term excluded.
///
/// For `(x, y)` at degree 2 the order is `(x, y, x², xy, y²)`.
#[derive(Clone, Debug)]
pub struct PolynomialEmbedding {
    input_dim: usize,
    degree: u32,
    monomials: Vec<Vec<u32>>,
}

fn push_monomials(remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        push_monomials(remaining - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

impl PolynomialEmbedding {
    /// # Panics
    /// If `input_dim` or `degree` is zero.
    pub fn new(input_dim: usize, degree: u32) -> Self {
        assert!(input_dim >= 1, "embedding needs at least one input");
        assert!(degree >= 1, "embedding needs degree at least one");
        let mut monomials = Vec::new();
        let mut cur = vec![0u32; input_dim];
        for d in 1..=degree {
            push_monomials(d, 0, &mut cur, &mut monomials);
        }
        Self {
            input_dim,
            degree,
            monomials,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Number of monomials: `C(input_dim + degree, degree) − 1`.
    pub fn output_len(&self) -> usize {
        self.monomials.len()
    }

    /// Exponent multi-indices in embedding order.
    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    /// Embeds one attribute vector on the host (no tape).
    pub fn embed_host(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim, "attribute length");
        self.monomials
            .iter()
            .map(|m| m.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product())
            .collect()
    }

    /// Embeds a batch of attributes `[E, input_dim] → [E, output_len]`
    /// in-graph, optionally rescaling each input column by `inv_scale` first.
    pub fn embed<T: Scalar>(
        &self,
        tape: &Tape<T>,
        attrs: &DTensor,
        inv_scale: Option<&[f64]>,
    ) -> Result<DTensor, KernelError> {
        if attrs.rank() != 2 {
            return Err(KernelError::AttrRank(attrs.shape().to_vec()));
        }
        if attrs.shape()[1] != self.input_dim {
            return Err(KernelError::InputDim {
                expected: self.input_dim,
                got: attrs.shape()[1],
            });
        }
        let mut cols = Vec::with_capacity(self.input_dim);
        for k in 0..self.input_dim {
            let mut c = tape.slice(attrs, 1, k, 1)?;
            if let Some(s) = inv_scale {
                if s[k] != 1.0 {
                    c = tape.scale(&c, s[k])?;
                }
            }
            cols.push(c);
        }
        // powers[k][d-1] = column k to the d-th power.
        let mut powers: Vec<Vec<DTensor>> = Vec::with_capacity(self.input_dim);
        for c in &cols {
            let mut ps = vec![c.clone()];
            for _ in 2..=self.degree {
                let next = tape.mul(ps.last().expect("nonempty"), c)?;
                ps.push(next);
            }
            powers.push(ps);
        }
        let mut monos = Vec::with_capacity(self.monomials.len());
        for m in &self.monomials {
            let mut acc: Option<DTensor> = None;
            for (k, &e) in m.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let p = &powers[k][(e - 1) as usize];
                acc = Some(match acc {
                    None => p.clone(),
                    Some(a) => tape.mul(&a, p)?,
                });
            }
            monos.push(acc.expect("monomials have degree at least one"));
        }
        let refs: Vec<&DTensor> = monos.iter().collect();
        Ok(tape.concat(&refs, 1)?)
    }
}

/// Embeds one attribute vector into all monomials of degree `1..=degree`.
pub fn poly_embed(attr: &[f64], degree: u32) -> Vec<f64> {
    PolynomialEmbedding::new(attr.len(), degree).embed_host(attr)
}

// ---------------------------------------------------------------------------
// Shared basis MLP
// ---------------------------------------------------------------------------

/// The shared kernel basis: polynomial embedding followed by
/// `Linear → GELU → Linear → GELU` with hidden width equal to `basis_dim`.
/// Evaluated once per forward pass; all layer heads read from its output.
#[derive(Clone, Debug)]
pub struct KernelBasis {
    embedding: PolynomialEmbedding,
    inv_scale: Vec<f64>,
    basis_dim: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl KernelBasis {
    /// Registers the basis MLP's parameters under `name.*`.
    ///
    /// `input_scale` holds one positive length scale per attribute component;
    /// components are divided by it before the polynomial embedding. Pass
    /// `1.0` for angular components and extra conditioning inputs.
    ///
    /// # Panics
    /// If `input_scale` length or positivity is violated, or `basis_dim` is 0.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        degree: u32,
        basis_dim: usize,
        input_scale: &[f64],
        rng: &mut impl Rng,
    ) -> Self {
        assert_eq!(input_scale.len(), input_dim, "one scale per component");
        assert!(
            input_scale.iter().all(|&s| s > 0.0 && s.is_finite()),
            "length scales must be positive and finite"
        );
        assert!(basis_dim >= 1, "basis must have at least one dimension");
        let embedding = PolynomialEmbedding::new(input_dim, degree);
        let pe_len = embedding.output_len();
        let w1 = store.alloc_weight(&format!("{name}.w1"), pe_len, basis_dim, rng);
        let b1 = store.alloc_bias(&format!("{name}.b1"), pe_len, basis_dim, rng);
        let w2 = store.alloc_weight(&format!("{name}.w2"), basis_dim, basis_dim, rng);
        let b2 = store.alloc_bias(&format!("{name}.b2"), basis_dim, basis_dim, rng);
        Self {
            embedding,
            inv_scale: input_scale.iter().map(|s| 1.0 / s).collect(),
            basis_dim,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embedding.input_dim()
    }

    pub fn basis_dim(&self) -> usize {
        self.basis_dim
    }

    pub fn embedding(&self) -> &PolynomialEmbedding {
        &self.embedding
    }

    /// Maps attributes `[E, input_dim]` to basis vectors `[E, basis_dim]`.
    pub fn eval_basis<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &BoundParams,
        attrs: &DTensor,
    ) -> Result<DTensor, KernelError> {
        let pe = self.embedding.embed(tape, attrs, Some(&self.inv_scale))?;
        let h = tape.gelu(&tape.linear(&pe, params.get(self.w1), Some(params.get(self.b1)))?)?;
        let b = tape.gelu(&tape.linear(&h, params.get(self.w2), Some(params.get(self.b2)))?)?;
        Ok(b)
    }
}

// ---------------------------------------------------------------------------
// Layer-specific heads
// ---------------------------------------------------------------------------

/// Per-layer linear map from the shared basis to kernel values. Carries a
/// bias: a constant kernel offset is a legitimate degree of freedom and
/// nothing downstream requires the head to vanish at zero basis.
#[derive(Clone, Debug)]
pub struct KernelHead {
    w: ParamId,
    b: ParamId,
    out_dim: usize,
}

impl KernelHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        basis_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.alloc_weight(&format!("{name}.w"), basis_dim, out_dim, rng);
        let b = store.alloc_bias(&format!("{name}.b"), basis_dim, out_dim, rng);
        Self { w, b, out_dim }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Maps basis vectors `[E, basis_dim]` to kernel values `[E, out_dim]`.
    pub fn eval<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &BoundParams,
        basis: &DTensor,
    ) -> Result<DTensor, KernelError> {
        Ok(tape.linear(basis, params.get(self.w), Some(params.get(self.b)))?)
    }
}

/// Evaluates a channelwise kernel `[E, C]` from the shared basis — the `k¹`
/// path of the separable convolution.
pub fn eval_spatial_kernel<T: Scalar>(
    tape: &Tape<T>,
    params: &BoundParams,
    head: &KernelHead,
    basis: &DTensor,
) -> Result<DTensor, KernelError> {
    head.eval(tape, params, basis)
}

/// Precomputes the orientation-mixing kernel `K2[o][o′][c] = k²(o_o·o_o′)[c]`
/// for a fixed grid. `basis` must embed a single component (the inner
/// product); the result depends on the grid only through its Gram matrix, so
/// rotating the grid leaves `K2` unchanged.
pub fn precompute_spherical_kernel<T: Scalar>(
    tape: &Tape<T>,
    params: &BoundParams,
    basis: &KernelBasis,
    head: &KernelHead,
    grid: &SphereGrid,
) -> Result<DTensor, KernelError> {
    let n = grid.len();
    let gram = gram_matrix(grid);
    let attrs = tape.constant(&[n * n, 1], gram.iter().map(|&g| T::fr(g)).collect())?;
    let b = basis.eval_basis(tape, params, &attrs)?;
    let k2 = head.eval(tape, params, &b)?;
    Ok(tape.reshape(&k2, &[n, n, head.out_dim()])?)
}

// ---------------------------------------------------------------------------
// Random Fourier features (stub)
// ---------------------------------------------------------------------------

/// Stub for a sinusoidal attribute embedding. The polynomial embedding
/// replaced it; the type exists so configurations can still name the
/// alternative, but evaluation always fails with
/// [`KernelError::RffUnavailable`].
#[derive(Clone, Copy, Debug)]
pub struct RandomFourierFeatures {
    pub input_dim: usize,
    pub num_features: usize,
}

impl RandomFourierFeatures {
    pub fn embed<T: Scalar>(
        &self,
        _tape: &Tape<T>,
        _attrs: &DTensor,
    ) -> Result<DTensor, KernelError> {
        Err(KernelError::RffUnavailable)
    }
}
