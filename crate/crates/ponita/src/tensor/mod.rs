//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: contiguous row-major buffers, an
//! eager define-by-run tape, and exactly the primitive set the convolution
//! layers, kernel networks, and training loops need. Two design points
//! carry the rest of the crate:
//!
//! * **Adjoints are tape nodes.** [`Tape::backward`] does not write into
//!   side buffers; it extends the tape with nodes that *compute* the
//!   gradients. Gradients are therefore ordinary tensors that can enter
//!   further computation — which is how force predictions (−∂E/∂p) can
//!   themselves be trained against a loss.
//! * **Scalar-generic buffers.** Everything is generic over [`Scalar`]
//!   (f64 default, f32 for throughput); accuracy-sensitive tests run at
//!   f64, the training harness may opt into f32.
//!
//! Submodules: [`tape`] (tensors, primitives, backward), [`optim`]
//! (Adam, cosine schedule), [`checkpoint`] (parameter file I/O),
//! [`gradcheck`] (finite-difference oracles).

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod tape;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointEntry,
};
pub use gradcheck::{central_difference, max_relative_error, relative_error};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use tape::{DTensor, Gradients, Tape};

/// Element type of tensor buffers: the float operations the engine needs,
/// plus a matrix-multiply kernel and the error function.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    /// Short type name used in error messages and logs.
    const NAME: &'static str;

    /// Converts from f64 (the constant/configuration currency).
    fn fr(v: f64) -> Self;

    /// Converts to f64 for reporting and checkpointing.
    fn f64(self) -> f64;

    /// The Gauss error function.
    fn erf(self) -> Self;

    /// General matrix multiply `C = alpha·A·B + beta·C` with explicit
    /// row/column strides, delegated to an optimized kernel.
    ///
    /// # Safety
    /// Pointers must reference buffers valid for the given extents and
    /// strides; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn fr(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn fr(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }

    fn erf(self) -> Self {
        libm::erff(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Errors from tensor construction, primitive application, and backward.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: index {index} out of range for {rows} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("tensor belongs to a different tape")]
    CrossTape,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this graph; extend it with new forward nodes first")]
    BackwardTwice,
    #[error("derivative order not supported: {0}")]
    HigherOrderUnsupported(&'static str),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
