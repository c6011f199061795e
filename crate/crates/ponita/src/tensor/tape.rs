//! The tape: eager define-by-run evaluation with adjoints built as nodes.
//!
//! Every operation immediately computes its value and appends a node
//! recording how it was produced. [`Tape::backward`] walks the recorded
//! graph in reverse and *extends the tape* with nodes computing each
//! gradient, so gradients are first-class tensors: they can be read out,
//! or fed into further computation whose own backward pass then yields
//! parameter gradients of gradient-dependent losses (the force-training
//! pattern).
//!
//! Tensors are row-major and contiguous. A [`DTensor`] is a cheap handle
//! (node id + shape) into its owning tape; using it with another tape is
//! an error, not undefined behavior. A tape is single-threaded by design —
//! parallelism happens across tapes, one per concurrently evaluated graph.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{Scalar, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone)]
pub struct DTensor {
    pub(crate) id: usize,
    pub(crate) tape_id: u64,
    shape: Vec<usize>,
}

impl DTensor {
    /// The tensor's extents.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of axes.
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements (1 for rank-0 scalars).
    pub fn elem_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// How a node's value was produced; inputs are node ids on the same tape.
///
/// Records store the complete op signature even where backward recovers a
/// parameter from shapes instead, so a tape dump fully describes the
/// computation.
#[derive(Debug, Clone)]
#[allow(dead_code)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, T),
    AddScalar(usize, T),
    Recip(usize),
    Sqrt(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    /// 1 where the input is positive, else 0 (the ReLU derivative field).
    StepMask(usize),
    Gelu(usize),
    Erf(usize),
    /// arccos of the input clamped to [−1, 1].
    ClampedAcos(usize),
    /// d/dx arccos(clamp(x)): −1/√(1−x²) strictly inside, 0 outside.
    AcosGrad(usize),
    /// Second derivative field of clamped arccos (terminal: no adjoint).
    AcosGrad2(usize),
    /// Rank-2 `[M,K]·[K,N]` or rank-3 batched `[B,M,K]·[B,K,N]`.
    MatMul {
        a: usize,
        b: usize,
    },
    /// Row gather along the first axis.
    IndexSelect {
        x: usize,
        idx: Arc<Vec<usize>>,
    },
    /// Row scatter-add along the first axis into `out_rows` rows.
    SegmentSum {
        x: usize,
        idx: Arc<Vec<usize>>,
        out_rows: usize,
    },
    Reshape(usize),
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    PadZero {
        x: usize,
        axis: usize,
        before: usize,
        after: usize,
    },
    /// Expansion of size-1 axes up to the node's shape.
    Broadcast(usize),
    /// Sum over `axes`, keeping them as size-1 (shape-stable reduction).
    SumKeep {
        x: usize,
        axes: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    needs_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    /// Node ids of leaves created with `var` (differentiable).
    var_leaves: Vec<usize>,
    /// Node count right after the most recent backward finished; a second
    /// backward at the same count means no re-forward happened.
    nodes_at_last_backward: Option<usize>,
}

/// Gradients of one backward pass: a map from differentiable-leaf handles
/// to gradient tensors living on the same tape.
#[derive(Debug)]
pub struct Gradients {
    map: HashMap<usize, DTensor>,
}

impl Gradients {
    /// The gradient with respect to `t`, if `t` is a differentiable leaf
    /// of the graph that was differentiated.
    pub fn wrt(&self, t: &DTensor) -> Option<DTensor> {
        self.map.get(&t.id).cloned()
    }

    /// Number of leaves with reported gradients.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    /// True when no differentiable leaves existed.
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// An eager computation tape over scalar type `T`.
pub struct Tape<T: Scalar> {
    tape_id: u64,
    inner: RefCell<Inner<T>>,
}

/// A node's `(shape, shared value buffer, needs_grad)` as returned by
/// [`Tape::fetch`].
type Fetched<T> = (Vec<usize>, Arc<Vec<T>>, bool);

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn elem_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        s[d] = acc;
        acc *= shape[d];
    }
    s
}

/// Iterates the flat indices of `shape` in row-major order, calling
/// `f(flat, mapped)` where `mapped` advances by `strides` (entries may be
/// 0 to pin an axis, or permuted strides to transpose).
fn for_each_mapped(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let count = elem_count(shape);
    if count == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut mapped = 0usize;
    for flat in 0..count {
        f(flat, mapped);
        for d in (0..rank).rev() {
            idx[d] += 1;
            mapped += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            mapped -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Creates an empty tape.
    pub fn new() -> Self {
        Tape {
            tape_id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                var_leaves: Vec::new(),
                nodes_at_last_backward: None,
            }),
        }
    }

    /// Number of nodes currently recorded (forward + adjoint).
    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, op: Op<T>, shape: Vec<usize>, value: Vec<T>, needs_grad: bool) -> DTensor {
        debug_assert_eq!(value.len(), elem_count(&shape), "buffer/shape mismatch");
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            shape: shape.clone(),
            value: Arc::new(value),
            needs_grad,
        });
        DTensor {
            id,
            tape_id: self.tape_id,
            shape,
        }
    }

    fn fetch(&self, t: &DTensor) -> Result<Fetched<T>, TensorError> {
        let inner = self.inner.borrow();
        if t.tape_id != self.tape_id || t.id >= inner.nodes.len() {
            return Err(TensorError::CrossTape);
        }
        let node = &inner.nodes[t.id];
        Ok((node.shape.clone(), Arc::clone(&node.value), node.needs_grad))
    }

    fn handle(&self, id: usize) -> DTensor {
        let inner = self.inner.borrow();
        DTensor {
            id,
            tape_id: self.tape_id,
            shape: inner.nodes[id].shape.clone(),
        }
    }

    // ----- leaves and constants ------------------------------------------

    fn leaf(
        &self,
        shape: Vec<usize>,
        data: Vec<T>,
        needs_grad: bool,
    ) -> Result<DTensor, TensorError> {
        if data.len() != elem_count(&shape) {
            return Err(TensorError::DataLength {
                op: "leaf",
                len: data.len(),
                shape,
            });
        }
        let t = self.push(Op::Leaf, shape, data, needs_grad);
        if needs_grad {
            self.inner.borrow_mut().var_leaves.push(t.id);
        }
        Ok(t)
    }

    /// A non-differentiable input tensor.
    pub fn constant(&self, shape: &[usize], data: Vec<T>) -> Result<DTensor, TensorError> {
        self.leaf(shape.to_vec(), data, false)
    }

    /// A differentiable leaf: backward reports a gradient for it.
    pub fn var(&self, shape: &[usize], data: Vec<T>) -> Result<DTensor, TensorError> {
        self.leaf(shape.to_vec(), data, true)
    }

    /// A constant tensor filled with one value.
    pub fn full(&self, shape: &[usize], v: f64) -> DTensor {
        let data = vec![T::fr(v); elem_count(shape)];
        self.push(Op::Leaf, shape.to_vec(), data, false)
    }

    /// A constant zero tensor.
    pub fn zeros(&self, shape: &[usize]) -> DTensor {
        self.full(shape, 0.0)
    }

    /// A constant rank-0 scalar.
    pub fn scalar(&self, v: f64) -> DTensor {
        self.full(&[], v)
    }

    // ----- reading values out --------------------------------------------

    /// Copies a tensor's buffer out of the tape.
    pub fn read(&self, t: &DTensor) -> Result<Vec<T>, TensorError> {
        Ok(self.fetch(t)?.1.as_ref().clone())
    }

    /// Copies a tensor's buffer out as f64.
    pub fn read_f64(&self, t: &DTensor) -> Result<Vec<f64>, TensorError> {
        Ok(self.fetch(t)?.1.iter().map(|v| v.f64()).collect())
    }

    /// Reads a single-element tensor as f64.
    pub fn read_scalar(&self, t: &DTensor) -> Result<f64, TensorError> {
        let (shape, value, _) = self.fetch(t)?;
        if value.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape });
        }
        Ok(value[0].f64())
    }

    // ----- elementwise primitives ----------------------------------------

    fn binary_same_shape(
        &self,
        opname: &'static str,
        a: &DTensor,
        b: &DTensor,
        op: impl Fn(usize, usize) -> Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<DTensor, TensorError> {
        let (sa, va, na) = self.fetch(a)?;
        let (sb, vb, nb) = self.fetch(b)?;
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: opname,
                lhs: sa,
                rhs: sb,
            });
        }
        let out: Vec<T> = va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(op(a.id, b.id), sa, out, na || nb))
    }

    fn unary(
        &self,
        x: &DTensor,
        op: impl Fn(usize) -> Op<T>,
        needs_grad_out: Option<bool>,
        f: impl Fn(T) -> T,
    ) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        let out: Vec<T> = v.iter().map(|&x| f(x)).collect();
        Ok(self.push(op(x.id), s, out, needs_grad_out.unwrap_or(n)))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: &DTensor, b: &DTensor) -> Result<DTensor, TensorError> {
        self.binary_same_shape("add", a, b, Op::Add, |x, y| x + y)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&self, a: &DTensor, b: &DTensor) -> Result<DTensor, TensorError> {
        self.binary_same_shape("mul", a, b, Op::Mul, |x, y| x * y)
    }

    /// Elementwise difference `a − b`.
    pub fn sub(&self, a: &DTensor, b: &DTensor) -> Result<DTensor, TensorError> {
        let nb = self.neg(b)?;
        self.add(a, &nb)
    }

    /// Elementwise quotient `a / b`.
    pub fn div(&self, a: &DTensor, b: &DTensor) -> Result<DTensor, TensorError> {
        let rb = self.recip(b)?;
        self.mul(a, &rb)
    }

    /// Elementwise negation.
    pub fn neg(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::Neg, None, |v| -v)
    }

    fn scale_t(&self, x: &DTensor, s: T) -> Result<DTensor, TensorError> {
        self.unary(x, |id| Op::Scale(id, s), None, |v| v * s)
    }

    /// Multiplication by a compile-time-known scalar.
    pub fn scale(&self, x: &DTensor, s: f64) -> Result<DTensor, TensorError> {
        self.scale_t(x, T::fr(s))
    }

    fn add_scalar_t(&self, x: &DTensor, s: T) -> Result<DTensor, TensorError> {
        self.unary(x, |id| Op::AddScalar(id, s), None, |v| v + s)
    }

    /// Addition of a scalar constant to every element.
    pub fn add_scalar(&self, x: &DTensor, s: f64) -> Result<DTensor, TensorError> {
        self.add_scalar_t(x, T::fr(s))
    }

    /// Elementwise reciprocal.
    pub fn recip(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::Recip, None, |v| v.recip())
    }

    /// Elementwise square root.
    pub fn sqrt(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::Sqrt, None, |v| v.sqrt())
    }

    /// Elementwise exponential.
    pub fn exp(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::Exp, None, |v| v.exp())
    }

    /// Elementwise natural logarithm.
    pub fn log(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::Log, None, |v| v.ln())
    }

    /// Elementwise square.
    pub fn square(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.mul(x, x)
    }

    /// Rectified linear unit.
    pub fn relu(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::Relu, None, |v| v.max(T::zero()))
    }

    fn step_mask(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        // The mask is piecewise constant; it never carries gradient.
        self.unary(x, Op::StepMask, Some(false), |v| {
            if v > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Exact Gaussian-error-linear unit `0.5·x·(1 + erf(x/√2))`.
    pub fn gelu(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        let inv_sqrt2 = T::fr(std::f64::consts::FRAC_1_SQRT_2);
        let half = T::fr(0.5);
        self.unary(x, Op::Gelu, None, |v| {
            half * v * (T::one() + Scalar::erf(v * inv_sqrt2))
        })
    }

    /// Elementwise Gauss error function.
    pub fn erf(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::Erf, None, Scalar::erf)
    }

    /// `arccos` of the input clamped into [−1, 1]; the derivative is 0 in
    /// the clamped (out-of-range) region.
    pub fn clamped_acos(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::ClampedAcos, None, |v| {
            v.max(-T::one()).min(T::one()).acos()
        })
    }

    fn acos_grad(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::AcosGrad, None, |v| {
            if v > -T::one() && v < T::one() {
                -(T::one() - v * v).sqrt().recip()
            } else {
                T::zero()
            }
        })
    }

    fn acos_grad2(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        self.unary(x, Op::AcosGrad2, None, |v| {
            if v > -T::one() && v < T::one() {
                let w = T::one() - v * v;
                -v / (w * w.sqrt())
            } else {
                T::zero()
            }
        })
    }

    // ----- contractions ---------------------------------------------------

    /// Matrix product: rank-2 `[M,K]·[K,N] → [M,N]`, or rank-3 batched
    /// `[B,M,K]·[B,K,N] → [B,M,N]`.
    pub fn matmul(&self, a: &DTensor, b: &DTensor) -> Result<DTensor, TensorError> {
        let (sa, va, na) = self.fetch(a)?;
        let (sb, vb, nb) = self.fetch(b)?;
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
            return Err(mismatch());
        }
        let (batch, m, k) = if sa.len() == 2 {
            (1, sa[0], sa[1])
        } else {
            (sa[0], sa[1], sa[2])
        };
        let (batch_b, k2, n) = if sb.len() == 2 {
            (1, sb[0], sb[1])
        } else {
            (sb[0], sb[1], sb[2])
        };
        if batch != batch_b || k != k2 {
            return Err(mismatch());
        }
        let out_shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let mut out = vec![T::zero(); batch * m * n];
        if m > 0 && n > 0 && k > 0 {
            for bi in 0..batch {
                // Row-major contiguous panels; output is freshly zeroed.
                unsafe {
                    T::gemm(
                        m,
                        k,
                        n,
                        T::one(),
                        va.as_ptr().add(bi * m * k),
                        k as isize,
                        1,
                        vb.as_ptr().add(bi * k * n),
                        n as isize,
                        1,
                        T::zero(),
                        out.as_mut_ptr().add(bi * m * n),
                        n as isize,
                        1,
                    );
                }
            }
        }
        Ok(self.push(Op::MatMul { a: a.id, b: b.id }, out_shape, out, na || nb))
    }

    /// Contraction of one axis of `a` against one axis of `b`, producing
    /// the outer arrangement `[rest-of-a..., rest-of-b...]`.
    pub fn contract_axis(
        &self,
        a: &DTensor,
        axis_a: usize,
        b: &DTensor,
        axis_b: usize,
    ) -> Result<DTensor, TensorError> {
        let sa = a.shape().to_vec();
        let sb = b.shape().to_vec();
        if axis_a >= sa.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "contract_axis",
                axis: axis_a,
                rank: sa.len(),
            });
        }
        if axis_b >= sb.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "contract_axis",
                axis: axis_b,
                rank: sb.len(),
            });
        }
        if sa[axis_a] != sb[axis_b] {
            return Err(TensorError::ShapeMismatch {
                op: "contract_axis",
                lhs: sa,
                rhs: sb,
            });
        }
        // Move the contracted axis of `a` last and of `b` first, flatten,
        // multiply, restore.
        let mut perm_a: Vec<usize> = (0..sa.len()).filter(|&d| d != axis_a).collect();
        perm_a.push(axis_a);
        let mut perm_b: Vec<usize> = vec![axis_b];
        perm_b.extend((0..sb.len()).filter(|&d| d != axis_b));
        let rest_a: Vec<usize> = perm_a[..sa.len() - 1].iter().map(|&d| sa[d]).collect();
        let rest_b: Vec<usize> = perm_b[1..].iter().map(|&d| sb[d]).collect();
        let s = sa[axis_a];
        let pa = self.permute(a, &perm_a)?;
        let pb = self.permute(b, &perm_b)?;
        let fa = self.reshape(&pa, &[elem_count(&rest_a), s])?;
        let fb = self.reshape(&pb, &[s, elem_count(&rest_b)])?;
        let prod = self.matmul(&fa, &fb)?;
        let mut out_shape = rest_a;
        out_shape.extend(rest_b);
        self.reshape(&prod, &out_shape)
    }

    // ----- gather / scatter ----------------------------------------------

    /// Gathers rows (first-axis slices) of `x` at the given indices.
    pub fn index_select(&self, x: &DTensor, idx: &[usize]) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        if s.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "index_select",
                shape: s,
                reason: "rank must be at least 1".into(),
            });
        }
        let rows = s[0];
        let row_len: usize = s[1..].iter().product();
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "index_select",
                    index: i,
                    rows,
                });
            }
        }
        let mut out = Vec::with_capacity(idx.len() * row_len);
        for &i in idx {
            out.extend_from_slice(&v[i * row_len..(i + 1) * row_len]);
        }
        let mut out_shape = vec![idx.len()];
        out_shape.extend_from_slice(&s[1..]);
        Ok(self.push(
            Op::IndexSelect {
                x: x.id,
                idx: Arc::new(idx.to_vec()),
            },
            out_shape,
            out,
            n,
        ))
    }

    /// Scatter-adds rows of `x` into `out_rows` rows: row r of `x` is
    /// added to output row `idx[r]`. The adjoint of [`Tape::index_select`].
    pub fn segment_sum(
        &self,
        x: &DTensor,
        idx: &[usize],
        out_rows: usize,
    ) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        if s.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "segment_sum",
                shape: s,
                reason: "rank must be at least 1".into(),
            });
        }
        let rows = s[0];
        if idx.len() != rows {
            return Err(TensorError::InvalidShape {
                op: "segment_sum",
                shape: s,
                reason: format!("{} indices for {} rows", idx.len(), rows),
            });
        }
        for &i in idx {
            if i >= out_rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_sum",
                    index: i,
                    rows: out_rows,
                });
            }
        }
        let row_len: usize = s[1..].iter().product();
        let mut out = vec![T::zero(); out_rows * row_len];
        for (r, &i) in idx.iter().enumerate() {
            let src = &v[r * row_len..(r + 1) * row_len];
            let dst = &mut out[i * row_len..(i + 1) * row_len];
            for (d, &sv) in dst.iter_mut().zip(src) {
                *d = *d + sv;
            }
        }
        let mut out_shape = vec![out_rows];
        out_shape.extend_from_slice(&s[1..]);
        Ok(self.push(
            Op::SegmentSum {
                x: x.id,
                idx: Arc::new(idx.to_vec()),
                out_rows,
            },
            out_shape,
            out,
            n,
        ))
    }

    // ----- shape manipulation --------------------------------------------

    /// Reinterprets the buffer under a new shape of equal element count.
    pub fn reshape(&self, x: &DTensor, shape: &[usize]) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        if elem_count(&s) != elem_count(shape) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: s,
                rhs: shape.to_vec(),
            });
        }
        // Same buffer, new shape: cheap Arc clone, no copy.
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op: Op::Reshape(x.id),
            shape: shape.to_vec(),
            value: v,
            needs_grad: n,
        });
        Ok(DTensor {
            id,
            tape_id: self.tape_id,
            shape: shape.to_vec(),
        })
    }

    /// Permutes axes: output axis d draws from input axis `perm[d]`.
    pub fn permute(&self, x: &DTensor, perm: &[usize]) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        let rank = s.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&d| d >= rank || std::mem::replace(&mut seen[d], true))
        {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape: s,
                reason: format!("{perm:?} is not a permutation of the axes"),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&d| s[d]).collect();
        let src_strides = strides_of(&s);
        let mapped: Vec<usize> = perm.iter().map(|&d| src_strides[d]).collect();
        let mut out = vec![T::zero(); elem_count(&out_shape)];
        for_each_mapped(&out_shape, &mapped, |flat, src| out[flat] = v[src]);
        Ok(self.push(
            Op::Permute {
                x: x.id,
                perm: perm.to_vec(),
            },
            out_shape,
            out,
            n,
        ))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[&DTensor], axis: usize) -> Result<DTensor, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "needs at least one input".into(),
            });
        }
        let fetched: Vec<_> = xs.iter().map(|x| self.fetch(x)).collect::<Result<_, _>>()?;
        let rank = fetched[0].0.len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                rank,
            });
        }
        for (s, _, _) in &fetched {
            let compatible = s.len() == rank
                && s.iter()
                    .zip(&fetched[0].0)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: fetched[0].0.clone(),
                    rhs: s.clone(),
                });
            }
        }
        let total_axis: usize = fetched.iter().map(|(s, _, _)| s[axis]).sum();
        let mut out_shape = fetched[0].0.clone();
        out_shape[axis] = total_axis;
        let outer: usize = out_shape[..axis].iter().product();
        let inner_len: usize = out_shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(elem_count(&out_shape));
        for o in 0..outer {
            for (s, v, _) in &fetched {
                let block = s[axis] * inner_len;
                out.extend_from_slice(&v[o * block..(o + 1) * block]);
            }
        }
        let needs = fetched.iter().any(|(_, _, n)| *n);
        Ok(self.push(
            Op::Concat {
                xs: xs.iter().map(|x| x.id).collect(),
                axis,
            },
            out_shape,
            out,
            needs,
        ))
    }

    /// Takes `len` entries of `axis` starting at `start`.
    pub fn slice(
        &self,
        x: &DTensor,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        if axis >= s.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "slice",
                axis,
                rank: s.len(),
            });
        }
        if start + len > s[axis] {
            return Err(TensorError::InvalidShape {
                op: "slice",
                shape: s,
                reason: format!("range {start}..{} exceeds axis extent", start + len),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner_len: usize = s[axis + 1..].iter().product();
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let mut out = Vec::with_capacity(elem_count(&out_shape));
        let src_block = s[axis] * inner_len;
        for o in 0..outer {
            let base = o * src_block + start * inner_len;
            out.extend_from_slice(&v[base..base + len * inner_len]);
        }
        Ok(self.push(
            Op::Slice {
                x: x.id,
                axis,
                start,
            },
            out_shape,
            out,
            n,
        ))
    }

    /// Pads `axis` with `before` leading and `after` trailing zeros.
    pub fn pad_zero(
        &self,
        x: &DTensor,
        axis: usize,
        before: usize,
        after: usize,
    ) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        if axis >= s.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "pad_zero",
                axis,
                rank: s.len(),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner_len: usize = s[axis + 1..].iter().product();
        let mut out_shape = s.clone();
        out_shape[axis] += before + after;
        let src_block = s[axis] * inner_len;
        let dst_block = out_shape[axis] * inner_len;
        let mut out = vec![T::zero(); elem_count(&out_shape)];
        for o in 0..outer {
            let src = &v[o * src_block..(o + 1) * src_block];
            let dst_base = o * dst_block + before * inner_len;
            out[dst_base..dst_base + src_block].copy_from_slice(src);
        }
        Ok(self.push(
            Op::PadZero {
                x: x.id,
                axis,
                before,
                after,
            },
            out_shape,
            out,
            n,
        ))
    }

    /// Expands size-1 axes of `x` to match `shape` (ranks must agree).
    pub fn broadcast(&self, x: &DTensor, shape: &[usize]) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        let compatible =
            s.len() == shape.len() && s.iter().zip(shape).all(|(&a, &b)| a == b || a == 1);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                lhs: s,
                rhs: shape.to_vec(),
            });
        }
        if s == shape {
            // Degenerate broadcast: keep a node for a uniform graph shape.
            let out = v.as_ref().clone();
            return Ok(self.push(Op::Broadcast(x.id), s, out, n));
        }
        let src_strides = strides_of(&s);
        let mapped: Vec<usize> = s
            .iter()
            .zip(shape)
            .zip(&src_strides)
            .map(|((&a, &b), &st)| if a == b { st } else { 0 })
            .collect();
        let mut out = vec![T::zero(); elem_count(shape)];
        for_each_mapped(shape, &mapped, |flat, src| out[flat] = v[src]);
        Ok(self.push(Op::Broadcast(x.id), shape.to_vec(), out, n))
    }

    // ----- reductions -----------------------------------------------------

    /// Sums over `axes`, keeping them as size-1 axes.
    pub fn sum_keep(&self, x: &DTensor, axes: &[usize]) -> Result<DTensor, TensorError> {
        let (s, v, n) = self.fetch(x)?;
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        for &a in &axes {
            if a >= s.len() {
                return Err(TensorError::AxisOutOfRange {
                    op: "sum_keep",
                    axis: a,
                    rank: s.len(),
                });
            }
        }
        let mut out_shape = s.clone();
        for &a in &axes {
            out_shape[a] = 1;
        }
        let out_strides = strides_of(&out_shape);
        let mapped: Vec<usize> = (0..s.len())
            .map(|d| if axes.contains(&d) { 0 } else { out_strides[d] })
            .collect();
        let mut out = vec![T::zero(); elem_count(&out_shape)];
        for_each_mapped(&s, &mapped, |flat, dst| out[dst] = out[dst] + v[flat]);
        Ok(self.push(Op::SumKeep { x: x.id, axes }, out_shape, out, n))
    }

    /// Sums over `axes` and drops them from the shape.
    pub fn sum_axes(&self, x: &DTensor, axes: &[usize]) -> Result<DTensor, TensorError> {
        let kept = self.sum_keep(x, axes)?;
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        let out_shape: Vec<usize> = kept
            .shape()
            .iter()
            .enumerate()
            .filter(|(d, _)| !axes.contains(d))
            .map(|(_, &e)| e)
            .collect();
        self.reshape(&kept, &out_shape)
    }

    /// Sums all elements into a rank-0 scalar.
    pub fn sum_all(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        let all: Vec<usize> = (0..x.rank()).collect();
        let kept = self.sum_keep(x, &all)?;
        self.reshape(&kept, &[])
    }

    /// Means over `axes`, keeping them as size-1 axes.
    pub fn mean_keep(&self, x: &DTensor, axes: &[usize]) -> Result<DTensor, TensorError> {
        let count: usize = {
            let s = x.shape();
            let mut axes = axes.to_vec();
            axes.sort_unstable();
            axes.dedup();
            axes.iter()
                .map(|&a| s.get(a).copied().unwrap_or(0))
                .product()
        };
        if count == 0 {
            return Err(TensorError::InvalidShape {
                op: "mean_keep",
                shape: x.shape().to_vec(),
                reason: "mean over zero elements".into(),
            });
        }
        let summed = self.sum_keep(x, axes)?;
        self.scale(&summed, 1.0 / count as f64)
    }

    /// Mean of all elements as a rank-0 scalar.
    pub fn mean_all(&self, x: &DTensor) -> Result<DTensor, TensorError> {
        let count = x.elem_count();
        if count == 0 {
            return Err(TensorError::InvalidShape {
                op: "mean_all",
                shape: x.shape().to_vec(),
                reason: "mean over zero elements".into(),
            });
        }
        let s = self.sum_all(x)?;
        self.scale(&s, 1.0 / count as f64)
    }

    // ----- composites used across the crate ------------------------------

    /// Affine map `x·w + b` for `x: [M, K]`, `w: [K, N]`, `b: [N]`.
    pub fn linear(
        &self,
        x: &DTensor,
        w: &DTensor,
        b: Option<&DTensor>,
    ) -> Result<DTensor, TensorError> {
        let y = self.matmul(x, w)?;
        match b {
            None => Ok(y),
            Some(b) => {
                let n = y.shape()[y.rank() - 1];
                let b2 = self.reshape(b, &[1, n])?;
                let bb = self.broadcast(&b2, y.shape())?;
                self.add(&y, &bb)
            }
        }
    }

    /// Layer normalization over the last axis with learnable `gamma` and
    /// `beta` (both shaped `[C]` where C is the last extent).
    pub fn layer_norm(
        &self,
        x: &DTensor,
        gamma: &DTensor,
        beta: &DTensor,
        eps: f64,
    ) -> Result<DTensor, TensorError> {
        let rank = x.rank();
        if rank == 0 {
            return Err(TensorError::InvalidShape {
                op: "layer_norm",
                shape: x.shape().to_vec(),
                reason: "rank must be at least 1".into(),
            });
        }
        let c = x.shape()[rank - 1];
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let last = [rank - 1];
        let m = self.mean_keep(x, &last)?;
        let mb = self.broadcast(&m, x.shape())?;
        let d = self.sub(x, &mb)?;
        let var = self.mean_keep(&self.square(&d)?, &last)?;
        let std = self.sqrt(&self.add_scalar(&var, eps)?)?;
        let inv = self.broadcast(&self.recip(&std)?, x.shape())?;
        let y = self.mul(&d, &inv)?;
        let mut unit_shape = vec![1; rank];
        unit_shape[rank - 1] = c;
        let g = self.broadcast(&self.reshape(gamma, &unit_shape)?, x.shape())?;
        let b = self.broadcast(&self.reshape(beta, &unit_shape)?, x.shape())?;
        let scaled = self.mul(&y, &g)?;
        self.add(&scaled, &b)
    }

    // ----- backward -------------------------------------------------------

    /// Reverse-mode differentiation of a scalar `loss`: extends the tape
    /// with gradient nodes and returns the gradients of every
    /// differentiable leaf (zeros for leaves the loss does not reach).
    ///
    /// Calling backward again without adding new forward nodes is an
    /// error; gradients of gradient-dependent losses are supported by
    /// building the new loss from the returned gradient tensors and
    /// calling backward on it.
    pub fn backward(&self, loss: &DTensor) -> Result<Gradients, TensorError> {
        let (loss_shape, _, _) = self.fetch(loss)?;
        if elem_count(&loss_shape) != 1 {
            return Err(TensorError::NonScalarLoss { shape: loss_shape });
        }
        let n_nodes = {
            let inner = self.inner.borrow();
            if inner.nodes_at_last_backward == Some(inner.nodes.len()) {
                return Err(TensorError::BackwardTwice);
            }
            inner.nodes.len()
        };
        let mut grad: Vec<Option<DTensor>> = vec![None; n_nodes];
        grad[loss.id] = Some(self.full(&loss_shape, 1.0));

        for id in (0..n_nodes).rev() {
            let Some(g) = grad[id].clone() else { continue };
            let (op, needs) = {
                let inner = self.inner.borrow();
                (inner.nodes[id].op.clone(), inner.nodes[id].needs_grad)
            };
            if !needs {
                continue;
            }
            self.push_adjoints(id, &op, &g, &mut grad)?;
        }

        let var_leaves = self.inner.borrow().var_leaves.clone();
        let mut map = HashMap::new();
        for leaf in var_leaves {
            let gt = match grad.get(leaf).cloned().flatten() {
                Some(t) => t,
                None => {
                    let shape = self.handle(leaf).shape().to_vec();
                    self.zeros(&shape)
                }
            };
            map.insert(leaf, gt);
        }
        let mut inner = self.inner.borrow_mut();
        inner.nodes_at_last_backward = Some(inner.nodes.len());
        Ok(Gradients { map })
    }

    fn needs(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].needs_grad
    }

    fn acc(
        &self,
        grad: &mut [Option<DTensor>],
        input: usize,
        contrib: DTensor,
    ) -> Result<(), TensorError> {
        if !self.needs(input) {
            return Ok(());
        }
        grad[input] = Some(match grad[input].take() {
            None => contrib,
            Some(prev) => self.add(&prev, &contrib)?,
        });
        Ok(())
    }

    /// Builds the adjoint nodes of one operation and accumulates them into
    /// the gradient slots of its inputs.
    fn push_adjoints(
        &self,
        out_id: usize,
        op: &Op<T>,
        g: &DTensor,
        grad: &mut [Option<DTensor>],
    ) -> Result<(), TensorError> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grad, *a, g.clone())?;
                self.acc(grad, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let hb = self.handle(*b);
                    let c = self.mul(g, &hb)?;
                    self.acc(grad, *a, c)?;
                }
                if self.needs(*b) {
                    let ha = self.handle(*a);
                    let c = self.mul(g, &ha)?;
                    self.acc(grad, *b, c)?;
                }
            }
            Op::Neg(x) => {
                let c = self.neg(g)?;
                self.acc(grad, *x, c)?;
            }
            Op::Scale(x, s) => {
                let c = self.scale_t(g, *s)?;
                self.acc(grad, *x, c)?;
            }
            Op::AddScalar(x, _) => {
                self.acc(grad, *x, g.clone())?;
            }
            Op::Recip(x) => {
                // d(1/x) = −y² where y is this node's value.
                let y = self.handle(out_id);
                let c = self.neg(&self.mul(g, &self.square(&y)?)?)?;
                self.acc(grad, *x, c)?;
            }
            Op::Sqrt(x) => {
                // d√x = 1/(2y).
                let y = self.handle(out_id);
                let c = self.mul(g, &self.scale(&self.recip(&y)?, 0.5)?)?;
                self.acc(grad, *x, c)?;
            }
            Op::Exp(x) => {
                let y = self.handle(out_id);
                let c = self.mul(g, &y)?;
                self.acc(grad, *x, c)?;
            }
            Op::Log(x) => {
                let hx = self.handle(*x);
                let c = self.mul(g, &self.recip(&hx)?)?;
                self.acc(grad, *x, c)?;
            }
            Op::Relu(x) => {
                let hx = self.handle(*x);
                let c = self.mul(g, &self.step_mask(&hx)?)?;
                self.acc(grad, *x, c)?;
            }
            Op::StepMask(_) => {
                // Piecewise constant: zero derivative almost everywhere.
            }
            Op::Gelu(x) => {
                let hx = self.handle(*x);
                let cdf = self.scale(
                    &self.add_scalar(
                        &self.erf(&self.scale(&hx, std::f64::consts::FRAC_1_SQRT_2)?)?,
                        1.0,
                    )?,
                    0.5,
                )?;
                let pdf = self.scale(
                    &self.exp(&self.scale(&self.square(&hx)?, -0.5)?)?,
                    1.0 / (2.0 * std::f64::consts::PI).sqrt(),
                )?;
                let der = self.add(&cdf, &self.mul(&hx, &pdf)?)?;
                let c = self.mul(g, &der)?;
                self.acc(grad, *x, c)?;
            }
            Op::Erf(x) => {
                let hx = self.handle(*x);
                let der = self.scale(
                    &self.exp(&self.neg(&self.square(&hx)?)?)?,
                    2.0 / std::f64::consts::PI.sqrt(),
                )?;
                let c = self.mul(g, &der)?;
                self.acc(grad, *x, c)?;
            }
            Op::ClampedAcos(x) => {
                let hx = self.handle(*x);
                let c = self.mul(g, &self.acos_grad(&hx)?)?;
                self.acc(grad, *x, c)?;
            }
            Op::AcosGrad(x) => {
                let hx = self.handle(*x);
                let c = self.mul(g, &self.acos_grad2(&hx)?)?;
                self.acc(grad, *x, c)?;
            }
            Op::AcosGrad2(_) => {
                return Err(TensorError::HigherOrderUnsupported(
                    "third derivative of clamped_acos",
                ));
            }
            Op::MatMul { a, b } => {
                let ha = self.handle(*a);
                let hb = self.handle(*b);
                let swap: Vec<usize> = if ha.rank() == 2 {
                    vec![1, 0]
                } else {
                    vec![0, 2, 1]
                };
                if self.needs(*a) {
                    let bt = self.permute(&hb, &swap)?;
                    let c = self.matmul(g, &bt)?;
                    self.acc(grad, *a, c)?;
                }
                if self.needs(*b) {
                    let at = self.permute(&ha, &swap)?;
                    let c = self.matmul(&at, g)?;
                    self.acc(grad, *b, c)?;
                }
            }
            Op::IndexSelect { x, idx } => {
                let rows = self.handle(*x).shape()[0];
                let c = self.segment_sum(g, idx, rows)?;
                self.acc(grad, *x, c)?;
            }
            Op::SegmentSum { x, idx, .. } => {
                let c = self.index_select(g, idx)?;
                self.acc(grad, *x, c)?;
            }
            Op::Reshape(x) => {
                let shape = self.handle(*x).shape().to_vec();
                let c = self.reshape(g, &shape)?;
                self.acc(grad, *x, c)?;
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0usize; perm.len()];
                for (d, &p) in perm.iter().enumerate() {
                    inv[p] = d;
                }
                let c = self.permute(g, &inv)?;
                self.acc(grad, *x, c)?;
            }
            Op::Concat { xs, axis } => {
                let mut offset = 0;
                for &x in xs {
                    let ext = self.handle(x).shape()[*axis];
                    let c = self.slice(g, *axis, offset, ext)?;
                    self.acc(grad, x, c)?;
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let src_ext = self.handle(*x).shape()[*axis];
                let out_ext = self.handle(out_id).shape()[*axis];
                let c = self.pad_zero(g, *axis, *start, src_ext - start - out_ext)?;
                self.acc(grad, *x, c)?;
            }
            Op::PadZero {
                x, axis, before, ..
            } => {
                let src_ext = self.handle(*x).shape()[*axis];
                let c = self.slice(g, *axis, *before, src_ext)?;
                self.acc(grad, *x, c)?;
            }
            Op::Broadcast(x) => {
                let in_shape = self.handle(*x).shape().to_vec();
                let out_shape = self.handle(out_id).shape().to_vec();
                let axes: Vec<usize> = in_shape
                    .iter()
                    .zip(&out_shape)
                    .enumerate()
                    .filter(|(_, (&a, &b))| a == 1 && b != 1)
                    .map(|(d, _)| d)
                    .collect();
                let c = if axes.is_empty() {
                    g.clone()
                } else {
                    self.sum_keep(g, &axes)?
                };
                self.acc(grad, *x, c)?;
            }
            Op::SumKeep { x, .. } => {
                let in_shape = self.handle(*x).shape().to_vec();
                let c = self.broadcast(g, &in_shape)?;
                self.acc(grad, *x, c)?;
            }
        }
        Ok(())
    }
}
