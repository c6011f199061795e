//! Rigid-motion geometry for n ∈ {2, 3}: rotations, roto-translations, and
//! the points they act on.
//!
//! Three kinds of points appear throughout the crate, collected in
//! [`HPoint`]:
//!
//! * bare positions `p ∈ ℝⁿ`,
//! * position–orientation tuples `(p, o)` with `o` a unit vector,
//! * full poses `(p, R)` with `R` a rotation.
//!
//! A rigid motion `g = (x, R)` acts by `g·p = R p + x`, rotating the
//! orientation/rotation part alongside. The composition law is
//! `(x, R)(x′, R′) = (R x′ + x, R R′)`.
//!
//! Everything here is pure double-precision math on immutable values; RNG
//! state is owned by the caller. Matrix logarithms/exponentials and a
//! quaternion API are deliberately out of scope.

use rand::Rng;

use crate::tolerances::{EPS_ROTATION, EPS_UNIT};

/// Errors from geometric constructions and group operations.
#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    /// Two operands live in different dimensions.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// A vector that must lie on the unit sphere does not.
    #[error("vector is not unit length: |norm - 1| = {deviation:.3e}")]
    NotUnit { deviation: f64 },
    /// A matrix that must be a rotation fails orthogonality or orientation.
    #[error("not a rotation matrix: {reason} (deviation {deviation:.3e})")]
    NotARotation {
        reason: &'static str,
        deviation: f64,
    },
    /// Dimension outside the supported set {2, 3}.
    #[error("unsupported dimension {0}; only 2 and 3 are implemented")]
    UnsupportedDimension(usize),
}

/// A rotation matrix in SO(n), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    n: usize,
    m: Vec<f64>,
}

impl Rotation {
    /// The identity rotation in dimension `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        Rotation { n, m }
    }

    /// Builds a rotation from row-major entries, validating orthogonality
    /// (`‖RᵀR − I‖_max ≤ 1e-10`) and `det R = 1 ± 1e-10`.
    pub fn from_entries(n: usize, entries: &[f64]) -> Result<Self, GeometryError> {
        if entries.len() != n * n {
            return Err(GeometryError::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        let r = Rotation {
            n,
            m: entries.to_vec(),
        };
        let mut ortho_dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut dot = 0.0;
                for k in 0..n {
                    dot += r.m[k * n + i] * r.m[k * n + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                ortho_dev = ortho_dev.max((dot - target).abs());
            }
        }
        if ortho_dev > EPS_ROTATION {
            return Err(GeometryError::NotARotation {
                reason: "columns are not orthonormal",
                deviation: ortho_dev,
            });
        }
        let det_dev = (r.det() - 1.0).abs();
        if det_dev > EPS_ROTATION {
            return Err(GeometryError::NotARotation {
                reason: "determinant is not +1",
                deviation: det_dev,
            });
        }
        Ok(r)
    }

    /// The planar rotation by `theta` radians (counter-clockwise).
    pub fn planar(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Rotation {
            n: 2,
            m: vec![c, -s, s, c],
        }
    }

    /// The 3-D rotation by `angle` radians about a unit `axis`
    /// (right-handed), via the axis-angle (Rodrigues) formula.
    pub fn about_axis(axis: [f64; 3], angle: f64) -> Self {
        let [x, y, z] = axis;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Rotation {
            n: 3,
            m: vec![
                t * x * x + c,
                t * x * y - s * z,
                t * x * z + s * y,
                t * x * y + s * z,
                t * y * y + c,
                t * y * z - s * x,
                t * x * z - s * y,
                t * y * z + s * x,
                t * z * z + c,
            ],
        }
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.m
    }

    /// Entry at `(row, col)`.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.m[row * self.n + col]
    }

    /// Determinant.
    pub fn det(&self) -> f64 {
        match self.n {
            2 => self.m[0] * self.m[3] - self.m[1] * self.m[2],
            3 => {
                let m = &self.m;
                m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                    + m[2] * (m[3] * m[7] - m[4] * m[6])
            }
            _ => unreachable!("rotations are only constructed in dimensions 2 and 3"),
        }
    }

    /// Applies the rotation to a vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n);
        self.m.chunks_exact(self.n).map(|row| dot(row, v)).collect()
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Rotation) -> Result<Rotation, GeometryError> {
        if self.n != other.n {
            return Err(GeometryError::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.m[i * n + k] * other.m[k * n + j];
                }
                m[i * n + j] = acc;
            }
        }
        Ok(Rotation { n, m })
    }

    /// The inverse rotation (transpose).
    pub fn inverse(&self) -> Rotation {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.m[j * n + i];
            }
        }
        Rotation { n, m }
    }

    /// Max-norm distance to another rotation's entries.
    pub fn max_abs_diff(&self, other: &Rotation) -> f64 {
        self.m
            .iter()
            .zip(&other.m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A rigid motion `g = (x, R)`: rotate by `R`, then translate by `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidMotion {
    /// Translation part, length n.
    pub translation: Vec<f64>,
    /// Rotation part.
    pub rotation: Rotation,
}

impl RigidMotion {
    /// The identity motion in dimension `n`.
    pub fn identity(n: usize) -> Self {
        RigidMotion {
            translation: vec![0.0; n],
            rotation: Rotation::identity(n),
        }
    }

    /// Builds a motion from parts, checking that dimensions agree.
    pub fn new(translation: Vec<f64>, rotation: Rotation) -> Result<Self, GeometryError> {
        if translation.len() != rotation.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: rotation.dim(),
                got: translation.len(),
            });
        }
        Ok(RigidMotion {
            translation,
            rotation,
        })
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        self.rotation.dim()
    }

    /// The inverse motion `g⁻¹ = (−R⁻¹x, R⁻¹)`.
    pub fn inverse(&self) -> RigidMotion {
        let rinv = self.rotation.inverse();
        let mut t = rinv.apply(&self.translation);
        for v in &mut t {
            *v = -*v;
        }
        RigidMotion {
            translation: t,
            rotation: rinv,
        }
    }
}

/// A point of one of the homogeneous spaces a rigid motion acts on.
#[derive(Debug, Clone, PartialEq)]
pub enum HPoint {
    /// A bare position in ℝⁿ.
    PosOnly(Vec<f64>),
    /// A position with a unit orientation vector.
    PosOri { p: Vec<f64>, o: Vec<f64> },
    /// A position with a full rotation (a pose).
    Pose { p: Vec<f64>, r: Rotation },
}

impl HPoint {
    /// A position–orientation point, validating `‖o‖ = 1 ± 1e-10`.
    pub fn pos_ori(p: Vec<f64>, o: Vec<f64>) -> Result<Self, GeometryError> {
        if p.len() != o.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: p.len(),
                got: o.len(),
            });
        }
        let deviation = (norm(&o) - 1.0).abs();
        if deviation > EPS_UNIT {
            return Err(GeometryError::NotUnit { deviation });
        }
        Ok(HPoint::PosOri { p, o })
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        match self {
            HPoint::PosOnly(p) => p.len(),
            HPoint::PosOri { p, .. } => p.len(),
            HPoint::Pose { p, .. } => p.len(),
        }
    }

    /// The position component.
    pub fn position(&self) -> &[f64] {
        match self {
            HPoint::PosOnly(p) => p,
            HPoint::PosOri { p, .. } => p,
            HPoint::Pose { p, .. } => p,
        }
    }
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `arccos` with the argument clamped to [−1, 1], guarding float drift at
/// |dot| ≈ 1.
pub fn clamped_acos(x: f64) -> f64 {
    x.clamp(-1.0, 1.0).acos()
}

/// Group composition `(x, R)(x′, R′) = (R x′ + x, R R′)`.
pub fn compose(g: &RigidMotion, h: &RigidMotion) -> Result<RigidMotion, GeometryError> {
    if g.dim() != h.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: g.dim(),
            got: h.dim(),
        });
    }
    let mut t = g.rotation.apply(&h.translation);
    for (ti, gi) in t.iter_mut().zip(&g.translation) {
        *ti += gi;
    }
    Ok(RigidMotion {
        translation: t,
        rotation: g.rotation.compose(&h.rotation)?,
    })
}

/// Action of a rigid motion on a point: positions map to `R p + x`,
/// orientations to `R o`, pose rotations to `R R′`.
pub fn act(g: &RigidMotion, x: &HPoint) -> Result<HPoint, GeometryError> {
    if g.dim() != x.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: g.dim(),
            got: x.dim(),
        });
    }
    let move_p = |p: &[f64]| -> Vec<f64> {
        let mut q = g.rotation.apply(p);
        for (qi, ti) in q.iter_mut().zip(&g.translation) {
            *qi += ti;
        }
        q
    };
    Ok(match x {
        HPoint::PosOnly(p) => HPoint::PosOnly(move_p(p)),
        HPoint::PosOri { p, o } => HPoint::PosOri {
            p: move_p(p),
            o: g.rotation.apply(o),
        },
        HPoint::Pose { p, r } => HPoint::Pose {
            p: move_p(p),
            r: g.rotation.compose(r)?,
        },
    })
}

/// The reference axis mapped onto orientations: `e_z` in 3-D, `e_x` in 2-D.
pub fn reference_axis(n: usize) -> Result<Vec<f64>, GeometryError> {
    match n {
        2 => Ok(vec![1.0, 0.0]),
        3 => Ok(vec![0.0, 0.0, 1.0]),
        other => Err(GeometryError::UnsupportedDimension(other)),
    }
}

/// A rotation carrying the reference axis onto the unit vector `o`.
///
/// In 3-D this is the axis-angle rotation about `e_z × o` by
/// `arccos(e_z · o)`; at the antipode `o = −e_z`, where the axis is
/// undefined, the documented choice is the rotation by π about the x-axis,
/// `diag(1, −1, −1)`. In 2-D it is the planar rotation by `atan2(o_y, o_x)`.
///
/// The choice of rotation is one representative among many (anything composed
/// with a rotation about `o` also works); every invariant attribute built on
/// it is independent of the choice.
pub fn rotation_from_orientation(o: &[f64]) -> Result<Rotation, GeometryError> {
    let deviation = (norm(o) - 1.0).abs();
    if deviation > 1e-8 {
        return Err(GeometryError::NotUnit { deviation });
    }
    match o.len() {
        2 => Ok(Rotation::planar(o[1].atan2(o[0]))),
        3 => {
            // axis = e_z × o, ‖axis‖ = sin(angle to e_z)
            let axis = [-o[1], o[0], 0.0];
            let axis_norm = norm(&axis);
            if axis_norm < 1e-12 {
                return Ok(if o[2] > 0.0 {
                    Rotation::identity(3)
                } else {
                    // Antipode: rotate by π about the x-axis.
                    Rotation {
                        n: 3,
                        m: vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0],
                    }
                });
            }
            let axis = [axis[0] / axis_norm, axis[1] / axis_norm, 0.0];
            Ok(Rotation::about_axis(axis, clamped_acos(o[2])))
        }
        other => Err(GeometryError::UnsupportedDimension(other)),
    }
}

/// A Haar-uniform random rotation: in 2-D an angle uniform on [0, 2π); in
/// 3-D the rotation of a unit quaternion with four i.i.d. Gaussian
/// components. Deterministic given the caller's RNG state.
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Rotation, GeometryError> {
    match n {
        2 => {
            let theta: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
            Ok(Rotation::planar(theta))
        }
        3 => {
            use rand_distr::StandardNormal;
            let mut q = [0.0f64; 4];
            loop {
                for v in &mut q {
                    *v = rng.sample(StandardNormal);
                }
                let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                if qn > 1e-12 {
                    for v in &mut q {
                        *v /= qn;
                    }
                    break;
                }
            }
            let [w, x, y, z] = q;
            Ok(Rotation {
                n: 3,
                m: vec![
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            })
        }
        other => Err(GeometryError::UnsupportedDimension(other)),
    }
}

/// A random rigid motion with rotation Haar-uniform and translation
/// coordinates uniform on [−scale, scale]. Test/audit utility.
pub fn random_motion<R: Rng + ?Sized>(
    n: usize,
    scale: f64,
    rng: &mut R,
) -> Result<RigidMotion, GeometryError> {
    let rotation = random_rotation(n, rng)?;
    let translation = (0..n)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
        .collect();
    Ok(RigidMotion {
        translation,
        rotation,
    })
}

/// A random point on the unit sphere Sⁿ⁻¹ (uniform). Test/audit utility.
pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let vn = norm(&v);
        if vn > 1e-9 {
            return v.into_iter().map(|x| x / vn).collect();
        }
    }
}
