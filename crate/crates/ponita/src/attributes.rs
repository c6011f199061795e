//! Invariant attributes of point pairs: the quantities convolution kernels
//! are conditioned on.
//!
//! For each homogeneous space, a pair `(x_i, x_j)` is mapped to a vector of
//! numbers that (a) is invariant under applying any rigid motion to both
//! points and (b) identifies the pair's equivalence class, witnessed by an
//! inverse construction ([`representative_from_attr`]) that rebuilds a
//! canonical pair `(x₀, rep)` with the same attribute. Conditioning kernels
//! on these attributes is what turns plain message passing into an exactly
//! equivariant group convolution.
//!
//! The five maps:
//!
//! * ℝⁿ: `‖p_j − p_i‖` — one number, isotropic.
//! * ℝ²×S¹: `(R_{o_i}⁻¹(p_j − p_i), θ)` with θ the *signed* relative angle
//!   in (−π, π]. The magnitude |θ| equals the arccos form; the sign is kept
//!   because the trivial stabilizer makes the full angle recoverable, and
//!   the inverse construction needs it.
//! * ℝ³×S²: `(a, b, c)` = (component of `Δp` along `o_i`, norm of the
//!   orthogonal rest, angle between orientations).
//! * SE(2): as ℝ²×S¹ with the pose's own rotation in place of `R_{o_i}`.
//! * SE(3): the relative pose `g_i⁻¹ g_j`, flattened to 12 numbers.
//!
//! `b` is always computed as the norm of the explicit orthogonal complement
//! (never `√(r² − a²)`), and every `arccos` argument is clamped to [−1, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{
    act, clamped_acos, dot, norm, random_rotation, random_unit, rotation_from_orientation,
    GeometryError, HPoint, RigidMotion, Rotation,
};

/// Errors from attribute computation and inverse construction.
#[derive(Debug, thiserror::Error)]
pub enum AttributeError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    /// The point variant does not match the homogeneous space.
    #[error("wrong point kind for {space:?}: expected {expected}")]
    WrongPointKind {
        space: SpaceTag,
        expected: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Polar coordinates are undefined for coincident positions.
    #[error("polar attribute undefined: positions coincide")]
    DegeneratePolar,
    /// An attribute vector violates its space's invariants.
    #[error("invalid attribute for {space:?}: {reason}")]
    InvalidAttribute { space: SpaceTag, reason: String },
}

/// The homogeneous space an attribute belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    /// Position space ℝⁿ (isotropic kernels).
    Rn,
    /// Planar position-orientation space ℝ²×S¹.
    R2xS1,
    /// The planar rigid-motion group SE(2).
    SE2,
    /// Spatial position-orientation space ℝ³×S².
    R3xS2,
    /// The spatial rigid-motion group SE(3).
    SE3,
}

impl SpaceTag {
    /// Length of the attribute vector for this space.
    pub fn attr_len(self) -> usize {
        match self {
            SpaceTag::Rn => 1,
            SpaceTag::R2xS1 | SpaceTag::SE2 => 3,
            SpaceTag::R3xS2 => 3,
            SpaceTag::SE3 => 12,
        }
    }

    /// Spatial dimension of the underlying space (ℝⁿ is reported for n = 3;
    /// use [`attr_rn`] directly for 2-D positions, the attribute is the same
    /// distance either way).
    pub fn ambient_dim(self) -> usize {
        match self {
            SpaceTag::R2xS1 | SpaceTag::SE2 => 2,
            _ => 3,
        }
    }
}

/// An invariant attribute vector tagged with its space.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    /// The attribute components.
    pub values: Vec<f64>,
    /// Which homogeneous space the pair lived in.
    pub space: SpaceTag,
}

impl Attribute {
    fn new(values: Vec<f64>, space: SpaceTag) -> Self {
        debug_assert_eq!(values.len(), space.attr_len());
        Attribute { values, space }
    }

    /// Max absolute difference to another attribute of the same space.
    pub fn max_abs_diff(&self, other: &Attribute) -> f64 {
        if self.space != other.space || self.values.len() != other.values.len() {
            return f64::INFINITY;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Distance attribute on ℝⁿ: `‖p_j − p_i‖`. Symmetric in its arguments.
pub fn attr_rn(p_i: &[f64], p_j: &[f64]) -> Result<Attribute, AttributeError> {
    if p_i.len() != p_j.len() {
        return Err(AttributeError::DimensionMismatch {
            expected: p_i.len(),
            got: p_j.len(),
        });
    }
    let d: Vec<f64> = p_j.iter().zip(p_i).map(|(a, b)| a - b).collect();
    Ok(Attribute::new(vec![norm(&d)], SpaceTag::Rn))
}

fn expect_pos_ori(
    x: &HPoint,
    n: usize,
    space: SpaceTag,
) -> Result<(&[f64], &[f64]), AttributeError> {
    match x {
        HPoint::PosOri { p, o } if p.len() == n => Ok((p, o)),
        HPoint::PosOri { p, .. } => Err(AttributeError::DimensionMismatch {
            expected: n,
            got: p.len(),
        }),
        _ => Err(AttributeError::WrongPointKind {
            space,
            expected: "position-orientation point",
        }),
    }
}

fn expect_pose(
    x: &HPoint,
    n: usize,
    space: SpaceTag,
) -> Result<(&[f64], &Rotation), AttributeError> {
    match x {
        HPoint::Pose { p, r } if p.len() == n => Ok((p, r)),
        HPoint::Pose { p, .. } => Err(AttributeError::DimensionMismatch {
            expected: n,
            got: p.len(),
        }),
        _ => Err(AttributeError::WrongPointKind {
            space,
            expected: "pose point",
        }),
    }
}

/// Signed angle carrying the first unit vector onto the second, in (−π, π].
fn signed_angle_2d(a: &[f64], b: &[f64]) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let d = dot(a, b);
    let theta = cross.atan2(d);
    // atan2 returns −π for the antipodal case; report the half-open (−π, π].
    if theta == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        theta
    }
}

/// Attribute on ℝ²×S¹: `(R_{o_i}⁻¹(p_j − p_i), θ)` with θ the signed
/// relative angle from `o_i` to `o_j` in (−π, π]; |θ| is the arccos form.
pub fn attr_r2s1(x_i: &HPoint, x_j: &HPoint) -> Result<Attribute, AttributeError> {
    let (p_i, o_i) = expect_pos_ori(x_i, 2, SpaceTag::R2xS1)?;
    let (p_j, o_j) = expect_pos_ori(x_j, 2, SpaceTag::R2xS1)?;
    let dp = [p_j[0] - p_i[0], p_j[1] - p_i[1]];
    // R_{o_i}⁻¹ Δp, written out for the planar rotation with first column o_i.
    let u = o_i[0] * dp[0] + o_i[1] * dp[1];
    let v = -o_i[1] * dp[0] + o_i[0] * dp[1];
    let theta = signed_angle_2d(o_i, o_j);
    Ok(Attribute::new(vec![u, v, theta], SpaceTag::R2xS1))
}

/// Attribute on ℝ³×S²: `(a, b, c)` with `a = o_i·Δp`, `b` the norm of the
/// part of `Δp` orthogonal to `o_i`, and `c = arccos(o_i·o_j) ∈ [0, π]`.
pub fn attr_r3s2(x_i: &HPoint, x_j: &HPoint) -> Result<Attribute, AttributeError> {
    let (p_i, o_i) = expect_pos_ori(x_i, 3, SpaceTag::R3xS2)?;
    let (p_j, o_j) = expect_pos_ori(x_j, 3, SpaceTag::R3xS2)?;
    let dp: Vec<f64> = p_j.iter().zip(p_i).map(|(a, b)| a - b).collect();
    let a = dot(o_i, &dp);
    let rej: Vec<f64> = dp.iter().zip(o_i).map(|(d, o)| d - a * o).collect();
    let b = norm(&rej);
    let c = clamped_acos(dot(o_i, o_j));
    Ok(Attribute::new(vec![a, b, c], SpaceTag::R3xS2))
}

/// Polar form of the ℝ³×S² attribute:
/// `(‖Δp‖, arccos(o_i·Δp/‖Δp‖), arccos(o_i·o_j))`. Undefined (error) for
/// coincident positions, where the polar angle has no value.
pub fn attr_r3s2_polar(x_i: &HPoint, x_j: &HPoint) -> Result<Attribute, AttributeError> {
    let (p_i, o_i) = expect_pos_ori(x_i, 3, SpaceTag::R3xS2)?;
    let (p_j, o_j) = expect_pos_ori(x_j, 3, SpaceTag::R3xS2)?;
    let dp: Vec<f64> = p_j.iter().zip(p_i).map(|(a, b)| a - b).collect();
    let r = norm(&dp);
    if r == 0.0 {
        return Err(AttributeError::DegeneratePolar);
    }
    let phi = clamped_acos(dot(o_i, &dp) / r);
    let c = clamped_acos(dot(o_i, o_j));
    Ok(Attribute::new(vec![r, phi, c], SpaceTag::R3xS2))
}

/// Attribute on SE(n): the relative pose `g_i⁻¹ g_j`. For n = 3 the result
/// is 12 numbers (relative translation, then the relative rotation row by
/// row); for n = 2 it is `(u, v, θ)` with θ the signed relative angle —
/// the same form as ℝ²×S¹, which the planar group is identified with.
pub fn attr_sen(x_i: &HPoint, x_j: &HPoint) -> Result<Attribute, AttributeError> {
    let n = x_i.dim();
    match n {
        2 => {
            let (p_i, r_i) = expect_pose(x_i, 2, SpaceTag::SE2)?;
            let (p_j, r_j) = expect_pose(x_j, 2, SpaceTag::SE2)?;
            let dp = [p_j[0] - p_i[0], p_j[1] - p_i[1]];
            let rel_t = r_i.inverse().apply(&dp);
            let rel_r = r_i.inverse().compose(r_j)?;
            let theta = rel_r.entry(1, 0).atan2(rel_r.entry(0, 0));
            Ok(Attribute::new(
                vec![rel_t[0], rel_t[1], theta],
                SpaceTag::SE2,
            ))
        }
        3 => {
            let (p_i, r_i) = expect_pose(x_i, 3, SpaceTag::SE3)?;
            let (p_j, r_j) = expect_pose(x_j, 3, SpaceTag::SE3)?;
            let dp: Vec<f64> = p_j.iter().zip(p_i).map(|(a, b)| a - b).collect();
            let rel_t = r_i.inverse().apply(&dp);
            let rel_r = r_i.inverse().compose(r_j)?;
            let mut values = rel_t;
            values.extend_from_slice(rel_r.entries());
            Ok(Attribute::new(values, SpaceTag::SE3))
        }
        other => Err(AttributeError::Geometry(
            GeometryError::UnsupportedDimension(other),
        )),
    }
}

/// The base point `x₀` each space's inverse construction is anchored at.
pub fn origin(space: SpaceTag) -> HPoint {
    match space {
        SpaceTag::Rn => HPoint::PosOnly(vec![0.0, 0.0, 0.0]),
        SpaceTag::R2xS1 => HPoint::PosOri {
            p: vec![0.0, 0.0],
            o: vec![1.0, 0.0],
        },
        SpaceTag::SE2 => HPoint::Pose {
            p: vec![0.0, 0.0],
            r: Rotation::identity(2),
        },
        SpaceTag::R3xS2 => HPoint::PosOri {
            p: vec![0.0, 0.0, 0.0],
            o: vec![0.0, 0.0, 1.0],
        },
        SpaceTag::SE3 => HPoint::Pose {
            p: vec![0.0, 0.0, 0.0],
            r: Rotation::identity(3),
        },
    }
}

/// Applies the forward attribute map of `space` to a pair of points.
/// ℝⁿ pairs may be given as bare positions of either dimension.
pub fn forward_attr(
    space: SpaceTag,
    x_i: &HPoint,
    x_j: &HPoint,
) -> Result<Attribute, AttributeError> {
    match space {
        SpaceTag::Rn => match (x_i, x_j) {
            (HPoint::PosOnly(p), HPoint::PosOnly(q)) => attr_rn(p, q),
            _ => Err(AttributeError::WrongPointKind {
                space,
                expected: "bare position",
            }),
        },
        SpaceTag::R2xS1 => attr_r2s1(x_i, x_j),
        SpaceTag::R3xS2 => attr_r3s2(x_i, x_j),
        SpaceTag::SE2 | SpaceTag::SE3 => attr_sen(x_i, x_j),
    }
}

/// Rebuilds the canonical pair partner for an attribute: a point `rep` such
/// that `forward_attr(space, x₀, rep)` reproduces the attribute. This is the
/// inverse map witnessing bijectivity.
///
/// For ℝⁿ the representative is `a` times the last coordinate axis (the 3-D
/// convention `a·e_z` extended to 2-D as `a·e_y`; any fixed unit vector
/// works, the orbit only fixes the distance).
pub fn representative_from_attr(a: &Attribute) -> Result<HPoint, AttributeError> {
    let bad = |reason: &str| AttributeError::InvalidAttribute {
        space: a.space,
        reason: reason.to_string(),
    };
    if a.values.len() != a.space.attr_len() {
        return Err(bad(&format!(
            "expected {} components, got {}",
            a.space.attr_len(),
            a.values.len()
        )));
    }
    match a.space {
        SpaceTag::Rn => {
            let d = a.values[0];
            if d < 0.0 {
                return Err(bad("distance must be non-negative"));
            }
            Ok(HPoint::PosOnly(vec![0.0, 0.0, d]))
        }
        SpaceTag::R2xS1 => {
            let (u, v, theta) = (a.values[0], a.values[1], a.values[2]);
            if !(-std::f64::consts::PI < theta && theta <= std::f64::consts::PI) {
                return Err(bad("relative angle must lie in (-pi, pi]"));
            }
            Ok(HPoint::PosOri {
                p: vec![u, v],
                o: vec![theta.cos(), theta.sin()],
            })
        }
        SpaceTag::SE2 => {
            let (u, v, theta) = (a.values[0], a.values[1], a.values[2]);
            if !(-std::f64::consts::PI < theta && theta <= std::f64::consts::PI) {
                return Err(bad("relative angle must lie in (-pi, pi]"));
            }
            Ok(HPoint::Pose {
                p: vec![u, v],
                r: Rotation::planar(theta),
            })
        }
        SpaceTag::R3xS2 => {
            let (aa, b, c) = (a.values[0], a.values[1], a.values[2]);
            if b < 0.0 {
                return Err(bad("orthogonal component b must be non-negative"));
            }
            if !(0.0..=std::f64::consts::PI).contains(&c) {
                return Err(bad("orientation angle c must lie in [0, pi]"));
            }
            Ok(HPoint::PosOri {
                p: vec![b, 0.0, aa],
                o: vec![c.sin(), 0.0, c.cos()],
            })
        }
        SpaceTag::SE3 => {
            let t = a.values[0..3].to_vec();
            let r = Rotation::from_entries(3, &a.values[3..12])?;
            Ok(HPoint::Pose { p: t, r })
        }
    }
}

/// Computes the attribute through an explicit frame `g_i` (any group element
/// carrying `x₀` to `x_i`): the invariants of `g_i⁻¹ · x_j` read off at the
/// origin. The result is independent of which valid frame is used — that
/// freedom is exactly the stabilizer the attribute quotients out.
pub fn attr_with_frame(
    space: SpaceTag,
    frame: &RigidMotion,
    x_j: &HPoint,
) -> Result<Attribute, AttributeError> {
    let rel = act(&frame.inverse(), x_j)?;
    match space {
        SpaceTag::Rn => match rel {
            HPoint::PosOnly(p) => Ok(Attribute::new(vec![norm(&p)], SpaceTag::Rn)),
            _ => Err(AttributeError::WrongPointKind {
                space,
                expected: "bare position",
            }),
        },
        SpaceTag::R2xS1 | SpaceTag::R3xS2 => forward_attr(space, &origin(space), &rel),
        SpaceTag::SE2 | SpaceTag::SE3 => forward_attr(space, &origin(space), &rel),
    }
}

/// The canonical frame for a point: translation to its position, rotation
/// `R_{o}` (orientation points), the pose's own rotation (poses), or the
/// identity (bare positions).
pub fn canonical_frame(x: &HPoint) -> Result<RigidMotion, AttributeError> {
    Ok(match x {
        HPoint::PosOnly(p) => RigidMotion::new(p.clone(), Rotation::identity(p.len()))?,
        HPoint::PosOri { p, o } => RigidMotion::new(p.clone(), rotation_from_orientation(o)?)?,
        HPoint::Pose { p, r } => RigidMotion::new(p.clone(), r.clone())?,
    })
}

/// Samples a random point of `space` inside a box of half-width `scale`.
pub fn random_point<R: Rng + ?Sized>(space: SpaceTag, scale: f64, rng: &mut R) -> HPoint {
    let n = space.ambient_dim();
    let p: Vec<f64> = (0..n)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
        .collect();
    match space {
        SpaceTag::Rn => HPoint::PosOnly(p),
        SpaceTag::R2xS1 | SpaceTag::R3xS2 => HPoint::PosOri {
            o: random_unit(n, rng),
            p,
        },
        SpaceTag::SE2 | SpaceTag::SE3 => HPoint::Pose {
            r: random_rotation(n, rng).expect("supported dimension"),
            p,
        },
    }
}

/// Measures how far the attribute moves when the frame `g_i` is replaced by
/// `g_i · h` for random stabilizer elements `h ∈ H`, over `samples` random
/// pairs. Returns the maximum absolute deviation; spaces with trivial
/// stabilizer (ℝ²×S¹, SE(2), SE(3)) report exactly 0 since only `h = e`
/// exists.
pub fn stabilizer_invariance_check(
    space: SpaceTag,
    samples: usize,
    rng_seed: u64,
) -> Result<f64, AttributeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..samples {
        let x_i = random_point(space, 3.0, &mut rng);
        let x_j = random_point(space, 3.0, &mut rng);
        let frame = canonical_frame(&x_i)?;
        let h: Option<Rotation> = match space {
            // Stabilizer of the origin of ℝⁿ: all of SO(n).
            SpaceTag::Rn => Some(random_rotation(x_i.dim(), &mut rng)?),
            // Stabilizer of (0, e_z): rotations about e_z.
            SpaceTag::R3xS2 => Some(Rotation::about_axis(
                [0.0, 0.0, 1.0],
                rng.gen::<f64>() * std::f64::consts::TAU,
            )),
            // Trivial stabilizers: only the identity fixes the origin point.
            SpaceTag::R2xS1 | SpaceTag::SE2 | SpaceTag::SE3 => None,
        };
        let base = attr_with_frame(space, &frame, &x_j)?;
        let twisted = match h {
            Some(h) => {
                let frame_h =
                    RigidMotion::new(frame.translation.clone(), frame.rotation.compose(&h)?)?;
                attr_with_frame(space, &frame_h, &x_j)?
            }
            None => attr_with_frame(space, &frame, &x_j)?,
        };
        max_dev = max_dev.max(base.max_abs_diff(&twisted));
    }
    Ok(max_dev)
}
