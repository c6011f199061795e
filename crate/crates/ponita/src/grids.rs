//! Spherical grids: the discrete orientation sets convolution layers sum
//! over.
//!
//! Grids on S¹ are exactly uniform (roots of unity); grids on S² are the
//! local minima of a Thomson-style inverse-distance repulsion energy,
//! which reproduce the platonic configurations at their special counts.
//! Exact analytic platonic constructors are provided alongside as ground
//! truth, and generated grids are cached to disk keyed by
//! `(dimension, count, seed)` so repeated runs see bit-identical grids.
//!
//! A grid enters the network only through rotation-invariant quantities
//! (its Gram matrix, and inner products with relative positions), which is
//! why rotating a grid together with the input geometry leaves network
//! outputs exactly equivariant.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{norm, random_unit, GeometryError, Rotation};
use crate::tolerances::REPULSION_CONVERGENCE;

/// Default optimization-step budget for [`repulsion_grid`].
pub const REPULSION_DEFAULT_STEPS: usize = 2000;
/// Default initial step size (radians-scale) for [`repulsion_grid`].
pub const REPULSION_DEFAULT_STEP_SIZE: f64 = 0.01;
/// Per-accepted-step decay of the repulsion step size.
const REPULSION_STEP_DECAY: f64 = 0.999;

/// Errors from grid construction, rotation, and the disk cache.
#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("a grid needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("unsupported sphere dimension {0} (supported: 2, 3)")]
    UnsupportedDimension(usize),
    #[error("no platonic solid has {0} vertices (supported: 4, 6, 8, 12, 20)")]
    NotPlatonic(usize),
    #[error("dimension mismatch: grid is {grid}-dimensional, rotation is {rotation}-dimensional")]
    DimensionMismatch { grid: usize, rotation: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed grid file: {0}")]
    Format(String),
}

/// A set of `N` unit vectors on Sⁿ⁻¹ (n ∈ {2, 3}), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    n: usize,
    coords: Vec<f64>,
    seed: u64,
}

impl SphereGrid {
    /// Builds a grid from raw direction rows, normalizing each to unit
    /// length. Analytic constructions record seed 0.
    fn from_rows(n: usize, rows: &[f64], seed: u64) -> SphereGrid {
        debug_assert_eq!(rows.len() % n, 0);
        let mut coords = rows.to_vec();
        for row in coords.chunks_mut(n) {
            let r = norm(row);
            debug_assert!(r > 0.0, "grid direction must be nonzero");
            for c in row {
                *c /= r;
            }
        }
        SphereGrid { n, coords, seed }
    }

    /// Ambient dimension n (points live on Sⁿ⁻¹).
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of grid points N.
    pub fn len(&self) -> usize {
        self.coords.len() / self.n
    }

    /// Whether the grid has no points (never true for constructed grids).
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// The k-th unit vector.
    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.n..(k + 1) * self.n]
    }

    /// All coordinates, row-major `[N, n]`.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// The seed the grid was generated from (0 for analytic grids).
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Inverse-distance energy Σ_{i<j} 1/‖x_i − x_j‖ of a configuration.
fn repulsion_energy(coords: &[f64], n: usize) -> f64 {
    let count = coords.len() / n;
    let mut e = 0.0;
    for i in 0..count {
        for j in (i + 1)..count {
            let mut d2 = 0.0;
            for k in 0..n {
                let diff = coords[i * n + k] - coords[j * n + k];
                d2 += diff * diff;
            }
            e += 1.0 / d2.sqrt().max(1e-12);
        }
    }
    e
}

/// Record of a repulsion run: the energy after every accepted step, and
/// whether the displacement-based convergence test fired within budget.
#[derive(Debug, Clone)]
pub struct RepulsionTrace {
    /// Energy of the initial configuration followed by the energy after
    /// each accepted step; non-increasing by construction.
    pub energies: Vec<f64>,
    /// True when the maximum point displacement of an accepted step fell
    /// below the convergence threshold before the step budget ran out.
    pub converged: bool,
    /// Steps attempted (accepted + rejected).
    pub steps_taken: usize,
}

/// Like [`repulsion_grid`], additionally returning the optimization trace.
pub fn repulsion_grid_traced(
    n: usize,
    count: usize,
    rng_seed: u64,
    steps: usize,
    step_size: f64,
) -> Result<(SphereGrid, RepulsionTrace), GridError> {
    if !(2..=3).contains(&n) {
        return Err(GridError::UnsupportedDimension(n));
    }
    if count < 2 {
        return Err(GridError::TooFewPoints { min: 2, got: count });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut coords: Vec<f64> = Vec::with_capacity(count * n);
    for _ in 0..count {
        coords.extend(random_unit(n, &mut rng));
    }

    let mut energy = repulsion_energy(&coords, n);
    let mut trace = RepulsionTrace {
        energies: vec![energy],
        converged: false,
        steps_taken: 0,
    };
    let mut s = step_size;
    let mut force = vec![0.0; coords.len()];
    for step in 0..steps {
        trace.steps_taken = step + 1;
        // Pairwise repulsion force: the negative gradient of the energy.
        force.iter_mut().for_each(|f| *f = 0.0);
        for i in 0..count {
            for j in (i + 1)..count {
                let mut diff = [0.0; 3];
                let mut d2 = 0.0;
                for k in 0..n {
                    diff[k] = coords[i * n + k] - coords[j * n + k];
                    d2 += diff[k] * diff[k];
                }
                let d = d2.sqrt().max(1e-12);
                let scale = 1.0 / (d * d * d);
                for k in 0..n {
                    force[i * n + k] += diff[k] * scale;
                    force[j * n + k] -= diff[k] * scale;
                }
            }
        }
        // Normalized tangent step per point, then reprojection.
        let mut proposed = coords.clone();
        let mut max_disp: f64 = 0.0;
        for i in 0..count {
            let x = &coords[i * n..(i + 1) * n];
            let f = &mut force[i * n..(i + 1) * n];
            let radial: f64 = (0..n).map(|k| f[k] * x[k]).sum();
            for k in 0..n {
                f[k] -= radial * x[k];
            }
            let fnorm = norm(f);
            if fnorm < 1e-13 {
                continue;
            }
            let row = &mut proposed[i * n..(i + 1) * n];
            for k in 0..n {
                row[k] = x[k] + s * f[k] / fnorm;
            }
            let r = norm(row);
            for c in row.iter_mut() {
                *c /= r;
            }
            let disp: f64 = (0..n)
                .map(|k| {
                    let d = proposed[i * n + k] - coords[i * n + k];
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            max_disp = max_disp.max(disp);
        }
        let proposed_energy = repulsion_energy(&proposed, n);
        if proposed_energy <= energy {
            coords = proposed;
            energy = proposed_energy;
            trace.energies.push(energy);
            s *= REPULSION_STEP_DECAY;
            if max_disp < REPULSION_CONVERGENCE {
                trace.converged = true;
                break;
            }
        } else {
            // Overshot the valley: shrink the step and retry from here.
            s *= 0.5;
        }
    }
    Ok((SphereGrid::from_rows(n, &coords, rng_seed), trace))
}

/// Runs inverse-distance repulsion of `count` points on Sⁿ⁻¹ from a
/// seeded random start: normalized tangent-plane steps with reprojection,
/// accepted only when the energy does not increase (rejected steps halve
/// the step size). Deterministic per seed.
pub fn repulsion_grid(
    n: usize,
    count: usize,
    rng_seed: u64,
    steps: usize,
    step_size: f64,
) -> Result<SphereGrid, GridError> {
    repulsion_grid_traced(n, count, rng_seed, steps, step_size).map(|(g, _)| g)
}

/// [`repulsion_grid`] with the default step budget and step size.
pub fn repulsion_grid_default(
    n: usize,
    count: usize,
    rng_seed: u64,
) -> Result<SphereGrid, GridError> {
    repulsion_grid(
        n,
        count,
        rng_seed,
        REPULSION_DEFAULT_STEPS,
        REPULSION_DEFAULT_STEP_SIZE,
    )
}

/// Exactly uniform grid on S¹: points at angles `offset + 2πk/N`.
pub fn circle_grid(count: usize, offset: f64) -> Result<SphereGrid, GridError> {
    if count < 1 {
        return Err(GridError::TooFewPoints { min: 1, got: 0 });
    }
    let mut rows = Vec::with_capacity(count * 2);
    for k in 0..count {
        let angle = offset + std::f64::consts::TAU * k as f64 / count as f64;
        rows.push(angle.cos());
        rows.push(angle.sin());
    }
    Ok(SphereGrid::from_rows(2, &rows, 0))
}

/// Exact vertex sets of the platonic solids, unit-normalized; the analytic
/// ground truth the repulsion optimizer is checked against. Supported
/// counts: 4 (tetrahedron), 6 (octahedron), 8 (cube), 12 (icosahedron),
/// 20 (dodecahedron).
pub fn platonic_grid(count: usize) -> Result<SphereGrid, GridError> {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let rows: Vec<f64> = match count {
        4 => vec![
            1.0, 1.0, 1.0, //
            1.0, -1.0, -1.0, //
            -1.0, 1.0, -1.0, //
            -1.0, -1.0, 1.0,
        ],
        6 => vec![
            1.0, 0.0, 0.0, //
            -1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, -1.0, 0.0, //
            0.0, 0.0, 1.0, //
            0.0, 0.0, -1.0,
        ],
        8 => {
            let mut v = Vec::with_capacity(24);
            for &x in &[1.0, -1.0_f64] {
                for &y in &[1.0, -1.0_f64] {
                    for &z in &[1.0, -1.0_f64] {
                        v.extend_from_slice(&[x, y, z]);
                    }
                }
            }
            v
        }
        12 => {
            // Cyclic permutations of (0, ±1, ±phi).
            let mut v = Vec::with_capacity(36);
            for &a in &[1.0, -1.0_f64] {
                for &b in &[phi, -phi] {
                    v.extend_from_slice(&[0.0, a, b]);
                    v.extend_from_slice(&[a, b, 0.0]);
                    v.extend_from_slice(&[b, 0.0, a]);
                }
            }
            v
        }
        20 => {
            // The cube's vertices plus cyclic permutations of (0, ±1/phi, ±phi).
            let mut v = Vec::with_capacity(60);
            for &x in &[1.0, -1.0_f64] {
                for &y in &[1.0, -1.0_f64] {
                    for &z in &[1.0, -1.0_f64] {
                        v.extend_from_slice(&[x, y, z]);
                    }
                }
            }
            let inv = 1.0 / phi;
            for &a in &[inv, -inv] {
                for &b in &[phi, -phi] {
                    v.extend_from_slice(&[0.0, a, b]);
                    v.extend_from_slice(&[a, b, 0.0]);
                    v.extend_from_slice(&[b, 0.0, a]);
                }
            }
            v
        }
        other => return Err(GridError::NotPlatonic(other)),
    };
    Ok(SphereGrid::from_rows(3, &rows, 0))
}

/// Applies a rotation to every grid point, preserving point order.
pub fn rotate_grid(grid: &SphereGrid, r: &Rotation) -> Result<SphereGrid, GridError> {
    if grid.dim() != r.dim() {
        return Err(GridError::DimensionMismatch {
            grid: grid.dim(),
            rotation: r.dim(),
        });
    }
    let mut coords = Vec::with_capacity(grid.coords.len());
    for k in 0..grid.len() {
        coords.extend(r.apply(grid.point(k)));
    }
    Ok(SphereGrid {
        n: grid.n,
        coords,
        seed: grid.seed,
    })
}

/// The pairwise inner-product matrix `G[o][o'] = o_o · o_o'`, row-major
/// `[N, N]`, with entries clamped to the exact interval [−1, 1] so that
/// downstream arccos-free kernels see in-range inputs.
pub fn gram_matrix(grid: &SphereGrid) -> Vec<f64> {
    let count = grid.len();
    let n = grid.dim();
    let mut g = vec![0.0; count * count];
    for i in 0..count {
        for j in i..count {
            let mut d = 0.0;
            for k in 0..n {
                d += grid.coords[i * n + k] * grid.coords[j * n + k];
            }
            let d = d.clamp(-1.0, 1.0);
            g[i * count + j] = d;
            g[j * count + i] = d;
        }
    }
    g
}

/// Minimum pairwise angle of the grid, in radians.
pub fn min_pairwise_angle(grid: &SphereGrid) -> f64 {
    let g = gram_matrix(grid);
    let count = grid.len();
    let mut max_dot = -1.0_f64;
    for i in 0..count {
        for j in (i + 1)..count {
            max_dot = max_dot.max(g[i * count + j]);
        }
    }
    crate::geometry::clamped_acos(max_dot)
}

/// The second moment Σ_o o oᵀ, row-major `[n, n]`; for a perfectly
/// isotropic grid this is (N/n)·I.
pub fn second_moment(grid: &SphereGrid) -> Vec<f64> {
    let n = grid.dim();
    let mut m = vec![0.0; n * n];
    for k in 0..grid.len() {
        let p = grid.point(k);
        for a in 0..n {
            for b in 0..n {
                m[a * n + b] += p[a] * p[b];
            }
        }
    }
    m
}

const GRID_MAGIC: &[u8; 4] = b"SGRD";
const GRID_VERSION: u32 = 1;

/// Serializes a grid into the little-endian cache format: header
/// (magic "SGRD", u32 version=1, u32 n, u32 N, u64 seed) followed by the
/// N·n float64 coordinates.
pub fn write_grid<W: Write>(grid: &SphereGrid, mut w: W) -> Result<(), GridError> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&GRID_VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.len() as u32).to_le_bytes())?;
    w.write_all(&grid.seed.to_le_bytes())?;
    for c in &grid.coords {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a grid from the cache format, validating the header and unit
/// norms.
pub fn read_grid<R: Read>(mut r: R) -> Result<SphereGrid, GridError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return Err(GridError::Format("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != GRID_VERSION {
        return Err(GridError::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    if !(2..=3).contains(&n) {
        return Err(GridError::Format(format!("bad dimension {n}")));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    let mut coords = Vec::with_capacity(count * n);
    let mut f64buf = [0u8; 8];
    for _ in 0..count * n {
        r.read_exact(&mut f64buf)?;
        coords.push(f64::from_le_bytes(f64buf));
    }
    for k in 0..count {
        let p = &coords[k * n..(k + 1) * n];
        if (norm(p) - 1.0).abs() > crate::tolerances::EPS_UNIT {
            return Err(GridError::Format(format!("point {k} is not unit-norm")));
        }
    }
    Ok(SphereGrid { n, coords, seed })
}

/// Saves a grid into `dir` under its cache key, creating the directory if
/// needed; returns the file path.
pub fn save_grid(grid: &SphereGrid, dir: &Path) -> Result<PathBuf, GridError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(cache_file_name(grid.dim(), grid.len(), grid.seed));
    let file = std::fs::File::create(&path)?;
    write_grid(grid, std::io::BufWriter::new(file))?;
    Ok(path)
}

/// Loads a grid from a cache file.
pub fn load_grid(path: &Path) -> Result<SphereGrid, GridError> {
    let file = std::fs::File::open(path)?;
    read_grid(std::io::BufReader::new(file))
}

fn cache_file_name(n: usize, count: usize, seed: u64) -> String {
    format!("s{n}_n{count}_seed{seed}.sgrd")
}

/// The grid cache directory: `$PONITA_GRID_CACHE` when set, otherwise
/// `ponita-grid-cache` under the system temp directory.
pub fn cache_dir() -> PathBuf {
    match std::env::var_os("PONITA_GRID_CACHE") {
        Some(dir) => PathBuf::from(dir),
        None => std::env::temp_dir().join("ponita-grid-cache"),
    }
}

/// Returns the repulsion grid for `(n, count, seed)` with default
/// optimizer settings, loading it from the cache when a valid file exists
/// and regenerating (and rewriting) it otherwise.
pub fn cached_repulsion_grid(n: usize, count: usize, seed: u64) -> Result<SphereGrid, GridError> {
    let dir = cache_dir();
    let path = dir.join(cache_file_name(n, count, seed));
    if path.exists() {
        match load_grid(&path) {
            Ok(grid) if grid.dim() == n && grid.len() == count && grid.seed == seed => {
                return Ok(grid)
            }
            // Corrupt or mismatched cache entries are silently rebuilt.
            _ => {}
        }
    }
    let grid = repulsion_grid_default(n, count, seed)?;
    save_grid(&grid, &dir)?;
    Ok(grid)
}
