//! Self-verification suite: reusable numerical checks behind the acceptance
//! gate and the `audit`/`gradcheck` CLI commands. Each check returns a
//! [`CheckResult`] with its maximum observed deviation and tolerance; a
//! report renders one PASS/FAIL line per check.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::attributes::{
    attr_with_frame, forward_attr, origin, random_point, representative_from_attr,
    stabilizer_invariance_check, AttributeError, SpaceTag,
};
use crate::geometry::{
    act, random_motion, random_rotation, GeometryError, HPoint, RigidMotion, Rotation,
};
use crate::grids::{
    gram_matrix, min_pairwise_angle, platonic_grid, repulsion_grid_default, rotate_grid,
    second_moment, GridError, SphereGrid,
};
use crate::kernel::KernelBasis;
use crate::layers::{
    energy_and_forces, factorized_pointcloud_kernel, pnita_forward, ponita_forward, spatial_gconv,
    spatial_invariants, spherical_gconv, Conditioning, ConvNeXtBlock, GeomGraph, GraphForm,
    LayersError, Pnita, PnitaConfig, Ponita, PonitaConfig, ReadoutKind,
};
use crate::params::ParamStore;
use crate::tensor::{Tape, TensorError};
use crate::tolerances::{
    EPS_ATTR, EPS_EQUIVARIANCE, EPS_FD_COMPOSITE, EPS_NET_FORCE, EPS_SECOND_MOMENT_EXACT,
    EPS_SEPARABLE, EPS_STABILIZER, FD_STEP, GRID_ANGLE_TOL_DEG,
};

#[derive(Error, Debug)]
pub enum AuditError {
    #[error(transparent)]
    Layers(#[from] LayersError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Attribute(#[from] AttributeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Outcome of one numerical check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from_deviation(name: &str, max_deviation: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            max_deviation,
            tolerance,
            passed: max_deviation.is_finite() && max_deviation <= tolerance,
            detail,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} | {:<28} | max {:>10.3e} | tol {:>8.1e}{}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_deviation,
            self.tolerance,
            if self.detail.is_empty() { "" } else { " | " },
            self.detail
        )
    }
}

/// A collection of check results with an overall verdict.
#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub checks: Vec<CheckResult>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(f, "{check}")?;
        }
        write!(
            f,
            "overall: {}",
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn random_vec(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
        .collect()
}

// ---------------------------------------------------------------------------
// Check 1: attribute invariance and bijectivity
// ---------------------------------------------------------------------------

/// Spaces covered by the attribute checks: bare positions in both supported
/// dimensions plus the four tagged homogeneous spaces.
const ATTRIBUTE_SPACES: [(&str, SpaceTag, usize); 6] = [
    ("R2", SpaceTag::Rn, 2),
    ("R3", SpaceTag::Rn, 3),
    ("R2xS1", SpaceTag::R2xS1, 2),
    ("R3xS2", SpaceTag::R3xS2, 3),
    ("SE2", SpaceTag::SE2, 2),
    ("SE3", SpaceTag::SE3, 3),
];

fn random_point_dim(space: SpaceTag, dim: usize, scale: f64, rng: &mut impl Rng) -> HPoint {
    if space == SpaceTag::Rn {
        HPoint::PosOnly(random_vec(rng, dim, scale))
    } else {
        random_point(space, scale, rng)
    }
}

/// Criterion: attributes are unchanged by random rigid motions, and the
/// attribute → representative → attribute round trip reproduces them.
pub fn attribute_invariance(pairs: usize, seed: u64) -> Result<CheckResult, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    let mut worst = String::new();
    for (label, space, dim) in ATTRIBUTE_SPACES {
        let mut space_dev: f64 = 0.0;
        for _ in 0..pairs {
            let x_i = random_point_dim(space, dim, 3.0, &mut rng);
            let x_j = random_point_dim(space, dim, 3.0, &mut rng);
            let g = random_motion(dim, 2.0, &mut rng)?;
            let base = forward_attr(space, &x_i, &x_j)?;
            let moved = forward_attr(space, &act(&g, &x_i)?, &act(&g, &x_j)?)?;
            space_dev = space_dev.max(base.max_abs_diff(&moved));

            let rep = representative_from_attr(&base)?;
            let rebuilt = forward_attr(space, &origin(space), &rep)?;
            space_dev = space_dev.max(base.max_abs_diff(&rebuilt));
        }
        if space_dev > max_dev {
            max_dev = space_dev;
            worst = label.to_string();
        }
    }
    Ok(CheckResult::from_deviation(
        "attribute-invariance",
        max_dev,
        EPS_ATTR,
        format!("{pairs} pairs x 6 spaces, worst: {worst}"),
    ))
}

// ---------------------------------------------------------------------------
// Check 2: stabilizer independence
// ---------------------------------------------------------------------------

/// Criterion: attributes computed through two representatives `g_i` and
/// `g_i·h` (random stabilizer element `h`) agree.
pub fn stabilizer_independence(trials: usize, seed: u64) -> Result<CheckResult, AuditError> {
    let mut max_dev: f64 = 0.0;

    // Tagged spaces: the library's own stabilizer sampler.
    for (offset, space) in [
        SpaceTag::Rn,
        SpaceTag::R2xS1,
        SpaceTag::R3xS2,
        SpaceTag::SE2,
        SpaceTag::SE3,
    ]
    .into_iter()
    .enumerate()
    {
        let dev = stabilizer_invariance_check(space, trials, seed.wrapping_add(offset as u64))?;
        max_dev = max_dev.max(dev);
    }

    // Bare 2-D positions: the stabilizer of the origin is all of SO(2).
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(101));
    for _ in 0..trials {
        let x_i = random_vec(&mut rng, 2, 3.0);
        let x_j = HPoint::PosOnly(random_vec(&mut rng, 2, 3.0));
        let r1 = random_rotation(2, &mut rng)?;
        let h = random_rotation(2, &mut rng)?;
        let frame = RigidMotion::new(x_i.clone(), r1.clone())?;
        let twisted = RigidMotion::new(x_i, r1.compose(&h)?)?;
        let a = attr_with_frame(SpaceTag::Rn, &frame, &x_j)?;
        let b = attr_with_frame(SpaceTag::Rn, &twisted, &x_j)?;
        max_dev = max_dev.max(a.max_abs_diff(&b));
    }

    Ok(CheckResult::from_deviation(
        "stabilizer-independence",
        max_dev,
        EPS_STABILIZER,
        format!("{trials} trials per space"),
    ))
}

// ---------------------------------------------------------------------------
// Shared model-scene helpers (checks 3 and 4)
// ---------------------------------------------------------------------------

struct AuditScene {
    p: usize,
    positions: Vec<f64>,
    scalars: Vec<f64>,
    vectors: Vec<f64>,
    receivers: Vec<usize>,
    senders: Vec<usize>,
}

fn random_scene(p: usize, rng: &mut impl Rng) -> AuditScene {
    let mut receivers = Vec::new();
    let mut senders = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j {
                receivers.push(i);
                senders.push(j);
            }
        }
    }
    AuditScene {
        p,
        positions: random_vec(rng, p * 3, 2.0),
        scalars: random_vec(rng, p, 1.0),
        vectors: random_vec(rng, p * 3, 1.0),
        receivers,
        senders,
    }
}

fn scene_graph(
    tape: &Tape<f64>,
    scene: &AuditScene,
    grid: &SphereGrid,
) -> Result<GeomGraph, LayersError> {
    let mut graph = GeomGraph::new(
        3,
        tape.constant(&[scene.p, 3], scene.positions.clone())?,
        scene.positions.clone(),
        scene.receivers.clone(),
        scene.senders.clone(),
        GraphForm::Bundle(grid.clone()),
    )?;
    graph.scalars = Some(tape.constant(&[scene.p, 1], scene.scalars.clone())?);
    graph.vectors = Some(tape.constant(&[scene.p, 3, 1], scene.vectors.clone())?);
    Ok(graph)
}

fn transform_scene(scene: &AuditScene, g: &RigidMotion) -> AuditScene {
    AuditScene {
        p: scene.p,
        positions: scene
            .positions
            .chunks(3)
            .flat_map(|v| {
                let r = g.rotation.apply(v);
                (0..3).map(|k| r[k] + g.translation[k]).collect::<Vec<_>>()
            })
            .collect(),
        scalars: scene.scalars.clone(),
        vectors: scene
            .vectors
            .chunks(3)
            .flat_map(|v| g.rotation.apply(v))
            .collect(),
        receivers: scene.receivers.clone(),
        senders: scene.senders.clone(),
    }
}

fn forward_scalar(
    model: &Ponita,
    scene: &AuditScene,
    grid: &SphereGrid,
) -> Result<Vec<f64>, AuditError> {
    let tape = Tape::<f64>::new();
    let params = model.bind(&tape)?;
    let graph = scene_graph(&tape, scene, grid)?;
    let out = ponita_forward(&tape, model, &params, &graph)?;
    Ok(tape.read_f64(&out.node_scalar.expect("scalar readout"))?)
}

fn forward_vector(
    model: &Ponita,
    scene: &AuditScene,
    grid: &SphereGrid,
) -> Result<Vec<f64>, AuditError> {
    let tape = Tape::<f64>::new();
    let params = model.bind(&tape)?;
    let graph = scene_graph(&tape, scene, grid)?;
    let out = ponita_forward(&tape, model, &params, &graph)?;
    Ok(tape.read_f64(&out.node_vector.expect("vector readout"))?)
}

fn audit_model_config(
    readout: ReadoutKind,
    layers: usize,
    channels: usize,
    num_ori: usize,
) -> PonitaConfig {
    PonitaConfig {
        dim: 3,
        num_ori,
        channels,
        layers,
        basis_dim: 32,
        degree: 3,
        widen: 2,
        length_scale: 1.0,
        scalar_in: 1,
        vector_in: 1,
        edge_extra: 0,
        readout,
        conditioning: Conditioning::Anisotropic,
        mean_aggregation: false,
    }
}

// ---------------------------------------------------------------------------
// Check 3: exact co-rotated equivariance
// ---------------------------------------------------------------------------

/// Criterion: with the grid co-rotated alongside the data, scalar outputs are
/// invariant and vector outputs co-rotate, to relative precision, for a
/// randomly initialized network (L=3, C=32, N=12) over random rigid motions.
pub fn co_rotated_equivariance(motions: usize, seed: u64) -> Result<CheckResult, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model_s = Ponita::new(audit_model_config(ReadoutKind::Scalar, 3, 32, 12), 9001);
    let model_v = Ponita::new(audit_model_config(ReadoutKind::Vector, 3, 32, 12), 9001);
    let grid = repulsion_grid_default(3, 12, 0)?;
    let scene = random_scene(8, &mut rng);

    let s0 = forward_scalar(&model_s, &scene, &grid)?;
    let v0 = forward_vector(&model_v, &scene, &grid)?;
    let s_scale = max_abs(&s0).max(1e-12);
    let v_scale = max_abs(&v0).max(1e-12);

    let mut max_rel: f64 = 0.0;
    for _ in 0..motions {
        let g = random_motion(3, 2.0, &mut rng)?;
        let moved = transform_scene(&scene, &g);
        let co_grid = rotate_grid(&grid, &g.rotation)?;

        let s1 = forward_scalar(&model_s, &moved, &co_grid)?;
        max_rel = max_rel.max(max_abs_diff(&s1, &s0) / s_scale);

        let v1 = forward_vector(&model_v, &moved, &co_grid)?;
        let v0_rot: Vec<f64> = v0.chunks(3).flat_map(|v| g.rotation.apply(v)).collect();
        max_rel = max_rel.max(max_abs_diff(&v1, &v0_rot) / v_scale);
    }
    Ok(CheckResult::from_deviation(
        "co-rotated-equivariance",
        max_rel,
        EPS_EQUIVARIANCE,
        format!("{motions} motions, L=3 C=32 N=12, scalar+vector"),
    ))
}

// ---------------------------------------------------------------------------
// Check 4: fixed-grid equivariance trend
// ---------------------------------------------------------------------------

/// Criterion: with the grid held fixed, the mean relative scalar deviation
/// under random rotations strictly decreases as the orientation resolution
/// grows through N ∈ {4, 12, 20, 60}.
pub fn fixed_grid_trend(rotations: usize, seed: u64) -> Result<CheckResult, AuditError> {
    let counts = [4usize, 12, 20, 60];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_scene(8, &mut rng);
    let motions: Vec<Rotation> = (0..rotations)
        .map(|_| random_rotation(3, &mut rng))
        .collect::<Result<_, _>>()?;

    let mut means = Vec::new();
    for &n in &counts {
        // Parameter shapes are independent of N, so the same seed gives the
        // same weights at every resolution; only the grid changes.
        let model = Ponita::new(audit_model_config(ReadoutKind::Scalar, 2, 16, n), 4242);
        let grid = repulsion_grid_default(3, n, 0)?;
        let s0 = forward_scalar(&model, &scene, &grid)?;
        let scale = s0.iter().map(|v| v.abs()).sum::<f64>() / s0.len() as f64;
        let mut total = 0.0;
        for r in &motions {
            let g = RigidMotion::new(vec![0.0; 3], r.clone())?;
            let s1 = forward_scalar(&model, &transform_scene(&scene, &g), &grid)?;
            total += s1.iter().zip(&s0).map(|(a, b)| (a - b).abs()).sum::<f64>() / s0.len() as f64;
        }
        means.push(total / rotations as f64 / scale.max(1e-12));
    }
    // The reported deviation is the worst adjacent increase: negative values
    // mean the trend strictly decreases everywhere.
    let worst_increase = means
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "mean relative deviation by N: {}",
        counts
            .iter()
            .zip(&means)
            .map(|(n, m)| format!("N={n}: {m:.3e}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let mut check = CheckResult::from_deviation("fixed-grid-trend", worst_increase, 0.0, detail);
    check.passed = worst_increase < 0.0;
    Ok(check)
}

// ---------------------------------------------------------------------------
// Check 5: separable path equals the non-separable kernel
// ---------------------------------------------------------------------------

/// Criterion: the factorized full kernel on the expanded position-orientation
/// point cloud reproduces spatial convolution → spherical convolution →
/// channel mixing exactly (up to rounding).
pub fn separability(draws: usize, seed: u64) -> Result<CheckResult, AuditError> {
    use crate::layers::pointcloud_gconv;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = platonic_grid(4)?;
    let n = grid.len();
    let mut max_dev: f64 = 0.0;
    for draw in 0..draws {
        let p = 3 + draw % 3;
        let mut recv = Vec::new();
        let mut send = Vec::new();
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    recv.push(i);
                    send.push(j);
                }
            }
        }
        let e = recv.len();
        let (c_in, c_out) = (3, 2);
        let pos = random_vec(&mut rng, p * 3, 2.0);
        let f_host = random_vec(&mut rng, p * n * c_in, 1.0);
        let k1_host = random_vec(&mut rng, e * n * c_in, 1.0);
        let k2_host = random_vec(&mut rng, n * n * c_in, 1.0);
        let k3_host = random_vec(&mut rng, c_in * c_out, 1.0);

        let tape = Tape::<f64>::new();
        let k1 = tape.constant(&[e, n, c_in], k1_host)?;
        let k2 = tape.constant(&[n, n, c_in], k2_host)?;
        let k3 = tape.constant(&[c_in, c_out], k3_host)?;

        let bundle = GeomGraph::new(
            3,
            tape.constant(&[p, 3], pos.clone())?,
            pos.clone(),
            recv.clone(),
            send.clone(),
            GraphForm::Bundle(grid.clone()),
        )?;
        let f = tape.constant(&[p, n, c_in], f_host.clone())?;
        let f1 = spatial_gconv(&tape, &bundle, &f, &k1, false)?;
        let f2 = spherical_gconv(&tape, &f1, &k2)?;
        let flat = tape.reshape(&f2, &[p * n, c_in])?;
        let separable = tape.read_f64(&tape.matmul(&flat, &k3)?)?;

        // Expanded graph: node i·N+o carries position p_i and orientation o.
        let mut pc_pos = Vec::with_capacity(p * n * 3);
        let mut pc_ori = Vec::with_capacity(p * n * 3);
        for i in 0..p {
            for o in 0..n {
                pc_pos.extend_from_slice(&pos[i * 3..i * 3 + 3]);
                pc_ori.extend_from_slice(grid.point(o));
            }
        }
        let mut pc_recv = Vec::with_capacity(e * n * n);
        let mut pc_send = Vec::with_capacity(e * n * n);
        for (&i, &j) in recv.iter().zip(&send) {
            for o in 0..n {
                for op in 0..n {
                    pc_recv.push(i * n + o);
                    pc_send.push(j * n + op);
                }
            }
        }
        let pc = GeomGraph::new(
            3,
            tape.constant(&[p * n, 3], pc_pos.clone())?,
            pc_pos,
            pc_recv,
            pc_send,
            GraphForm::PointCloud {
                orientations: tape.constant(&[p * n, 3], pc_ori.clone())?,
                orientations_host: pc_ori,
            },
        )?;
        let kernel = factorized_pointcloud_kernel(&tape, &k1, &k2, &k3)?;
        let f_pc = tape.constant(&[p * n, c_in], f_host)?;
        let nonsep = tape.read_f64(&pointcloud_gconv(&tape, &pc, &f_pc, &kernel, false)?)?;

        max_dev = max_dev.max(max_abs_diff(&separable, &nonsep));
    }
    Ok(CheckResult::from_deviation(
        "separable-vs-full-kernel",
        max_dev,
        EPS_SEPARABLE,
        format!("{draws} random graphs and weight draws"),
    ))
}

// ---------------------------------------------------------------------------
// Check 6: gradient correctness (finite differences)
// ---------------------------------------------------------------------------

fn spread_coords(total: usize, count: usize) -> Vec<usize> {
    let count = count.min(total);
    (0..count)
        .map(|k| k * total / count + (total / count.max(1)) / 2)
        .map(|c| c.min(total - 1))
        .collect()
}

/// Central-difference check of `analytic` against `eval` at `coords` of the
/// store's flat parameter vector; returns the maximum relative error.
fn fd_max_rel(
    store: &ParamStore,
    eval: &dyn Fn(&ParamStore) -> Result<f64, AuditError>,
    analytic: &[f64],
    coords: &[usize],
) -> Result<f64, AuditError> {
    let base = store.flat_values();
    let mut max_rel: f64 = 0.0;
    for &c in coords {
        let mut plus = base.clone();
        plus[c] += FD_STEP;
        let mut minus = base.clone();
        minus[c] -= FD_STEP;
        let mut sp = store.clone();
        sp.set_flat(&plus);
        let mut sm = store.clone();
        sm.set_flat(&minus);
        let fd = (eval(&sp)? - eval(&sm)?) / (2.0 * FD_STEP);
        let an = analytic[c];
        let denom = 1.0_f64.max(fd.abs()).max(an.abs());
        max_rel = max_rel.max((fd - an).abs() / denom);
    }
    Ok(max_rel)
}

fn flat_grads(grads: Vec<Vec<f64>>) -> Vec<f64> {
    grads.into_iter().flatten().collect()
}

fn block_gradcheck(seed: u64) -> Result<CheckResult, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let basis = KernelBasis::new(&mut store, "basis", 2, 2, 6, &[1.0, 1.0], &mut rng);
    let sphere = KernelBasis::new(&mut store, "sphere", 1, 2, 6, &[1.0], &mut rng);
    let block = ConvNeXtBlock::new(&mut store, "block", 6, 3, 2, true, &mut rng);

    let grid = platonic_grid(4)?;
    let p = 3;
    let pos = random_vec(&mut rng, p * 3, 1.5);
    let mut recv = Vec::new();
    let mut send = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j {
                recv.push(i);
                send.push(j);
            }
        }
    }
    let f_host = random_vec(&mut rng, p * 4 * 3, 1.0);
    let gram = gram_matrix(&grid);

    let run = |s: &ParamStore| -> Result<(f64, Vec<f64>), AuditError> {
        let tape = Tape::<f64>::new();
        let graph = GeomGraph::new(
            3,
            tape.constant(&[p, 3], pos.clone())?,
            pos.clone(),
            recv.clone(),
            send.clone(),
            GraphForm::Bundle(grid.clone()),
        )?;
        let params = s.bind(&tape)?;
        let attrs = spatial_invariants(&tape, &graph)?;
        let sb = basis
            .eval_basis(&tape, &params, &attrs)
            .map_err(LayersError::from)?;
        let gs = sphere
            .eval_basis(&tape, &params, &tape.constant(&[16, 1], gram.clone())?)
            .map_err(LayersError::from)?;
        let f = tape.constant(&[p, 4, 3], f_host.clone())?;
        let out = block.forward(&tape, &params, &graph, &f, &sb, Some(&gs), false)?;
        let loss = tape.sum_all(&tape.square(&out)?)?;
        let l = tape.read_f64(&loss)?[0];
        let grads = tape.backward(&loss)?;
        Ok((l, flat_grads(s.grad_vecs(&tape, &params, &grads)?)))
    };
    let analytic = run(&store)?.1;
    let coords = spread_coords(store.param_count(), 20);
    let dev = fd_max_rel(&store, &|s| Ok(run(s)?.0), &analytic, &coords)?;
    Ok(CheckResult::from_deviation(
        "grad: kernel nets + block",
        dev,
        EPS_FD_COMPOSITE,
        format!("{} coordinates", coords.len()),
    ))
}

fn pointcloud_gradcheck(seed: u64) -> Result<CheckResult, AuditError> {
    use crate::layers::pointcloud_gconv;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = platonic_grid(4)?;
    let n = grid.len();
    let p = 3;
    let mut recv = Vec::new();
    let mut send = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j {
                recv.push(i);
                send.push(j);
            }
        }
    }
    let e = recv.len();
    let (c_in, c_out) = (2, 2);
    let pos = random_vec(&mut rng, p * 3, 1.5);
    let f_host = random_vec(&mut rng, p * n * c_in, 1.0);

    let mut store = ParamStore::new();
    let k1_id = store.alloc("k1", &[e, n, c_in], random_vec(&mut rng, e * n * c_in, 1.0));
    let k2_id = store.alloc("k2", &[n, n, c_in], random_vec(&mut rng, n * n * c_in, 1.0));
    let k3_id = store.alloc(
        "k3",
        &[c_in, c_out],
        random_vec(&mut rng, c_in * c_out, 1.0),
    );

    let mut pc_pos = Vec::new();
    let mut pc_ori = Vec::new();
    for i in 0..p {
        for o in 0..n {
            pc_pos.extend_from_slice(&pos[i * 3..i * 3 + 3]);
            pc_ori.extend_from_slice(grid.point(o));
        }
    }
    let mut pc_recv = Vec::new();
    let mut pc_send = Vec::new();
    for (&i, &j) in recv.iter().zip(&send) {
        for o in 0..n {
            for op in 0..n {
                pc_recv.push(i * n + o);
                pc_send.push(j * n + op);
            }
        }
    }

    let run = |s: &ParamStore| -> Result<(f64, Vec<f64>), AuditError> {
        let tape = Tape::<f64>::new();
        let params = s.bind(&tape)?;
        let pc = GeomGraph::new(
            3,
            tape.constant(&[p * n, 3], pc_pos.clone())?,
            pc_pos.clone(),
            pc_recv.clone(),
            pc_send.clone(),
            GraphForm::PointCloud {
                orientations: tape.constant(&[p * n, 3], pc_ori.clone())?,
                orientations_host: pc_ori.clone(),
            },
        )?;
        let kernel = factorized_pointcloud_kernel(
            &tape,
            params.get(k1_id),
            params.get(k2_id),
            params.get(k3_id),
        )?;
        let f = tape.constant(&[p * n, c_in], f_host.clone())?;
        let out = pointcloud_gconv(&tape, &pc, &f, &kernel, false)?;
        let loss = tape.sum_all(&tape.square(&out)?)?;
        let l = tape.read_f64(&loss)?[0];
        let grads = tape.backward(&loss)?;
        Ok((l, flat_grads(s.grad_vecs(&tape, &params, &grads)?)))
    };
    let analytic = run(&store)?.1;
    let coords = spread_coords(store.param_count(), 20);
    let dev = fd_max_rel(&store, &|s| Ok(run(s)?.0), &analytic, &coords)?;
    Ok(CheckResult::from_deviation(
        "grad: factorized pointcloud",
        dev,
        EPS_FD_COMPOSITE,
        format!("{} coordinates", coords.len()),
    ))
}

fn network_gradcheck(readout: ReadoutKind, seed: u64) -> Result<CheckResult, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = PonitaConfig {
        num_ori: 4,
        channels: 4,
        layers: 1,
        basis_dim: 8,
        degree: 2,
        widen: 2,
        scalar_in: 1,
        vector_in: 1,
        edge_extra: 0,
        readout,
        ..PonitaConfig::default()
    };
    let model = Ponita::new(config, seed.wrapping_add(1));
    let grid = platonic_grid(4)?;
    let scene = random_scene(3, &mut rng);

    let run = |s: &ParamStore| -> Result<(f64, Vec<f64>), AuditError> {
        let tape = Tape::<f64>::new();
        let graph = scene_graph(&tape, &scene, &grid)?;
        let params = s.bind(&tape)?;
        let out = ponita_forward(&tape, &model, &params, &graph)?;
        let t = match readout {
            ReadoutKind::Scalar => out.node_scalar.expect("scalar readout"),
            ReadoutKind::Vector => out.node_vector.expect("vector readout"),
        };
        let loss = tape.sum_all(&tape.square(&t)?)?;
        let l = tape.read_f64(&loss)?[0];
        let grads = tape.backward(&loss)?;
        Ok((l, flat_grads(s.grad_vecs(&tape, &params, &grads)?)))
    };
    let analytic = run(&model.store)?.1;
    let coords = spread_coords(model.store.param_count(), 20);
    let dev = fd_max_rel(&model.store, &|s| Ok(run(s)?.0), &analytic, &coords)?;
    let name = match readout {
        ReadoutKind::Scalar => "grad: network (scalar out)",
        ReadoutKind::Vector => "grad: network (vector out)",
    };
    Ok(CheckResult::from_deviation(
        name,
        dev,
        EPS_FD_COMPOSITE,
        format!("{} coordinates", coords.len()),
    ))
}

fn pnita_gradcheck(seed: u64) -> Result<CheckResult, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Pnita::new(
        PnitaConfig {
            channels: 4,
            layers: 1,
            basis_dim: 8,
            degree: 2,
            widen: 2,
            ..PnitaConfig::default()
        },
        seed.wrapping_add(2),
    );
    let p = 3;
    let pos = random_vec(&mut rng, p * 3, 2.0);
    let scal = random_vec(&mut rng, p, 1.0);
    let mut recv = Vec::new();
    let mut send = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j {
                recv.push(i);
                send.push(j);
            }
        }
    }

    let run = |s: &ParamStore| -> Result<(f64, Vec<f64>), AuditError> {
        let tape = Tape::<f64>::new();
        let mut graph = GeomGraph::new(
            3,
            tape.constant(&[p, 3], pos.clone())?,
            pos.clone(),
            recv.clone(),
            send.clone(),
            GraphForm::Position,
        )?;
        graph.scalars = Some(tape.constant(&[p, 1], scal.clone())?);
        let params = s.bind(&tape)?;
        let out = pnita_forward(&tape, &model, &params, &graph)?
            .node_scalar
            .expect("scalar readout");
        let loss = tape.sum_all(&tape.square(&out)?)?;
        let l = tape.read_f64(&loss)?[0];
        let grads = tape.backward(&loss)?;
        Ok((l, flat_grads(s.grad_vecs(&tape, &params, &grads)?)))
    };
    let analytic = run(&model.store)?.1;
    let coords = spread_coords(model.store.param_count(), 20);
    let dev = fd_max_rel(&model.store, &|s| Ok(run(s)?.0), &analytic, &coords)?;
    Ok(CheckResult::from_deviation(
        "grad: network (position-only)",
        dev,
        EPS_FD_COMPOSITE,
        format!("{} coordinates", coords.len()),
    ))
}

fn force_gradcheck(seed: u64) -> Result<Vec<CheckResult>, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = PonitaConfig {
        num_ori: 4,
        channels: 6,
        layers: 2,
        basis_dim: 12,
        degree: 2,
        widen: 2,
        scalar_in: 1,
        vector_in: 1,
        edge_extra: 0,
        readout: ReadoutKind::Scalar,
        ..PonitaConfig::default()
    };
    let model = Ponita::new(config, seed.wrapping_add(3));
    let grid = platonic_grid(4)?;
    let scene = random_scene(4, &mut rng);

    let energy_at = |positions: &[f64]| -> Result<f64, AuditError> {
        let tape = Tape::<f64>::new();
        let moved = AuditScene {
            p: scene.p,
            positions: positions.to_vec(),
            scalars: scene.scalars.clone(),
            vectors: scene.vectors.clone(),
            receivers: scene.receivers.clone(),
            senders: scene.senders.clone(),
        };
        let graph = scene_graph(&tape, &moved, &grid)?;
        let params = model.bind(&tape)?;
        let out = ponita_forward(&tape, &model, &params, &graph)?;
        Ok(tape.read_f64(&tape.sum_all(&out.node_scalar.expect("scalar"))?)?[0])
    };

    // Analytic forces through the differentiable-positions path.
    let tape = Tape::<f64>::new();
    let mut graph = GeomGraph::new(
        3,
        tape.var(&[scene.p, 3], scene.positions.clone())?,
        scene.positions.clone(),
        scene.receivers.clone(),
        scene.senders.clone(),
        GraphForm::Bundle(grid.clone()),
    )?;
    graph.scalars = Some(tape.constant(&[scene.p, 1], scene.scalars.clone())?);
    graph.vectors = Some(tape.constant(&[scene.p, 3, 1], scene.vectors.clone())?);
    let params = model.bind(&tape)?;
    let (_, forces) = energy_and_forces(&tape, &model, &params, &graph)?;
    let f = tape.read_f64(&forces)?;

    let mut max_rel: f64 = 0.0;
    for c in 0..scene.p * 3 {
        let mut plus = scene.positions.clone();
        plus[c] += FD_STEP;
        let mut minus = scene.positions.clone();
        minus[c] -= FD_STEP;
        let fd = -(energy_at(&plus)? - energy_at(&minus)?) / (2.0 * FD_STEP);
        let denom = 1.0_f64.max(fd.abs()).max(f[c].abs());
        max_rel = max_rel.max((fd - f[c]).abs() / denom);
    }

    let mut net: f64 = 0.0;
    for k in 0..3 {
        let total: f64 = (0..scene.p).map(|i| f[i * 3 + k]).sum();
        net = net.max(total.abs());
    }

    Ok(vec![
        CheckResult::from_deviation(
            "grad: forces vs energy FD",
            max_rel,
            EPS_FD_COMPOSITE,
            format!("{} position coordinates", scene.p * 3),
        ),
        CheckResult::from_deviation(
            "net force (translation inv.)",
            net,
            EPS_NET_FORCE,
            String::new(),
        ),
    ])
}

/// Criterion: every layer and both networks pass central finite-difference
/// gradient checks, and predicted forces match the energy's finite
/// differences with zero net force.
pub fn gradient_checks(seed: u64) -> Result<Vec<CheckResult>, AuditError> {
    let mut checks = vec![
        block_gradcheck(seed)?,
        pointcloud_gradcheck(seed.wrapping_add(10))?,
        network_gradcheck(ReadoutKind::Scalar, seed.wrapping_add(20))?,
        network_gradcheck(ReadoutKind::Vector, seed.wrapping_add(30))?,
        pnita_gradcheck(seed.wrapping_add(40))?,
    ];
    checks.extend(force_gradcheck(seed.wrapping_add(50))?);
    Ok(checks)
}

// ---------------------------------------------------------------------------
// Check 7: grid quality
// ---------------------------------------------------------------------------

/// Criterion: repulsion grids reach the platonic minimum angles for
/// N ∈ {4, 6, 12} (within 0.5°), and the icosahedral vertex set satisfies
/// the exact second-moment identity Σ o oᵀ = 4·I.
pub fn grid_quality(seed: u64) -> Result<Vec<CheckResult>, AuditError> {
    let deg = |rad: f64| rad.to_degrees();
    let cases = [
        (4usize, deg((-1.0_f64 / 3.0).acos())),
        (6, 90.0),
        (12, deg((1.0 / 5.0_f64.sqrt()).acos())),
    ];
    let mut max_err: f64 = 0.0;
    for (count, want_deg) in cases {
        let g = repulsion_grid_default(3, count, seed)?;
        let got = deg(min_pairwise_angle(&g));
        max_err = max_err.max((got - want_deg).abs());
    }
    let angle = CheckResult::from_deviation(
        "repulsion platonic angles",
        max_err,
        GRID_ANGLE_TOL_DEG,
        "N in {4, 6, 12}, degrees".to_string(),
    );

    let ico = platonic_grid(12)?;
    let m = second_moment(&ico);
    let mut dev: f64 = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            let want = if r == c { 4.0 } else { 0.0 };
            dev = dev.max((m[r * 3 + c] - want).abs());
        }
    }
    let moment = CheckResult::from_deviation(
        "icosahedral second moment",
        dev,
        EPS_SECOND_MOMENT_EXACT,
        "sum o o^T vs 4 I".to_string(),
    );
    Ok(vec![angle, moment])
}

// ---------------------------------------------------------------------------
// Position-only network invariance
// ---------------------------------------------------------------------------

/// The position-only network is exactly invariant: scalar outputs are
/// unchanged by rigid motions of the input positions.
pub fn pnita_invariance(motions: usize, seed: u64) -> Result<CheckResult, AuditError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Pnita::new(
        PnitaConfig {
            channels: 8,
            layers: 2,
            basis_dim: 16,
            degree: 2,
            widen: 2,
            ..PnitaConfig::default()
        },
        7001,
    );
    let p = 6;
    let pos = random_vec(&mut rng, p * 3, 2.0);
    let scal = random_vec(&mut rng, p, 1.0);
    let mut recv = Vec::new();
    let mut send = Vec::new();
    for i in 0..p {
        for j in 0..p {
            if i != j {
                recv.push(i);
                send.push(j);
            }
        }
    }
    let forward = |positions: &[f64]| -> Result<Vec<f64>, AuditError> {
        let tape = Tape::<f64>::new();
        let mut graph = GeomGraph::new(
            3,
            tape.constant(&[p, 3], positions.to_vec())?,
            positions.to_vec(),
            recv.clone(),
            send.clone(),
            GraphForm::Position,
        )?;
        graph.scalars = Some(tape.constant(&[p, 1], scal.clone())?);
        let params = model.bind(&tape)?;
        let out = pnita_forward(&tape, &model, &params, &graph)?;
        Ok(tape.read_f64(&out.node_scalar.expect("scalar readout"))?)
    };
    let s0 = forward(&pos)?;
    let scale = max_abs(&s0).max(1e-12);
    let mut max_rel: f64 = 0.0;
    for _ in 0..motions {
        let g = random_motion(3, 2.0, &mut rng)?;
        let moved: Vec<f64> = pos
            .chunks(3)
            .flat_map(|v| {
                let r = g.rotation.apply(v);
                (0..3).map(|k| r[k] + g.translation[k]).collect::<Vec<_>>()
            })
            .collect();
        max_rel = max_rel.max(max_abs_diff(&forward(&moved)?, &s0) / scale);
    }
    Ok(CheckResult::from_deviation(
        "position-net invariance",
        max_rel,
        crate::tolerances::EPS_ROTATION,
        format!("{motions} rigid motions"),
    ))
}

// ---------------------------------------------------------------------------
// Check 9: readout identity
// ---------------------------------------------------------------------------

/// Criterion: lifting a vector to the icosahedral grid and reading it back
/// scales it by exactly N/3 = 4.
pub fn readout_identity(seed: u64) -> Result<CheckResult, AuditError> {
    use crate::layers::{sphere_to_vec, vec_to_sphere};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = platonic_grid(12)?;
    let tape = Tape::<f64>::new();
    let v_host = random_vec(&mut rng, 4 * 3 * 2, 1.0);
    let v = tape.constant(&[4, 3, 2], v_host.clone())?;
    let f = vec_to_sphere(&tape, &v, &grid)?;
    let back = tape.read_f64(&sphere_to_vec(&tape, &f, &grid)?)?;
    let want: Vec<f64> = v_host.iter().map(|&x| 4.0 * x).collect();
    Ok(CheckResult::from_deviation(
        "lift-readout x4 identity",
        max_abs_diff(&back, &want),
        EPS_SECOND_MOMENT_EXACT,
        "vec_to_sphere -> sphere_to_vec on N=12".to_string(),
    ))
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Runs the fast invariance/equivariance/identity checks (everything except
/// the gradient suite and the training comparison). `trials` scales the
/// sample counts: attribute and stabilizer checks use it directly, the
/// equivariance and trend checks use `trials / 10` (at least 10) transforms.
pub fn run_audit(trials: usize, seed: u64) -> Result<AuditReport, AuditError> {
    let motions = (trials / 10).max(10);
    let mut report = AuditReport::default();
    report.push(attribute_invariance(trials, seed)?);
    report.push(stabilizer_independence(trials, seed.wrapping_add(1))?);
    report.push(co_rotated_equivariance(motions, seed.wrapping_add(2))?);
    report.push(fixed_grid_trend(motions, seed.wrapping_add(3))?);
    report.push(separability(10, seed.wrapping_add(4))?);
    report.push(pnita_invariance(motions, seed.wrapping_add(5))?);
    for check in grid_quality(seed.wrapping_add(6))? {
        report.push(check);
    }
    report.push(readout_identity(seed.wrapping_add(7))?);
    Ok(report)
}

/// Runs the finite-difference gradient suite as a report.
pub fn run_gradcheck(seed: u64) -> Result<AuditReport, AuditError> {
    let mut report = AuditReport::default();
    for check in gradient_checks(seed)? {
        report.push(check);
    }
    Ok(report)
}
