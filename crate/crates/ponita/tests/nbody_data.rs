//! Point-cloud file contracts and charged-particle simulator physics:
//! serialization round trips, validation failures, conservation laws,
//! generator determinism, and the featurization contracts the training
//! pipeline depends on.

// Coordinate loops below index several parallel arrays at once; the range
// loop is the clearer expression there.
#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ponita::data::{
    load_clouds, read_clouds, save_clouds, write_clouds, CloudTargets, DataError, PointCloudFile,
    ScalarField,
};
use ponita::geometry::random_rotation;
use ponita::grids::{platonic_grid, repulsion_grid_default};
use ponita::nbody::{
    accelerations, cloud_to_sample, featurize_host, leapfrog, nbody_featurize, nbody_generate,
    random_state, sample_to_cloud, total_energy, total_momentum, NBodyConfig, NBodyState,
    SOFTENING,
};
use ponita::tensor::{Scalar, Tape};
use ponita::tolerances::{EPS_ENERGY_DRIFT, EPS_MOMENTUM_DRIFT};

fn cloud(positions: Vec<Vec<f64>>) -> PointCloudFile {
    PointCloudFile {
        positions,
        scalars: BTreeMap::new(),
        vectors: BTreeMap::new(),
        edges: None,
        targets: None,
    }
}

fn read<T: Scalar>(tape: &Tape<T>, t: &ponita::tensor::DTensor) -> Vec<f64> {
    tape.read_f64(t).expect("readable tensor")
}

// ---------------------------------------------------------------------------
// Point-cloud files
// ---------------------------------------------------------------------------

#[test]
fn cloud_round_trip_preserves_exact_bits() {
    // Extreme magnitudes, subnormals and signed zero must survive the
    // JSON round trip bit-for-bit.
    let mut c = cloud(vec![
        vec![1e300, 5e-324, -0.0],
        vec![-1.0 / 3.0, 2.0_f64.sqrt(), 1e-200],
    ]);
    c.scalars.insert(
        "q".into(),
        ScalarField::Wide(vec![vec![0.1 + 0.2, 7.0], vec![-1e16, 1.0]]),
    );
    c.vectors.insert(
        "v".into(),
        vec![vec![0.0, -0.0, 3.0], vec![1e-300, 2.0, 3.0]],
    );
    c.edges = Some(vec![[0, 1], [1, 0]]);
    c.targets = Some(CloudTargets {
        scalar: Some(0.30000000000000004),
        node_vector: Some(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]),
    });

    let mut buf = Vec::new();
    write_clouds(std::slice::from_ref(&c), &mut buf).expect("write");
    let back = read_clouds(buf.as_slice()).expect("read");
    assert_eq!(back.len(), 1);
    let b = &back[0];
    let bits = |x: f64| x.to_bits();
    for (row_a, row_b) in c.positions.iter().zip(&b.positions) {
        for (a, v) in row_a.iter().zip(row_b) {
            assert_eq!(bits(*a), bits(*v), "position bits changed");
        }
    }
    assert_eq!(c.scalars, b.scalars);
    assert_eq!(c.vectors, b.vectors);
    assert_eq!(c.edges, b.edges);
    let (ta, tb) = (c.targets.as_ref().unwrap(), b.targets.as_ref().unwrap());
    assert_eq!(bits(ta.scalar.unwrap()), bits(tb.scalar.unwrap()));
    assert_eq!(ta.node_vector, tb.node_vector);
    // Signed zero specifically.
    assert!(b.positions[0][2].is_sign_negative());
}

#[test]
fn cloud_file_round_trip_on_disk() {
    let dir = std::env::temp_dir().join(format!("ponita-data-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("clouds.json");
    let clouds = vec![
        cloud(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.5, -0.25]]),
        cloud(vec![vec![3.0, 2.0, 1.0]]),
    ];
    save_clouds(&clouds, &path).expect("save");
    let back = load_clouds(&path).expect("load");
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].positions, clouds[0].positions);
    assert_eq!(back[1].positions, clouds[1].positions);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn single_object_file_reads_as_one_cloud() {
    let text = r#"{"positions": [[1.0, 2.0, 3.0]]}"#;
    let clouds = read_clouds(text.as_bytes()).expect("single object accepted");
    assert_eq!(clouds.len(), 1);
    assert_eq!(clouds[0].positions, vec![vec![1.0, 2.0, 3.0]]);
}

#[test]
fn scalar_field_shapes() {
    let flat = ScalarField::Flat(vec![1.0, 2.0, 3.0]);
    assert_eq!(flat.num_points(), 3);
    assert_eq!(flat.width(), Some(1));
    assert_eq!(flat.to_rows(), vec![1.0, 2.0, 3.0]);

    let wide = ScalarField::Wide(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert_eq!(wide.num_points(), 2);
    assert_eq!(wide.width(), Some(2));
    assert_eq!(wide.to_rows(), vec![1.0, 2.0, 3.0, 4.0]);

    let ragged = ScalarField::Wide(vec![vec![1.0, 2.0], vec![3.0]]);
    assert_eq!(ragged.width(), None);
}

#[test]
fn validation_rejects_malformed_clouds() {
    let base = || cloud(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]);

    let empty = cloud(vec![]);
    assert!(matches!(empty.validate(), Err(DataError::Inconsistent(_))));

    let mut ragged_pos = base();
    ragged_pos.positions[1] = vec![1.0, 2.0];
    assert!(ragged_pos.validate().is_err());

    let mut short_scalar = base();
    short_scalar
        .scalars
        .insert("s".into(), ScalarField::Flat(vec![1.0]));
    assert!(short_scalar.validate().is_err());

    let mut ragged_scalar = base();
    ragged_scalar.scalars.insert(
        "s".into(),
        ScalarField::Wide(vec![vec![1.0, 2.0], vec![3.0]]),
    );
    assert!(ragged_scalar.validate().is_err());

    let mut bad_vec = base();
    bad_vec
        .vectors
        .insert("v".into(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert!(bad_vec.validate().is_err());

    let mut bad_edge = base();
    bad_edge.edges = Some(vec![[0, 2]]);
    assert!(bad_edge.validate().is_err());

    let mut nan_pos = base();
    nan_pos.positions[0][1] = f64::NAN;
    assert!(nan_pos.validate().is_err());

    let mut inf_target = base();
    inf_target.targets = Some(CloudTargets {
        scalar: Some(f64::INFINITY),
        node_vector: None,
    });
    assert!(inf_target.validate().is_err());

    let mut bad_target_rows = base();
    bad_target_rows.targets = Some(CloudTargets {
        scalar: None,
        node_vector: Some(vec![vec![1.0, 2.0, 3.0]]),
    });
    assert!(bad_target_rows.validate().is_err());

    assert!(base().validate().is_ok());
}

#[test]
fn write_refuses_invalid_clouds() {
    let bad = cloud(vec![vec![f64::NAN, 0.0, 0.0]]);
    let mut buf = Vec::new();
    assert!(write_clouds(std::slice::from_ref(&bad), &mut buf).is_err());
}

// ---------------------------------------------------------------------------
// Simulator physics
// ---------------------------------------------------------------------------

fn pair_state(charges: [f64; 2]) -> NBodyState {
    NBodyState {
        positions: vec![-0.5, 0.0, 0.0, 0.5, 0.0, 0.0],
        velocities: vec![0.0; 6],
        charges: charges.to_vec(),
    }
}

fn separation(state: &NBodyState) -> f64 {
    let d: Vec<f64> = (0..3)
        .map(|k| state.positions[k] - state.positions[3 + k])
        .collect();
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[test]
fn opposite_charges_attract_like_charges_repel() {
    let mut attract = pair_state([1.0, -1.0]);
    let d0 = separation(&attract);
    leapfrog(&mut attract, 1e-3, 200);
    assert!(
        separation(&attract) < d0,
        "opposite charges must move closer: {} -> {}",
        d0,
        separation(&attract)
    );

    let mut repel = pair_state([1.0, 1.0]);
    leapfrog(&mut repel, 1e-3, 200);
    assert!(
        separation(&repel) > d0,
        "like charges must move apart: {} -> {}",
        d0,
        separation(&repel)
    );
}

#[test]
fn acceleration_is_softened_at_contact() {
    // Two overlapping particles: the softening keeps the force finite.
    let acc = accelerations(&[0.0; 6], &[1.0, 1.0]);
    assert!(acc.iter().all(|a| a.is_finite()));
    // And at separation r the magnitude matches q²·r/(r²+ε²)^{3/2}.
    let r = 0.7;
    let acc = accelerations(&[0.0, 0.0, 0.0, r, 0.0, 0.0], &[1.0, 1.0]);
    let expect = r / (r * r + SOFTENING * SOFTENING).powf(1.5);
    assert!((acc[0] + expect).abs() < 1e-15);
    assert!((acc[3] - expect).abs() < 1e-15);
}

#[test]
fn energy_drift_is_bounded() {
    let config = NBodyConfig::default();
    for seed in [11u64, 12, 13] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = random_state(&config, &mut rng);
        let e0 = total_energy(&state);
        leapfrog(&mut state, 1e-3, 1000);
        let e1 = total_energy(&state);
        let drift = (e1 - e0).abs() / e0.abs().max(1.0);
        assert!(
            drift < EPS_ENERGY_DRIFT,
            "seed {seed}: relative energy drift {drift:.3e} over 1000 steps"
        );
    }
}

#[test]
fn momentum_is_conserved() {
    let config = NBodyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut state = random_state(&config, &mut rng);
    let p0 = total_momentum(&state);
    // One unit of simulated time.
    leapfrog(&mut state, 1e-3, 1000);
    let p1 = total_momentum(&state);
    let drift = (0..3).map(|k| (p1[k] - p0[k]).abs()).fold(0.0f64, f64::max);
    assert!(
        drift < EPS_MOMENTUM_DRIFT,
        "momentum drift {drift:.3e} per unit time"
    );
}

#[test]
fn generator_is_deterministic_and_seed_sensitive() {
    let config = NBodyConfig {
        particles: 4,
        steps: 50,
        ..NBodyConfig::default()
    };
    let a = nbody_generate(3, 7, &config);
    let b = nbody_generate(3, 7, &config);
    assert_eq!(a, b, "same seed must reproduce identical samples");
    let c = nbody_generate(3, 8, &config);
    assert_ne!(a[0].state.positions, c[0].state.positions);
    // Samples within a run differ from each other.
    assert_ne!(a[0].state.positions, a[1].state.positions);
    // The horizon actually moved the particles.
    assert_ne!(a[0].state.positions, a[0].final_positions);
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

#[test]
fn zero_velocity_state_has_zero_motion_channels() {
    let state = NBodyState {
        positions: vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0],
        velocities: vec![0.0; 9],
        charges: vec![1.0, -1.0, 1.0],
    };
    let f = featurize_host(&state);
    // Speed scalar (channel 0 of 2) is zero everywhere; charge is passed through.
    for i in 0..3 {
        assert_eq!(f.scalars[i * 2], 0.0);
        assert_eq!(f.scalars[i * 2 + 1], state.charges[i]);
    }
    // Velocity vector channel (channel 0 of 2) is zero everywhere.
    for i in 0..3 {
        for k in 0..3 {
            assert_eq!(f.vectors[(i * 3 + k) * 2], 0.0);
        }
    }
}

#[test]
fn centroid_particle_gets_zero_direction_without_nan() {
    // A single particle sits exactly at the centroid.
    let state = NBodyState {
        positions: vec![2.0, -1.0, 0.5],
        velocities: vec![0.1, 0.2, 0.3],
        charges: vec![1.0],
    };
    let f = featurize_host(&state);
    assert!(f.vectors.iter().all(|v| v.is_finite()));
    for k in 0..3 {
        assert_eq!(f.vectors[k * 2 + 1], 0.0, "direction channel must be zero");
    }
    assert!(f.receivers.is_empty() && f.senders.is_empty());

    // Symmetric pair: both particles are equidistant from the centroid and
    // their direction vectors are opposite units.
    let pair = NBodyState {
        positions: vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        velocities: vec![0.0; 6],
        charges: vec![1.0, 1.0],
    };
    let f = featurize_host(&pair);
    assert_eq!(f.vectors[1], 1.0); // particle 0 points +x toward centroid
    assert_eq!(f.vectors[3 * 2 + 1], -1.0); // particle 1 points -x
}

#[test]
fn edge_extra_is_the_charge_product() {
    let state = pair_state([1.0, -1.0]);
    let f = featurize_host(&state);
    assert_eq!(f.receivers, vec![0, 1]);
    assert_eq!(f.senders, vec![1, 0]);
    assert_eq!(f.edge_extra, vec![-1.0, -1.0]);

    let like = pair_state([-1.0, -1.0]);
    assert_eq!(featurize_host(&like).edge_extra, vec![1.0, 1.0]);
}

#[test]
fn featurization_commutes_with_rotation() {
    let config = NBodyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let state = random_state(&config, &mut rng);
    let r = random_rotation(3, &mut rng).expect("rotation");
    let rotated = NBodyState {
        positions: state.positions.chunks(3).flat_map(|v| r.apply(v)).collect(),
        velocities: state
            .velocities
            .chunks(3)
            .flat_map(|v| r.apply(v))
            .collect(),
        charges: state.charges.clone(),
    };
    let f = featurize_host(&state);
    let g = featurize_host(&rotated);
    // Scalars are rotation invariant.
    for (a, b) in f.scalars.iter().zip(&g.scalars) {
        assert!((a - b).abs() < 1e-13, "scalar changed under rotation");
    }
    // Both vector channels co-rotate.
    let p = state.particles();
    for i in 0..p {
        for ch in 0..2 {
            let v: Vec<f64> = (0..3).map(|k| f.vectors[(i * 3 + k) * 2 + ch]).collect();
            let rv = r.apply(&v);
            for k in 0..3 {
                let got = g.vectors[(i * 3 + k) * 2 + ch];
                assert!(
                    (got - rv[k]).abs() < 1e-13,
                    "vector channel {ch} did not co-rotate"
                );
            }
        }
    }
    // Edge features are untouched.
    assert_eq!(f.edge_extra, g.edge_extra);
}

#[test]
fn tape_featurization_matches_host_features() {
    let config = NBodyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let state = random_state(&config, &mut rng);
    let grid = repulsion_grid_default(3, 6, 0).expect("grid");
    let tape = Tape::<f64>::new();
    let graph = nbody_featurize(&tape, &state, &grid, false).expect("featurize");
    let f = featurize_host(&state);
    assert_eq!(read(&tape, &graph.scalars.clone().unwrap()), f.scalars);
    assert_eq!(read(&tape, &graph.vectors.clone().unwrap()), f.vectors);
    assert_eq!(
        read(&tape, &graph.edge_extra.clone().unwrap()),
        f.edge_extra
    );
    assert_eq!(read(&tape, &graph.positions), state.positions);
    assert_eq!(graph.receivers, f.receivers);
    assert_eq!(graph.senders, f.senders);
}

#[test]
fn differentiable_featurization_exposes_position_gradients() {
    let state = pair_state([1.0, -1.0]);
    let grid = platonic_grid(4).expect("grid");
    let tape = Tape::<f64>::new();
    let graph = nbody_featurize(&tape, &state, &grid, true).expect("featurize");
    let s = tape.sum_all(&graph.positions).expect("sum");
    let grads = tape.backward(&s).expect("backward");
    let g = grads.wrt(&graph.positions).expect("position gradient");
    assert_eq!(read(&tape, &g), vec![1.0; 6]);
}

// ---------------------------------------------------------------------------
// Sample <-> cloud conversion
// ---------------------------------------------------------------------------

#[test]
fn sample_cloud_round_trip_is_exact() {
    let config = NBodyConfig {
        particles: 4,
        steps: 25,
        ..NBodyConfig::default()
    };
    let samples = nbody_generate(2, 3, &config);
    for sample in &samples {
        let cloud = sample_to_cloud(sample);
        cloud.validate().expect("generated cloud is valid");
        let back = cloud_to_sample(&cloud).expect("convertible");
        assert_eq!(&back, sample, "round trip must preserve every bit");
    }
    // And through the serialized form too.
    let clouds: Vec<PointCloudFile> = samples.iter().map(sample_to_cloud).collect();
    let mut buf = Vec::new();
    write_clouds(&clouds, &mut buf).expect("write");
    let loaded = read_clouds(buf.as_slice()).expect("read");
    for (cloud, sample) in loaded.iter().zip(&samples) {
        assert_eq!(&cloud_to_sample(cloud).expect("convertible"), sample);
    }
}

#[test]
fn cloud_to_sample_rejects_foreign_clouds() {
    // 2-D cloud.
    let flat = cloud(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
    assert!(cloud_to_sample(&flat).is_err());

    // Missing charge / velocity / targets.
    let bare = cloud(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]);
    assert!(cloud_to_sample(&bare).is_err());

    let mut no_targets = bare.clone();
    no_targets
        .scalars
        .insert("charge".into(), ScalarField::Flat(vec![1.0, -1.0]));
    no_targets.vectors.insert(
        "velocity".into(),
        vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
    );
    assert!(cloud_to_sample(&no_targets).is_err());

    let mut complete = no_targets.clone();
    complete.targets = Some(CloudTargets {
        scalar: None,
        node_vector: Some(vec![vec![0.1, 0.0, 0.0], vec![0.9, 0.0, 0.0]]),
    });
    assert!(cloud_to_sample(&complete).is_ok());
}
