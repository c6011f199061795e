//! Kernel-field tests: polynomial embedding enumeration, shared-basis
//! evaluation contracts (empty edges, determinism, finite-difference
//! gradients), spherical-kernel precompute invariances, and the
//! random-Fourier stub.

// Coordinate loops below index several parallel arrays at once; the range
// loop is the clearer expression there.
#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ponita::geometry::{random_rotation, Rotation};
use ponita::grids::{platonic_grid, repulsion_grid_default, rotate_grid};
use ponita::kernel::{
    eval_spatial_kernel, poly_embed, precompute_spherical_kernel, KernelBasis, KernelError,
    KernelHead, PolynomialEmbedding, RandomFourierFeatures,
};
use ponita::params::ParamStore;
use ponita::tensor::{central_difference, relative_error, Tape};
use ponita::tolerances::{EPS_FD_COMPOSITE, FD_STEP};

fn binomial(n: usize, k: usize) -> usize {
    // Small exact binomial for independent length verification.
    let k = k.min(n - k);
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k {
        num *= (n - i) as u128;
        den *= (i + 1) as u128;
    }
    (num / den) as usize
}

#[test]
fn poly_embed_single_variable_degree_two() {
    assert_eq!(poly_embed(&[3.0], 2), vec![3.0, 9.0]);
}

#[test]
fn poly_embed_two_variables_degree_two_is_graded_lex() {
    let x = 2.0;
    let y = 3.0;
    // (x, y, x², xy, y²)
    assert_eq!(poly_embed(&[x, y], 2), vec![2.0, 3.0, 4.0, 6.0, 9.0]);
}

#[test]
fn poly_embed_three_variables_degree_three_has_nineteen_terms() {
    let e = PolynomialEmbedding::new(3, 3);
    assert_eq!(e.output_len(), 19);
    assert_eq!(poly_embed(&[0.5, -1.0, 2.0], 3).len(), 19);
}

#[test]
fn poly_embed_length_matches_binomial_formula() {
    for input_dim in 1..=4 {
        for degree in 1..=4u32 {
            let e = PolynomialEmbedding::new(input_dim, degree);
            let expected = binomial(input_dim + degree as usize, degree as usize) - 1;
            assert_eq!(e.output_len(), expected, "dim {input_dim} degree {degree}");
            // Monomials are unique and have degree in 1..=degree.
            let mut seen = std::collections::HashSet::new();
            for m in e.monomials() {
                let d: u32 = m.iter().sum();
                assert!(d >= 1 && d <= degree);
                assert!(seen.insert(m.clone()), "duplicate monomial {m:?}");
            }
        }
    }
}

#[test]
fn poly_embed_host_and_graph_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let e = PolynomialEmbedding::new(3, 3);
    let rows = 5;
    let attrs: Vec<f64> = (0..rows * 3)
        .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
        .collect();
    let tape = Tape::<f64>::new();
    let a = tape.constant(&[rows, 3], attrs.clone()).unwrap();
    let emb = e.embed(&tape, &a, None).unwrap();
    assert_eq!(emb.shape(), &[rows, e.output_len()]);
    let vals = tape.read(&emb).unwrap();
    for r in 0..rows {
        let host = e.embed_host(&attrs[r * 3..(r + 1) * 3]);
        for (k, h) in host.iter().enumerate() {
            let g = vals[r * e.output_len() + k];
            assert!(
                (g - h).abs() <= 1e-15 * h.abs().max(1.0),
                "row {r} monomial {k}: graph {g} vs host {h}"
            );
        }
    }
}

fn small_kernel(store: &mut ParamStore, seed: u64) -> (KernelBasis, KernelHead) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = KernelBasis::new(store, "k", 3, 2, 6, &[1.0, 1.0, 1.0], &mut rng);
    let head = KernelHead::new(store, "head", 6, 4, &mut rng);
    (basis, head)
}

#[test]
fn eval_basis_handles_zero_edges() {
    let mut store = ParamStore::new();
    let (basis, head) = small_kernel(&mut store, 1);
    let tape = Tape::<f64>::new();
    let bound = store.bind(&tape).unwrap();
    let attrs = tape.constant(&[0, 3], vec![]).unwrap();
    let b = basis.eval_basis(&tape, &bound, &attrs).unwrap();
    assert_eq!(b.shape(), &[0, 6]);
    let k = eval_spatial_kernel(&tape, &bound, &head, &b).unwrap();
    assert_eq!(k.shape(), &[0, 4]);
    assert!(tape.read(&k).unwrap().is_empty());
}

#[test]
fn eval_basis_is_deterministic_across_rows_and_runs() {
    let run = || {
        let mut store = ParamStore::new();
        let (basis, head) = small_kernel(&mut store, 7);
        let tape = Tape::<f64>::new();
        let bound = store.bind(&tape).unwrap();
        // Two identical rows, one different.
        let attrs = tape
            .constant(&[3, 3], vec![0.1, -0.4, 0.9, 0.1, -0.4, 0.9, 0.5, 0.5, 0.5])
            .unwrap();
        let b = basis.eval_basis(&tape, &bound, &attrs).unwrap();
        let k = head.eval(&tape, &bound, &b).unwrap();
        (tape.read(&b).unwrap(), tape.read(&k).unwrap())
    };
    let (b1, k1) = run();
    let (b2, k2) = run();
    // Bitwise equal across runs (seeded init, deterministic eval).
    assert!(b1.iter().zip(&b2).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(k1.iter().zip(&k2).all(|(x, y)| x.to_bits() == y.to_bits()));
    // Identical attribute rows give bitwise-identical basis and kernel rows.
    assert!(b1[..6]
        .iter()
        .zip(&b1[6..12])
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(k1[..4]
        .iter()
        .zip(&k1[4..8])
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn basis_and_head_gradients_pass_finite_differences() {
    let mut store = ParamStore::new();
    let (basis, head) = small_kernel(&mut store, 3);
    let attrs_host = vec![0.3, -0.2, 0.8, -0.6, 0.4, 0.1];

    let eval_loss = |flat: &[f64]| -> f64 {
        let mut s = store.clone();
        s.set_flat(flat);
        let tape = Tape::<f64>::new();
        let bound = s.bind(&tape).unwrap();
        let attrs = tape.constant(&[2, 3], attrs_host.clone()).unwrap();
        let b = basis.eval_basis(&tape, &bound, &attrs).unwrap();
        let k = head.eval(&tape, &bound, &b).unwrap();
        let loss = tape.sum_all(&tape.square(&k).unwrap()).unwrap();
        tape.read_scalar(&loss).unwrap()
    };

    // Analytic gradient at the initial parameters.
    let tape = Tape::<f64>::new();
    let bound = store.bind(&tape).unwrap();
    let attrs = tape.constant(&[2, 3], attrs_host.clone()).unwrap();
    let b = basis.eval_basis(&tape, &bound, &attrs).unwrap();
    let k = head.eval(&tape, &bound, &b).unwrap();
    let loss = tape.sum_all(&tape.square(&k).unwrap()).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let flat_grad: Vec<f64> = store
        .grad_vecs(&tape, &bound, &grads)
        .unwrap()
        .into_iter()
        .flatten()
        .collect();

    let x0 = store.flat_values();
    assert_eq!(flat_grad.len(), x0.len());
    let mut f = eval_loss;
    let mut worst = 0.0_f64;
    for i in 0..x0.len() {
        let numeric = central_difference(&mut f, &x0, i, FD_STEP);
        worst = worst.max(relative_error(flat_grad[i], numeric));
    }
    assert!(
        worst <= EPS_FD_COMPOSITE,
        "worst relative error over {} parameters: {worst}",
        x0.len()
    );
}

#[test]
fn spherical_kernel_shape_and_equal_diagonal() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let basis = KernelBasis::new(&mut store, "k2", 1, 3, 8, &[1.0], &mut rng);
    let head = KernelHead::new(&mut store, "h2", 8, 3, &mut rng);
    let grid = repulsion_grid_default(3, 12, 0).unwrap();
    let tape = Tape::<f64>::new();
    let bound = store.bind(&tape).unwrap();
    let k2 = precompute_spherical_kernel(&tape, &bound, &basis, &head, &grid).unwrap();
    assert_eq!(k2.shape(), &[12, 12, 3]);
    let vals = tape.read(&k2).unwrap();
    // Diagonal entries all see the same argument (o·o = 1): bitwise equal.
    let first: Vec<u64> = vals[0..3].iter().map(|v| v.to_bits()).collect();
    for o in 1..12 {
        let off = (o * 12 + o) * 3;
        for c in 0..3 {
            assert_eq!(vals[off + c].to_bits(), first[c], "diagonal o={o} c={c}");
        }
    }
}

#[test]
fn spherical_kernel_is_grid_rotation_invariant() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let basis = KernelBasis::new(&mut store, "k2", 1, 3, 8, &[1.0], &mut rng);
    let head = KernelHead::new(&mut store, "h2", 8, 2, &mut rng);
    let grid = repulsion_grid_default(3, 8, 2).unwrap();

    let eval = |g: &ponita::grids::SphereGrid| {
        let tape = Tape::<f64>::new();
        let bound = store.bind(&tape).unwrap();
        let k2 = precompute_spherical_kernel(&tape, &bound, &basis, &head, g).unwrap();
        tape.read(&k2).unwrap()
    };

    let base = eval(&grid);

    // Exact rotation (signed axis permutation): bitwise-identical K2.
    let exact = Rotation::from_entries(3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let rotated_exact = eval(&rotate_grid(&grid, &exact).unwrap());
    assert!(
        base.iter()
            .zip(&rotated_exact)
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "K2 must be bitwise invariant under an exact rotation"
    );

    // Generic rotation: invariant to rounding error.
    let mut rot_rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..5 {
        let r = random_rotation(3, &mut rot_rng).unwrap();
        let rotated = eval(&rotate_grid(&grid, &r).unwrap());
        let worst = base
            .iter()
            .zip(&rotated)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(
            worst <= 1e-12,
            "K2 deviated {worst} under a generic rotation"
        );
    }
}

#[test]
fn zero_head_gives_zero_spherical_kernel() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let basis = KernelBasis::new(&mut store, "k2", 1, 2, 4, &[1.0], &mut rng);
    let head = KernelHead::new(&mut store, "h2", 4, 3, &mut rng);
    // Zero every head parameter (weight and bias).
    let flat_len = store.param_count();
    let mut flat = store.flat_values();
    let head_params = 4 * 3 + 3;
    for v in flat[flat_len - head_params..].iter_mut() {
        *v = 0.0;
    }
    store.set_flat(&flat);

    let grid = platonic_grid(6).unwrap();
    let tape = Tape::<f64>::new();
    let bound = store.bind(&tape).unwrap();
    let k2 = precompute_spherical_kernel(&tape, &bound, &basis, &head, &grid).unwrap();
    assert!(tape.read(&k2).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn stored_basis_equals_composed_evaluation_bitwise() {
    // A head applied to a basis that was computed, read out, and re-uploaded
    // must match the head applied in the original graph bitwise: basis
    // sharing cannot change any layer's numbers.
    let mut store = ParamStore::new();
    let (basis, head) = small_kernel(&mut store, 21);
    let tape = Tape::<f64>::new();
    let bound = store.bind(&tape).unwrap();
    let attrs = tape
        .constant(
            &[4, 3],
            vec![
                0.2, 0.1, -0.3, 0.9, -0.9, 0.4, 0.0, 0.7, 0.5, -0.2, -0.1, 0.6,
            ],
        )
        .unwrap();
    let b = basis.eval_basis(&tape, &bound, &attrs).unwrap();
    let chained = tape.read(&head.eval(&tape, &bound, &b).unwrap()).unwrap();

    let stored = tape.read(&b).unwrap();
    let reuploaded = tape.constant(&[4, 6], stored).unwrap();
    let from_stored = tape
        .read(&head.eval(&tape, &bound, &reuploaded).unwrap())
        .unwrap();
    assert!(chained
        .iter()
        .zip(&from_stored)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn input_scale_divides_spatial_components() {
    // Scaling attributes by 2 and setting length scale 2 reproduces the
    // unscaled basis bitwise (division by a power of two is exact).
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store_a = ParamStore::new();
    let basis_a = KernelBasis::new(&mut store_a, "k", 2, 3, 5, &[1.0, 1.0], &mut rng);
    let mut rng_b = ChaCha8Rng::seed_from_u64(31);
    let mut store_b = ParamStore::new();
    let basis_b = KernelBasis::new(&mut store_b, "k", 2, 3, 5, &[2.0, 2.0], &mut rng_b);

    let attrs: Vec<f64> = vec![0.3, -0.7, 1.1, 0.25, -0.5, 0.875];
    let doubled: Vec<f64> = attrs.iter().map(|v| v * 2.0).collect();

    let tape_a = Tape::<f64>::new();
    let bound_a = store_a.bind(&tape_a).unwrap();
    let a = tape_a.constant(&[3, 2], attrs).unwrap();
    let out_a = tape_a
        .read(&basis_a.eval_basis(&tape_a, &bound_a, &a).unwrap())
        .unwrap();

    let tape_b = Tape::<f64>::new();
    let bound_b = store_b.bind(&tape_b).unwrap();
    let b = tape_b.constant(&[3, 2], doubled).unwrap();
    let out_b = tape_b
        .read(&basis_b.eval_basis(&tape_b, &bound_b, &b).unwrap())
        .unwrap();

    assert!(out_a
        .iter()
        .zip(&out_b)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn wrong_attribute_width_is_rejected() {
    let mut store = ParamStore::new();
    let (basis, _) = small_kernel(&mut store, 41);
    let tape = Tape::<f64>::new();
    let bound = store.bind(&tape).unwrap();
    let attrs = tape.constant(&[2, 2], vec![0.0; 4]).unwrap();
    assert!(matches!(
        basis.eval_basis(&tape, &bound, &attrs),
        Err(KernelError::InputDim {
            expected: 3,
            got: 2
        })
    ));
}

#[test]
fn random_fourier_stub_reports_unavailable() {
    let rff = RandomFourierFeatures {
        input_dim: 3,
        num_features: 64,
    };
    let tape = Tape::<f64>::new();
    let attrs = tape.constant(&[1, 3], vec![0.0; 3]).unwrap();
    assert!(matches!(
        rff.embed(&tape, &attrs),
        Err(KernelError::RffUnavailable)
    ));
}
