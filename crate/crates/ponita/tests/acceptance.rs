//! The acceptance gate: one test per release criterion, each printing a
//! single `criterion N: PASS/FAIL` line (visible with `--nocapture`).
//!
//! Criteria 1–7 and 9 drive the reusable audit checks at their full trial
//! counts and stated tolerances. Criterion 8 is the desk-scale learning
//! comparison: it trains the full anisotropic model and the
//! parameter-matched distance-only baseline for 500 epochs each on 2000
//! synthetic samples, which dominates the suite's runtime (hours on one
//! core; the two runs share one data generation).

use std::io;
use std::time::Instant;

use ponita::audit::{
    attribute_invariance, co_rotated_equivariance, fixed_grid_trend, grid_quality,
    readout_identity, run_gradcheck, separability, stabilizer_independence, CheckResult,
};
use ponita::grids::cached_repulsion_grid;
use ponita::layers::{Conditioning, Ponita, PonitaConfig, ReadoutKind};
use ponita::nbody::{nbody_generate, NBodyConfig};
use ponita::train::{
    evaluate_displacement, matched_distance_only_config, split_train_val, train_displacement,
    TrainConfig,
};

fn report(criterion: usize, check: &CheckResult) {
    println!(
        "criterion {criterion}: {} — {} (max {:.3e}, tol {:.1e}) {}",
        if check.passed { "PASS" } else { "FAIL" },
        check.name,
        check.max_deviation,
        check.tolerance,
        check.detail
    );
    assert!(
        check.passed,
        "criterion {criterion} failed: {} deviation {:.3e} exceeds {:.1e}",
        check.name, check.max_deviation, check.tolerance
    );
}

#[test]
fn criterion_1_attribute_invariance_and_bijectivity() {
    let started = Instant::now();
    let check = attribute_invariance(1000, 0).expect("check runs");
    let elapsed = started.elapsed().as_secs_f64();
    report(1, &check);
    assert!(
        elapsed < 5.0,
        "criterion 1 runtime bound: {elapsed:.2}s >= 5s"
    );
}

#[test]
fn criterion_2_stabilizer_independence() {
    let check = stabilizer_independence(1000, 1).expect("check runs");
    report(2, &check);
}

#[test]
fn criterion_3_exact_co_rotated_equivariance() {
    let started = Instant::now();
    let check = co_rotated_equivariance(100, 2).expect("check runs");
    let elapsed = started.elapsed().as_secs_f64();
    report(3, &check);
    assert!(
        elapsed < 60.0,
        "criterion 3 runtime bound: {elapsed:.2}s >= 60s"
    );
}

#[test]
fn criterion_4_fixed_grid_equivariance_trend() {
    let check = fixed_grid_trend(100, 3).expect("check runs");
    report(4, &check);
}

#[test]
fn criterion_5_separable_equals_non_separable() {
    let check = separability(10, 4).expect("check runs");
    report(5, &check);
}

#[test]
fn criterion_6_gradient_correctness() {
    let reportcard = run_gradcheck(0).expect("battery runs");
    assert_eq!(reportcard.checks.len(), 7, "full gradient battery");
    for check in &reportcard.checks {
        println!("  {check}");
    }
    println!(
        "criterion 6: {} — every layer and both networks pass central finite differences",
        if reportcard.passed() { "PASS" } else { "FAIL" }
    );
    assert!(reportcard.passed(), "criterion 6 failed:\n{reportcard}");
}

#[test]
fn criterion_7_grid_quality() {
    let checks = grid_quality(6).expect("checks run");
    assert_eq!(checks.len(), 2, "platonic angles plus second moment");
    let passed = checks.iter().all(|c| c.passed);
    for check in &checks {
        println!("  {check}");
    }
    println!(
        "criterion 7: {} — repulsion grids match platonic minima; icosahedral second moment is 4·I",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion 7 failed");
}

#[test]
fn criterion_8_desk_scale_learning_beats_distance_only_baseline() {
    let started = Instant::now();
    let samples = nbody_generate(2000, 3, &NBodyConfig::default());
    let (train, val) = split_train_val(samples, 0.1, 0);
    assert_eq!((train.len(), val.len()), (1800, 200));
    let grid = cached_repulsion_grid(3, 12, 0).expect("orientation grid");

    let full_cfg = PonitaConfig {
        dim: 3,
        num_ori: 12,
        channels: 64,
        layers: 5,
        basis_dim: 32,
        degree: 3,
        widen: 2,
        length_scale: 1.0,
        scalar_in: 2,
        vector_in: 2,
        edge_extra: 1,
        readout: ReadoutKind::Vector,
        conditioning: Conditioning::Anisotropic,
        mean_aggregation: false,
    };
    let (base_cfg, mismatch) = matched_distance_only_config(&full_cfg);
    assert!(
        mismatch < 0.01,
        "baseline parameter budget within 1%: mismatch {:.4}",
        mismatch
    );

    let config = TrainConfig::default();
    assert_eq!((config.epochs, config.batch), (500, 32));

    let mut full = Ponita::new(full_cfg, 0);
    let full_params = full.param_count();
    train_displacement::<f32>(&mut full, &grid, &train, &val, &config, io::sink())
        .expect("full model trains");
    let full_mse = evaluate_displacement::<f64>(&full, &grid, &val, 32).expect("val eval");

    let mut baseline = Ponita::new(base_cfg, 0);
    let base_params = baseline.param_count();
    train_displacement::<f32>(&mut baseline, &grid, &train, &val, &config, io::sink())
        .expect("baseline trains");
    let base_mse = evaluate_displacement::<f64>(&baseline, &grid, &val, 32).expect("val eval");

    let passed = full_mse < base_mse;
    println!(
        "criterion 8: {} — anisotropic val MSE {full_mse:.6e} ({full_params} params) vs \
         distance-only {base_mse:.6e} ({base_params} params); 2000 samples, 500 epochs, \
         {:.0}s total",
        if passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    assert!(
        passed,
        "criterion 8 failed: full model val MSE {full_mse:.6e} not below baseline {base_mse:.6e}"
    );
}

#[test]
fn criterion_9_readout_identity() {
    let check = readout_identity(7).expect("check runs");
    report(9, &check);
}
