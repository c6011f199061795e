//! Training-harness contracts: seeded splits, loss descent on tiny runs,
//! byte-identical logs across reruns, the zero-learning-rate no-op, the
//! non-finite abort, the parameter-matched baseline search, checkpoint round
//! trips, and the toy energy task's analytic labels.

use std::collections::HashSet;

use ponita::grids::repulsion_grid_default;
use ponita::layers::{Conditioning, Ponita, PonitaConfig, ReadoutKind};
use ponita::nbody::{nbody_generate, NBodyConfig};
use ponita::tensor::cosine_lr;
use ponita::train::{
    cloud_to_energy_sample, evaluate_displacement, load_model, matched_distance_only_config,
    save_model, split_train_val, toy_energy_generate, train_displacement, train_energy,
    EnergySample, TrainConfig, TrainError, TrainOutcome,
};

fn tiny_model_config() -> PonitaConfig {
    PonitaConfig {
        dim: 3,
        num_ori: 4,
        channels: 8,
        layers: 1,
        basis_dim: 8,
        degree: 2,
        widen: 2,
        length_scale: 1.0,
        scalar_in: 2,
        vector_in: 2,
        edge_extra: 1,
        readout: ReadoutKind::Vector,
        conditioning: Conditioning::Anisotropic,
        mean_aggregation: false,
    }
}

fn tiny_dataset(count: usize) -> Vec<ponita::nbody::NBodySample> {
    let config = NBodyConfig {
        particles: 4,
        steps: 30,
        ..NBodyConfig::default()
    };
    nbody_generate(count, 17, &config)
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch: 4,
        lr: 1e-3,
        warmup: 1,
        seed: 5,
        val_fraction: 0.25,
        lambda_force: 500.0,
        augment: true,
    }
}

#[test]
fn split_is_seeded_and_disjoint() {
    let items: Vec<usize> = (0..20).collect();
    let (train_a, val_a) = split_train_val(items.clone(), 0.25, 42);
    let (train_b, val_b) = split_train_val(items.clone(), 0.25, 42);
    assert_eq!(train_a, train_b);
    assert_eq!(val_a, val_b);
    assert_eq!(train_a.len(), 15);
    assert_eq!(val_a.len(), 5);
    let all: HashSet<usize> = train_a.iter().chain(&val_a).copied().collect();
    assert_eq!(all.len(), 20, "split must partition the items");

    let (train_c, _) = split_train_val(items, 0.25, 43);
    assert_ne!(train_a, train_c, "different seeds give different splits");

    // Degenerate fractions still leave both sides non-empty.
    let (t, v) = split_train_val(vec![1, 2], 0.0, 0);
    assert_eq!((t.len(), v.len()), (1, 1));
}

#[test]
fn displacement_training_reduces_loss_and_logs_csv() {
    let samples = tiny_dataset(16);
    let (train, val) = split_train_val(samples, 0.25, 1);
    let grid = repulsion_grid_default(3, 4, 0).expect("grid");
    let mut model = Ponita::new(tiny_model_config(), 3);
    let mut log = Vec::new();
    let outcome: TrainOutcome = train_displacement::<f64>(
        &mut model,
        &grid,
        &train,
        &val,
        &tiny_train_config(),
        &mut log,
    )
    .expect("training succeeds");

    assert!(
        outcome.final_train_loss < outcome.initial_train_loss,
        "train loss must decrease: {} -> {}",
        outcome.initial_train_loss,
        outcome.final_train_loss
    );
    assert!(outcome.final_val_loss.is_finite());
    assert_eq!(outcome.epochs_run, 4);

    let text = String::from_utf8(log).expect("utf-8 log");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,val_loss");
    assert_eq!(lines.len(), 1 + 4, "one row per epoch");
    for (e, line) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[0].parse::<usize>().unwrap(), e);
        let lr: f64 = cols[1].parse().unwrap();
        assert_eq!(
            lr,
            cosine_lr(e, 4, 1, 1e-3),
            "logged lr follows the schedule"
        );
        assert!(cols[2].parse::<f64>().unwrap().is_finite());
        assert!(cols[3].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn training_is_deterministic() {
    let samples = tiny_dataset(12);
    let (train, val) = split_train_val(samples, 0.25, 2);
    let grid = repulsion_grid_default(3, 4, 0).expect("grid");
    let mut config = tiny_train_config();
    config.epochs = 2;

    let run = || {
        let mut model = Ponita::new(tiny_model_config(), 9);
        let mut log = Vec::new();
        train_displacement::<f64>(&mut model, &grid, &train, &val, &config, &mut log)
            .expect("training succeeds");
        (log, model.store.flat_values())
    };
    let (log_a, params_a) = run();
    let (log_b, params_b) = run();
    assert_eq!(log_a, log_b, "logs must be byte-identical across reruns");
    let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
    assert_eq!(
        bits(&params_a),
        bits(&params_b),
        "parameters must match bitwise"
    );
}

#[test]
fn zero_learning_rate_keeps_parameters_fixed() {
    let samples = tiny_dataset(8);
    let (train, val) = split_train_val(samples, 0.25, 3);
    let grid = repulsion_grid_default(3, 4, 0).expect("grid");
    let mut model = Ponita::new(tiny_model_config(), 4);
    let before = model.store.flat_values();
    let config = TrainConfig {
        epochs: 2,
        lr: 0.0,
        batch: 3,
        ..tiny_train_config()
    };
    train_displacement::<f64>(&mut model, &grid, &train, &val, &config, std::io::sink())
        .expect("training succeeds");
    let after = model.store.flat_values();
    let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
    assert_eq!(
        bits(&before),
        bits(&after),
        "zero lr must not move any weight"
    );
}

#[test]
fn exploding_run_aborts_with_diagnostic() {
    let samples = tiny_dataset(8);
    let (train, val) = split_train_val(samples, 0.25, 4);
    let grid = repulsion_grid_default(3, 4, 0).expect("grid");
    let mut model = Ponita::new(tiny_model_config(), 6);
    let config = TrainConfig {
        epochs: 50,
        batch: 3,
        lr: 1e12,
        warmup: 0,
        ..tiny_train_config()
    };
    // Single precision overflows quickly once the weights reach ~1e12.
    let err = train_displacement::<f32>(&mut model, &grid, &train, &val, &config, std::io::sink())
        .expect_err("divergent run must abort");
    match &err {
        TrainError::NonFinite { value, .. } => assert!(!value.is_finite()),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
    let msg = err.to_string();
    assert!(
        msg.contains("epoch") && msg.contains("step"),
        "diagnostic names epoch and step: {msg}"
    );
}

#[test]
fn evaluation_is_batch_size_invariant() {
    let samples = tiny_dataset(10);
    let grid = repulsion_grid_default(3, 4, 0).expect("grid");
    let model = Ponita::new(tiny_model_config(), 11);
    let a = evaluate_displacement::<f64>(&model, &grid, &samples, 10).expect("eval");
    let b = evaluate_displacement::<f64>(&model, &grid, &samples, 3).expect("eval");
    assert!(
        (a - b).abs() <= 1e-10 * a.abs().max(1.0),
        "batched evaluation must not change the metric: {a} vs {b}"
    );
}

#[test]
fn matched_baseline_parameters_within_one_percent() {
    let full = PonitaConfig {
        channels: 64,
        layers: 5,
        num_ori: 12,
        basis_dim: 32,
        scalar_in: 2,
        vector_in: 2,
        edge_extra: 1,
        readout: ReadoutKind::Vector,
        ..PonitaConfig::default()
    };
    let target = Ponita::new(full.clone(), 0).param_count();
    let (baseline_cfg, mismatch) = matched_distance_only_config(&full);
    assert_eq!(baseline_cfg.conditioning, Conditioning::DistanceOnly);
    assert!(
        mismatch < 0.01,
        "baseline must match parameters within 1%: mismatch {mismatch:.4}"
    );
    let count = Ponita::new(baseline_cfg.clone(), 0).param_count();
    let measured = (count as f64 - target as f64).abs() / target as f64;
    assert!((measured - mismatch).abs() < 1e-12);
    // The baseline really is isotropic: no orientation-kernel parameters.
    let base = Ponita::new(baseline_cfg, 0);
    assert!(
        base.store.names().all(|n| !n.contains(".k2")),
        "distance-only baseline must not own orientation-kernel weights"
    );
    let full_model = Ponita::new(full, 0);
    assert!(
        full_model.store.names().any(|n| n.contains(".k2")),
        "the full model does own orientation-kernel weights"
    );
}

#[test]
fn checkpoint_round_trip_restores_the_model() {
    let dir = std::env::temp_dir().join(format!("ponita-ckpt-{}", std::process::id()));
    let mut model = Ponita::new(tiny_model_config(), 13);
    // Perturb away from init so the test can't pass by re-initialization.
    let flat = model.store.flat_values();
    model
        .store
        .set_flat(&flat.iter().map(|v| v * 1.5 + 0.01).collect::<Vec<_>>());
    save_model(&dir, &model).expect("save");
    let loaded = load_model(&dir).expect("load");
    assert_eq!(loaded.config.channels, model.config.channels);
    assert_eq!(loaded.config.readout, model.config.readout);
    assert_eq!(loaded.config.conditioning, model.config.conditioning);
    let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
    assert_eq!(
        bits(&loaded.store.flat_values()),
        bits(&model.store.flat_values()),
        "checkpoint must restore every weight bit"
    );
    std::fs::remove_dir_all(&dir).ok();
}

// ---------------------------------------------------------------------------
// Toy energy task
// ---------------------------------------------------------------------------

fn toy_energy(positions: &[f64]) -> f64 {
    let p = positions.len() / 3;
    let mut e = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            let r2: f64 = (0..3)
                .map(|k| (positions[i * 3 + k] - positions[j * 3 + k]).powi(2))
                .sum();
            e += 1.0 / (r2 + 0.5);
        }
    }
    e
}

#[test]
fn toy_labels_are_consistent_with_the_potential() {
    let clouds = toy_energy_generate(3, 5, 31);
    assert_eq!(clouds.len(), 3);
    for cloud in &clouds {
        cloud.validate().expect("valid cloud");
        let sample = cloud_to_energy_sample(cloud).expect("parsable");
        let p = sample.particles();
        assert_eq!(p, 5);
        assert_eq!(sample.scalar_width, 1);
        assert!(sample.scalars.iter().all(|&s| s == 1.0));

        // Stored energy matches the potential.
        assert!((sample.energy - toy_energy(&sample.positions)).abs() < 1e-12);

        // Stored forces are the negative gradient (central differences).
        let h = 1e-6;
        for c in 0..p * 3 {
            let mut plus = sample.positions.clone();
            let mut minus = sample.positions.clone();
            plus[c] += h;
            minus[c] -= h;
            let fd = -(toy_energy(&plus) - toy_energy(&minus)) / (2.0 * h);
            assert!(
                (fd - sample.forces[c]).abs() < 1e-6,
                "force coordinate {c}: analytic {} vs finite difference {fd}",
                sample.forces[c]
            );
        }

        // Interaction forces sum to zero.
        for k in 0..3 {
            let total: f64 = (0..p).map(|i| sample.forces[i * 3 + k]).sum();
            assert!(total.abs() < 1e-12, "net force component {k} = {total:.3e}");
        }
    }
    // Determinism.
    let again = toy_energy_generate(3, 5, 31);
    assert_eq!(clouds, again);
}

#[test]
fn energy_training_reduces_the_weighted_loss() {
    let clouds = toy_energy_generate(10, 3, 77);
    let samples: Vec<EnergySample> = clouds
        .iter()
        .map(|c| cloud_to_energy_sample(c).expect("parsable"))
        .collect();
    let (train, val) = split_train_val(samples, 0.2, 8);
    let grid = repulsion_grid_default(3, 4, 0).expect("grid");
    let mut config = tiny_model_config();
    config.scalar_in = 1;
    config.vector_in = 0;
    config.edge_extra = 0;
    config.readout = ReadoutKind::Scalar;
    let mut model = Ponita::new(config, 19);
    let train_cfg = TrainConfig {
        epochs: 4,
        batch: 4,
        lr: 2e-3,
        warmup: 1,
        ..tiny_train_config()
    };
    let mut log = Vec::new();
    let outcome =
        train_energy::<f64>(&mut model, &grid, &train, &val, &train_cfg, &mut log).expect("trains");
    assert!(
        outcome.final_train_loss < outcome.initial_train_loss,
        "weighted energy+force loss must decrease: {} -> {}",
        outcome.initial_train_loss,
        outcome.final_train_loss
    );
    let text = String::from_utf8(log).unwrap();
    assert!(text.starts_with("epoch,lr,train_loss,val_loss\n"));
    assert_eq!(text.lines().count(), 1 + 4);
}
