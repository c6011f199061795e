//! Optimizer and checkpoint contracts: Adam update arithmetic, the cosine
//! schedule's endpoints, and exact round-tripping of the binary checkpoint
//! format including rejection of malformed files.

use approx::assert_abs_diff_eq;

use ponita::tensor::{
    adam_step, cosine_lr, load_checkpoint, read_checkpoint, save_checkpoint, AdamConfig, AdamState,
    CheckpointEntry, TensorError,
};

#[test]
fn adam_leaves_parameters_unchanged_on_zero_gradients() {
    let mut params = vec![vec![1.0_f64, -2.0, 3.5], vec![0.25]];
    let before = params.clone();
    let mut state = AdamState::new(&[3, 1]);
    let config = AdamConfig::default();
    adam_step(&mut params, &[vec![0.0; 3], vec![0.0]], &mut state, &config);
    assert_eq!(params, before);
    assert_eq!(state.step_count(), 1);
}

#[test]
fn adam_first_step_is_signed_lr_within_eps() {
    // After one step the bias corrections cancel exactly:
    // m̂ = g, v̂ = g², so Δ = −lr·g/(|g|+eps·scaling) ≈ −lr·sign(g).
    let lr = 5e-4;
    let config = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let mut params = vec![vec![1.0_f64, 1.0, 1.0]];
    let grads = vec![vec![0.3_f64, -2.0, 1e-3]];
    let mut state = AdamState::new(&[3]);
    adam_step(&mut params, &grads, &mut state, &config);
    for (p, g) in params[0].iter().zip(&grads[0]) {
        let expected = 1.0 - lr * g / (g.abs() + config.eps);
        assert_abs_diff_eq!(*p, expected, epsilon = 1e-15);
    }
}

#[test]
fn adam_is_deterministic() {
    let config = AdamConfig::default();
    let run = || {
        let mut params = vec![vec![0.5_f64, -0.5], vec![2.0]];
        let mut state = AdamState::new(&[2, 1]);
        for step in 0..10 {
            let s = step as f64;
            let grads = vec![vec![0.1 + s * 0.01, -0.2], vec![0.05 * s]];
            adam_step(&mut params, &grads, &mut state, &config);
        }
        params
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_descends_a_quadratic() {
    // f(p) = Σ p², g = 2p: two hundred steps must shrink the norm a lot.
    let config = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };
    let mut params = vec![vec![3.0_f64, -2.0, 1.0]];
    let mut state = AdamState::new(&[3]);
    let norm0: f64 = params[0].iter().map(|p| p * p).sum();
    for _ in 0..200 {
        let grads = vec![params[0].iter().map(|p| 2.0 * p).collect::<Vec<_>>()];
        adam_step(&mut params, &grads, &mut state, &config);
    }
    let norm1: f64 = params[0].iter().map(|p| p * p).sum();
    assert!(
        norm1 < norm0 * 1e-2,
        "expected large decrease: {norm0} → {norm1}"
    );
}

#[test]
fn cosine_schedule_hits_its_endpoints() {
    let base = 5e-4;
    // With warmup 50: epoch 0 ramps at base/50, epoch 49 reaches base,
    // the final epoch lands on 0.
    assert_abs_diff_eq!(cosine_lr(0, 500, 50, base), base / 50.0, epsilon = 1e-18);
    assert_abs_diff_eq!(cosine_lr(49, 500, 50, base), base, epsilon = 1e-18);
    assert_abs_diff_eq!(cosine_lr(50, 500, 50, base), base, epsilon = 1e-18);
    assert_abs_diff_eq!(cosine_lr(499, 500, 50, base), 0.0, epsilon = 1e-18);
    // Midpoint of the decay span is half the base rate.
    let mid = cosine_lr(50 + (499 - 50) / 2, 500, 50, base);
    assert!((mid - base / 2.0).abs() < base * 0.01, "midpoint {mid}");
    // No warmup: epoch 0 is the peak.
    assert_abs_diff_eq!(cosine_lr(0, 100, 0, base), base, epsilon = 1e-18);
    assert_abs_diff_eq!(cosine_lr(99, 100, 0, base), 0.0, epsilon = 1e-18);
}

#[test]
fn cosine_schedule_is_monotone_after_warmup() {
    let base = 1e-3;
    let mut prev = f64::INFINITY;
    for epoch in 10..200 {
        let lr = cosine_lr(epoch, 200, 10, base);
        assert!(lr <= prev + 1e-18, "not monotone at epoch {epoch}");
        prev = lr;
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let entries = vec![
        CheckpointEntry {
            name: "layer0.weight".to_string(),
            shape: vec![2, 3],
            data: vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300, -0.1],
        },
        CheckpointEntry {
            name: "scalar".to_string(),
            shape: vec![],
            data: vec![42.0],
        },
        CheckpointEntry {
            name: "empty".to_string(),
            shape: vec![0, 4],
            data: vec![],
        },
    ];
    let mut buf = Vec::new();
    ponita::tensor::write_checkpoint(&entries, &mut buf).unwrap();
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.len(), entries.len());
    for (a, b) in back.iter().zip(&entries) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.shape, b.shape);
        assert_eq!(a.data.len(), b.data.len());
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x.to_bits(), y.to_bits(), "entry {} not bit-exact", a.name);
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.pckp");
    let entries = vec![CheckpointEntry {
        name: "w".to_string(),
        shape: vec![4],
        data: vec![0.1, 0.2, 0.3, 0.4],
    }];
    save_checkpoint(&entries, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back[0].data, entries[0].data);
}

#[test]
fn checkpoint_rejects_garbage_and_truncation() {
    // Wrong magic.
    let garbage = b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00";
    assert!(matches!(
        read_checkpoint(&mut garbage.as_slice()),
        Err(TensorError::CheckpointFormat(_))
    ));

    // Valid header, truncated body.
    let entries = vec![CheckpointEntry {
        name: "w".to_string(),
        shape: vec![8],
        data: vec![1.0; 8],
    }];
    let mut buf = Vec::new();
    ponita::tensor::write_checkpoint(&entries, &mut buf).unwrap();
    buf.truncate(buf.len() - 5);
    assert!(read_checkpoint(&mut buf.as_slice()).is_err());

    // Unsupported version.
    let mut versioned = Vec::new();
    ponita::tensor::write_checkpoint(&entries, &mut versioned).unwrap();
    versioned[4] = 99;
    assert!(matches!(
        read_checkpoint(&mut versioned.as_slice()),
        Err(TensorError::CheckpointFormat(_))
    ));
}

#[test]
fn checkpoint_entry_converts_f32_buffers() {
    let buf = vec![0.5_f32, -1.25, 3.0];
    let entry = CheckpointEntry::from_buffer::<f32>("b", &[3], &buf);
    assert_eq!(entry.data, vec![0.5, -1.25, 3.0]);
    let back: Vec<f32> = entry.to_buffer();
    assert_eq!(back, buf);
}
