//! Attribute-map tests: frozen hand-computed values, invariance under
//! rigid motions, round-trips through the canonical representative, and
//! stabilizer (frame-choice) independence.

use std::f64::consts::{FRAC_PI_2, PI};

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ponita::attributes::{
    attr_r2s1, attr_r3s2, attr_r3s2_polar, attr_rn, attr_sen, attr_with_frame, canonical_frame,
    forward_attr, origin, random_point, representative_from_attr, stabilizer_invariance_check,
    Attribute, AttributeError, SpaceTag,
};
use ponita::geometry::{act, random_motion, HPoint, RigidMotion, Rotation};
use ponita::tolerances::{EPS_ATTR, EPS_STABILIZER};

const SPACES: [SpaceTag; 5] = [
    SpaceTag::Rn,
    SpaceTag::R2xS1,
    SpaceTag::SE2,
    SpaceTag::R3xS2,
    SpaceTag::SE3,
];

fn pos_ori(p: [f64; 3], o: [f64; 3]) -> HPoint {
    HPoint::pos_ori(p.to_vec(), o.to_vec()).unwrap()
}

fn pos_ori2(p: [f64; 2], o: [f64; 2]) -> HPoint {
    HPoint::pos_ori(p.to_vec(), o.to_vec()).unwrap()
}

#[test]
fn distance_attribute_on_a_3_4_5_triangle() {
    let a = attr_rn(&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0]).unwrap();
    assert_eq!(a.space, SpaceTag::Rn);
    assert_eq!(a.values, vec![5.0]);
}

#[test]
fn distance_attribute_rejects_mixed_dimensions() {
    let err = attr_rn(&[0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap_err();
    assert!(matches!(
        err,
        AttributeError::DimensionMismatch {
            expected: 2,
            got: 3
        }
    ));
}

#[test]
fn planar_attribute_quarter_turn_example() {
    let x_i = pos_ori2([0.0, 0.0], [1.0, 0.0]);
    let x_j = pos_ori2([1.0, 1.0], [0.0, 1.0]);
    let a = attr_r2s1(&x_i, &x_j).unwrap();
    assert_eq!(a.values[0], 1.0);
    assert_eq!(a.values[1], 1.0);
    assert_abs_diff_eq!(a.values[2], FRAC_PI_2, epsilon = 0.0);
}

#[test]
fn planar_attribute_angle_is_signed() {
    let x_i = pos_ori2([0.0, 0.0], [0.0, 1.0]);
    let x_j = pos_ori2([1.0, 1.0], [1.0, 0.0]);
    let a = attr_r2s1(&x_i, &x_j).unwrap();
    assert_abs_diff_eq!(a.values[2], -FRAC_PI_2, epsilon = 0.0);
}

#[test]
fn planar_attribute_antipodal_angle_is_plus_pi() {
    // A negative-zero cross product would make atan2 report -pi; the
    // attribute must stay inside the half-open interval (-pi, pi].
    let x_i = pos_ori2([0.0, 0.0], [1.0, 0.0]);
    let x_j = pos_ori2([0.0, 0.0], [-1.0, -0.0]);
    let a = attr_r2s1(&x_i, &x_j).unwrap();
    assert_eq!(a.values[2], PI);
    let x_j_up = pos_ori2([0.0, 0.0], [-1.0, 0.0]);
    assert_eq!(attr_r2s1(&x_i, &x_j_up).unwrap().values[2], PI);
}

#[test]
fn spatial_attribute_axis_aligned_example() {
    let x_i = pos_ori([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
    let x_j = pos_ori([1.0, 0.0, 2.0], [0.0, 0.0, 1.0]);
    let a = attr_r3s2(&x_i, &x_j).unwrap();
    assert_eq!(a.values, vec![2.0, 1.0, 0.0]);
}

#[test]
fn spatial_attribute_antipodal_example() {
    let x_i = pos_ori([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
    let x_j = pos_ori([0.0, 0.0, 5.0], [0.0, 0.0, -1.0]);
    let a = attr_r3s2(&x_i, &x_j).unwrap();
    assert_eq!(a.values[0], 5.0);
    assert_eq!(a.values[1], 0.0);
    assert_eq!(a.values[2], PI);
}

#[test]
fn spatial_attribute_is_not_symmetric() {
    // The attribute is anchored at the receiver's orientation, so swapping
    // the pair generally changes it; exhibit a seeded random witness.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut found = false;
    for _ in 0..50 {
        let x_i = random_point(SpaceTag::R3xS2, 2.0, &mut rng);
        let x_j = random_point(SpaceTag::R3xS2, 2.0, &mut rng);
        let ij = attr_r3s2(&x_i, &x_j).unwrap();
        let ji = attr_r3s2(&x_j, &x_i).unwrap();
        if ij.max_abs_diff(&ji) > 1e-3 {
            found = true;
            break;
        }
    }
    assert!(found, "no asymmetric pair found in 50 random draws");
}

#[test]
fn polar_attribute_example_and_consistency() {
    let x_i = pos_ori([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
    let x_j = pos_ori([1.0, 0.0, 2.0], [0.0, 0.0, 1.0]);
    let p = attr_r3s2_polar(&x_i, &x_j).unwrap();
    let r5 = 5.0_f64.sqrt();
    assert_abs_diff_eq!(p.values[0], r5, epsilon = 1e-15);
    assert_abs_diff_eq!(p.values[1], (2.0 / r5).acos(), epsilon = 1e-15);
    assert_eq!(p.values[2], 0.0);
    // Cartesian components are recovered as (r cos phi, r sin phi).
    let c = attr_r3s2(&x_i, &x_j).unwrap();
    assert_abs_diff_eq!(
        p.values[0] * p.values[1].cos(),
        c.values[0],
        epsilon = 1e-12
    );
    assert_abs_diff_eq!(
        p.values[0] * p.values[1].sin(),
        c.values[1],
        epsilon = 1e-12
    );
}

#[test]
fn polar_attribute_rejects_coincident_positions() {
    let x_i = pos_ori([1.0, 2.0, 3.0], [0.0, 0.0, 1.0]);
    let x_j = pos_ori([1.0, 2.0, 3.0], [1.0, 0.0, 0.0]);
    assert!(matches!(
        attr_r3s2_polar(&x_i, &x_j),
        Err(AttributeError::DegeneratePolar)
    ));
}

#[test]
fn pose_attribute_with_identity_rotations_is_the_translation() {
    let x_i = HPoint::Pose {
        p: vec![0.0, 0.0, 0.0],
        r: Rotation::identity(3),
    };
    let x_j = HPoint::Pose {
        p: vec![1.0, 2.0, 3.0],
        r: Rotation::identity(3),
    };
    let a = attr_sen(&x_i, &x_j).unwrap();
    assert_eq!(a.space, SpaceTag::SE3);
    assert_eq!(&a.values[0..3], &[1.0, 2.0, 3.0]);
    assert_eq!(
        &a.values[3..12],
        &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    );
}

#[test]
fn planar_pose_attribute_wraps_the_relative_angle() {
    let x_i = HPoint::Pose {
        p: vec![0.0, 0.0],
        r: Rotation::planar(3.0),
    };
    let x_j = HPoint::Pose {
        p: vec![0.0, 0.0],
        r: Rotation::planar(-3.0),
    };
    // The relative angle -6.0 wraps into (-pi, pi] as -6 + 2*pi.
    let a = attr_sen(&x_i, &x_j).unwrap();
    assert_eq!(a.space, SpaceTag::SE2);
    assert_abs_diff_eq!(a.values[2], -6.0 + 2.0 * PI, epsilon = 1e-12);
}

#[test]
fn representatives_match_frozen_examples() {
    let rep = representative_from_attr(&Attribute {
        values: vec![5.0],
        space: SpaceTag::Rn,
    })
    .unwrap();
    assert_eq!(rep, HPoint::PosOnly(vec![0.0, 0.0, 5.0]));

    let rep = representative_from_attr(&Attribute {
        values: vec![2.0, 1.0, 0.0],
        space: SpaceTag::R3xS2,
    })
    .unwrap();
    match rep {
        HPoint::PosOri { p, o } => {
            assert_eq!(p, vec![1.0, 0.0, 2.0]);
            assert_eq!(o, vec![0.0, 0.0, 1.0]);
        }
        other => panic!("expected a position-orientation point, got {other:?}"),
    }
}

#[test]
fn representative_rejects_invariant_violations() {
    let cases = [
        Attribute {
            values: vec![-1.0],
            space: SpaceTag::Rn,
        },
        Attribute {
            values: vec![0.0, -0.5, 1.0],
            space: SpaceTag::R3xS2,
        },
        Attribute {
            values: vec![0.0, 0.5, 4.0],
            space: SpaceTag::R3xS2,
        },
        Attribute {
            values: vec![0.0, 0.0, -PI],
            space: SpaceTag::R2xS1,
        },
        Attribute {
            values: vec![1.0, 2.0],
            space: SpaceTag::R3xS2,
        },
    ];
    for a in cases {
        assert!(
            matches!(
                representative_from_attr(&a),
                Err(AttributeError::InvalidAttribute { .. })
            ),
            "expected rejection for {a:?}"
        );
    }
    // A pose attribute whose rotation block is not orthogonal is rejected
    // through rotation validation.
    let mut values = vec![0.0, 0.0, 0.0];
    values.extend_from_slice(&[2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    assert!(representative_from_attr(&Attribute {
        values,
        space: SpaceTag::SE3,
    })
    .is_err());
}

#[test]
fn stabilizer_example_rotation_about_own_orientation() {
    // Frame twist by 1.23 rad about the orientation itself must leave the
    // spatial attribute untouched.
    let x_i = pos_ori([0.5, -0.25, 2.0], [0.0, 0.0, 1.0]);
    let x_j = pos_ori([1.5, 0.75, -1.0], [0.6, 0.0, 0.8]);
    let frame = canonical_frame(&x_i).unwrap();
    let h = Rotation::about_axis([0.0, 0.0, 1.0], 1.23);
    let twisted = RigidMotion::new(
        frame.translation.clone(),
        frame.rotation.compose(&h).unwrap(),
    )
    .unwrap();
    let base = attr_with_frame(SpaceTag::R3xS2, &frame, &x_j).unwrap();
    let alt = attr_with_frame(SpaceTag::R3xS2, &twisted, &x_j).unwrap();
    assert!(base.max_abs_diff(&alt) <= EPS_STABILIZER);
    // And the frame-based value agrees with the direct formula.
    let direct = attr_r3s2(&x_i, &x_j).unwrap();
    assert!(base.max_abs_diff(&direct) <= EPS_STABILIZER);
}

#[test]
fn stabilizer_check_is_tight_for_every_space() {
    for space in SPACES {
        let dev = stabilizer_invariance_check(space, 200, 11).unwrap();
        match space {
            SpaceTag::R2xS1 | SpaceTag::SE2 | SpaceTag::SE3 => {
                assert_eq!(dev, 0.0, "trivial stabilizer must give exact zero")
            }
            _ => assert!(
                dev <= EPS_STABILIZER,
                "{space:?} deviation {dev} above {EPS_STABILIZER}"
            ),
        }
    }
}

#[test]
fn attribute_lengths_match_their_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for space in SPACES {
        let x_i = random_point(space, 2.0, &mut rng);
        let x_j = random_point(space, 2.0, &mut rng);
        let a = forward_attr(space, &x_i, &x_j).unwrap();
        assert_eq!(a.values.len(), space.attr_len());
        assert_eq!(a.space, space);
    }
}

#[test]
fn max_abs_diff_is_infinite_across_spaces() {
    let a = Attribute {
        values: vec![1.0],
        space: SpaceTag::Rn,
    };
    let b = Attribute {
        values: vec![1.0, 0.0, 0.0],
        space: SpaceTag::R3xS2,
    };
    assert_eq!(a.max_abs_diff(&b), f64::INFINITY);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Applying one rigid motion to both points leaves every attribute map
    /// unchanged to within [`EPS_ATTR`].
    #[test]
    fn attributes_are_invariant_under_rigid_motions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for space in SPACES {
            let n = space.ambient_dim();
            let x_i = random_point(space, 3.0, &mut rng);
            let x_j = random_point(space, 3.0, &mut rng);
            let g = random_motion(n, 2.0, &mut rng).unwrap();
            let a = forward_attr(space, &x_i, &x_j).unwrap();
            let a_moved = forward_attr(
                space,
                &act(&g, &x_i).unwrap(),
                &act(&g, &x_j).unwrap(),
            )
            .unwrap();
            let dev = a.max_abs_diff(&a_moved);
            prop_assert!(
                dev <= EPS_ATTR,
                "{:?}: attribute moved by {} under a rigid motion",
                space,
                dev
            );
        }
    }

    /// The polar attribute is as invariant as the Cartesian one, and both
    /// agree through the polar-to-Cartesian identities away from the
    /// degenerate origin.
    #[test]
    fn polar_attribute_invariance_and_consistency(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_i = random_point(SpaceTag::R3xS2, 3.0, &mut rng);
        let x_j = random_point(SpaceTag::R3xS2, 3.0, &mut rng);
        let g = random_motion(3, 2.0, &mut rng).unwrap();
        let p = attr_r3s2_polar(&x_i, &x_j).unwrap();
        let p_moved = attr_r3s2_polar(
            &act(&g, &x_i).unwrap(),
            &act(&g, &x_j).unwrap(),
        )
        .unwrap();
        prop_assert!(p.max_abs_diff(&p_moved) <= EPS_ATTR);
        let c = attr_r3s2(&x_i, &x_j).unwrap();
        prop_assert!((p.values[0] * p.values[1].cos() - c.values[0]).abs() <= EPS_ATTR);
        prop_assert!((p.values[0] * p.values[1].sin() - c.values[1]).abs() <= EPS_ATTR);
        prop_assert!((p.values[2] - c.values[2]).abs() <= EPS_ATTR);
    }

    /// Round trip: the canonical representative of an attribute reproduces
    /// that attribute against the origin.
    #[test]
    fn representative_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for space in SPACES {
            let x_i = random_point(space, 3.0, &mut rng);
            let x_j = random_point(space, 3.0, &mut rng);
            let a = forward_attr(space, &x_i, &x_j).unwrap();
            let rep = representative_from_attr(&a).unwrap();
            let a_again = forward_attr(space, &origin(space), &rep).unwrap();
            let dev = a.max_abs_diff(&a_again);
            prop_assert!(
                dev <= EPS_ATTR,
                "{:?}: round trip deviated by {}",
                space,
                dev
            );
        }
    }

    /// The distance attribute is symmetric in its two arguments.
    #[test]
    fn distance_attribute_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let q: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let ij = attr_rn(&p, &q).unwrap();
        let ji = attr_rn(&q, &p).unwrap();
        prop_assert!(ij.max_abs_diff(&ji) <= EPS_ATTR);
    }

    /// Computing through the canonical frame agrees with the direct
    /// formulas for every space.
    #[test]
    fn frame_computation_matches_direct_formulas(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for space in SPACES {
            let x_i = random_point(space, 3.0, &mut rng);
            let x_j = random_point(space, 3.0, &mut rng);
            let direct = forward_attr(space, &x_i, &x_j).unwrap();
            let frame = canonical_frame(&x_i).unwrap();
            let framed = attr_with_frame(space, &frame, &x_j).unwrap();
            let dev = direct.max_abs_diff(&framed);
            prop_assert!(
                dev <= EPS_STABILIZER,
                "{:?}: frame path deviated by {}",
                space,
                dev
            );
        }
    }
}
