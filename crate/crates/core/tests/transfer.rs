use nalgebra::{UnitQuaternion, Vector3};
use portrait_core::face_model::{synthesize_basis, FaceParameters, ModelDims, GAZE_LIMIT};
use portrait_core::transfer::{
    apply_relative, apply_transfer, edit_parameters, make_relative, IndexedValue, ParameterEdit, TransferSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIMS: ModelDims = ModelDims {
    alpha: 4,
    beta: 3,
    delta: 5,
};

fn random_params(rng: &mut impl Rng) -> FaceParameters {
    let mut p = FaceParameters::neutral(DIMS);
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    p.rotation = UnitQuaternion::from_scaled_axis(axis);
    p.translation = Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(3.0..4.0),
    );
    p.alpha.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    p.beta.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    p.delta.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    p.gaze = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
    p.sh.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    p
}

fn sequence(seed: u64, n: usize) -> Vec<FaceParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity = random_params(&mut rng);
    (0..n)
        .map(|_| {
            let mut p = random_params(&mut rng);
            p.alpha = identity.alpha.clone();
            p.beta = identity.beta.clone();
            p
        })
        .collect()
}

fn yaw(deg: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg.to_radians())
}

#[test]
fn relative_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let reference = random_params(&mut rng);
        let back = apply_relative(&reference, &make_relative(&p, &reference).unwrap()).unwrap();
        assert!(back.rotation.angle_to(&p.rotation) < 1e-9);
        assert!((back.translation - p.translation).norm() < 1e-9);
        for (a, b) in back.delta.iter().zip(&p.delta).chain(back.gaze.iter().zip(&p.gaze)) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(back.alpha, reference.alpha);
        assert_eq!(back.sh, reference.sh);
    }
}

#[test]
fn self_transfer_is_exact() {
    let seq = sequence(2, 25);
    let all = TransferSpec {
        identity_geometry: true,
        ..Default::default()
    };
    for spec in [all, TransferSpec::default()] {
        let out = apply_transfer(&seq, &seq, &spec).unwrap();
        assert_eq!(out.params, seq);
        assert_eq!(out.repeated_target_frames, 0);
    }
    let later_ref = TransferSpec {
        source_reference_frame: 7,
        target_reference_frame: 7,
        ..Default::default()
    };
    assert_eq!(apply_transfer(&seq, &seq, &later_ref).unwrap().params, seq);
}

#[test]
fn half_rotation_scale_halves_yaw() {
    let mut source = sequence(3, 2);
    let mut target = sequence(4, 2);
    source[0].rotation = UnitQuaternion::from_euler_angles(0.1, 0.2, -0.3);
    source[1].rotation = yaw(20.0) * source[0].rotation;
    target[0].rotation = UnitQuaternion::from_euler_angles(-0.2, 0.05, 0.1);
    let spec = TransferSpec {
        rotation_scale: 0.5,
        ..Default::default()
    };
    let out = apply_transfer(&source, &target, &spec).unwrap();
    let delta = out.params[1].rotation * target[0].rotation.inverse();
    assert!((delta.angle() - 10f64.to_radians()).abs() < 1e-9);
    assert!(delta.angle_to(&yaw(10.0)) < 1e-9);
    // reference frame maps onto the target reference
    assert!(out.params[0].rotation.angle_to(&target[0].rotation) < 1e-12);
}

#[test]
fn translation_scale_and_camera_plane_mask() {
    let source = sequence(5, 3);
    let target = sequence(6, 3);
    let spec = TransferSpec {
        translation_scale: 0.5,
        translation_axes: [true, true, false],
        ..Default::default()
    };
    let out = apply_transfer(&source, &target, &spec).unwrap();
    for (o, s) in out.params.iter().zip(&source) {
        let d = s.translation - source[0].translation;
        assert!((o.translation.x - (target[0].translation.x + 0.5 * d.x)).abs() < 1e-12);
        assert!((o.translation.y - (target[0].translation.y + 0.5 * d.y)).abs() < 1e-12);
        assert_eq!(o.translation.z, target[0].translation.z);
    }
}

#[test]
fn dubbing_keeps_target_pose_and_gaze() {
    let source = sequence(7, 10);
    let target = sequence(8, 10);
    let out = apply_transfer(&source, &target, &TransferSpec::dubbing()).unwrap();
    for (f, o) in out.params.iter().enumerate() {
        assert_eq!(o.rotation, target[f].rotation);
        assert_eq!(o.translation, target[f].translation);
        assert_eq!(o.gaze, target[f].gaze);
        for k in 0..DIMS.delta {
            let expect = target[0].delta[k] + (source[f].delta[k] - source[0].delta[k]);
            assert_eq!(o.delta[k], expect);
        }
    }
}

#[test]
fn short_target_repeats_last_frame() {
    let source = sequence(9, 6);
    let target = sequence(10, 4);
    let out = apply_transfer(&source, &target, &TransferSpec::dubbing()).unwrap();
    assert_eq!(out.params.len(), 6);
    assert_eq!(out.repeated_target_frames, 2);
    assert_eq!(out.params[5].rotation, target[3].rotation);
}

#[test]
fn bad_reference_frames_rejected() {
    let seq = sequence(11, 3);
    let spec = TransferSpec {
        target_reference_frame: 3,
        ..Default::default()
    };
    assert!(apply_transfer(&seq, &seq, &spec).is_err());
    assert!(apply_transfer(&[], &seq, &TransferSpec::default()).is_err());
}

#[test]
fn frames_transfer_independently() {
    let source = sequence(12, 8);
    let target = sequence(13, 8);
    let spec = TransferSpec {
        rotation_scale: 0.7,
        ..Default::default()
    };
    let out = apply_transfer(&source, &target, &spec).unwrap();
    // permute everything but the shared reference frame 0
    let perm = [0, 5, 3, 7, 1, 2, 6, 4];
    let ps: Vec<_> = perm.iter().map(|&i| source[i].clone()).collect();
    let pt: Vec<_> = perm.iter().map(|&i| target[i].clone()).collect();
    let pout = apply_transfer(&ps, &pt, &spec).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(pout.params[k], out.params[i]);
    }
}

#[test]
fn opposite_yaw_edits_cancel() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = random_params(&mut rng);
    let step = |sign: f64| ParameterEdit {
        rotation: [0.0, sign * 5f64.to_radians(), 0.0],
        ..Default::default()
    };
    let a = edit_parameters(&p, &step(1.0)).unwrap().params;
    assert!(a.rotation.angle_to(&p.rotation) > 0.08);
    let b = edit_parameters(&a, &step(-1.0)).unwrap().params;
    assert!(b.rotation.angle_to(&p.rotation) < 1e-9);
    assert!((b.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
}

#[test]
fn identity_edit_moves_geometry_along_its_column() {
    let basis = synthesize_basis(
        2,
        200,
        ModelDims {
            alpha: 6,
            beta: 2,
            delta: 2,
        },
    )
    .unwrap();
    let p = FaceParameters::neutral(basis.dims());
    let sigma = basis.geometry_stddevs[3];
    let edit = ParameterEdit {
        identity: vec![IndexedValue {
            index: 3,
            value: 2.0 * sigma,
        }],
        ..Default::default()
    };
    let q = edit_parameters(&p, &edit).unwrap().params;
    let before = basis.evaluate_geometry(&p.alpha, &p.delta).unwrap();
    let after = basis.evaluate_geometry(&q.alpha, &q.delta).unwrap();
    let expect = basis.geometry_basis.column(3) * (2.0 * sigma);
    assert!((after - before - expect).amax() < 1e-12);
}

#[test]
fn additive_edits() {
    let p = FaceParameters::neutral(DIMS);
    let edit = ParameterEdit {
        translation: [0.1, 0.0, -0.2],
        expression: vec![IndexedValue { index: 2, value: 0.5 }],
        gaze: [0.1, -0.1, 0.0, GAZE_LIMIT],
        ..Default::default()
    };
    let out = edit_parameters(&p, &edit).unwrap();
    assert!(out.clamped_gaze.is_empty());
    assert_eq!(out.params.translation, p.translation + Vector3::new(0.1, 0.0, -0.2));
    assert_eq!(out.params.delta[2], 0.5);
    assert_eq!(out.params.gaze, [0.1, -0.1, 0.0, GAZE_LIMIT]);
}

fn arb_spec() -> impl Strategy<Value = TransferSpec> {
    (
        any::<[bool; 4]>(),
        0.0f64..=1.0,
        0.0f64..=1.0,
        any::<[bool; 3]>(),
        0usize..6,
        0usize..6,
    )
        .prop_filter("some component", |(f, ..)| f.iter().any(|b| *b))
        .prop_map(|(f, rs, ts, axes, sr, tr)| TransferSpec {
            pose: f[0],
            expression: f[1],
            gaze: f[2],
            identity_geometry: f[3],
            rotation_scale: rs,
            translation_scale: ts,
            translation_axes: axes,
            source_reference_frame: sr,
            target_reference_frame: tr,
        })
}

proptest! {
    #[test]
    fn disabled_components_preserved_and_rotations_unit(spec in arb_spec(), seed in 0u64..1000) {
        let source = sequence(seed, 6);
        let target = sequence(seed + 1000, 6);
        let out = apply_transfer(&source, &target, &spec).unwrap();
        prop_assert_eq!(out.params.len(), source.len());
        for (o, t) in out.params.iter().zip(&target) {
            prop_assert!((o.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
            prop_assert_eq!(&o.beta, &t.beta);
            prop_assert_eq!(o.sh, t.sh);
            if !spec.pose {
                prop_assert_eq!(o.rotation, t.rotation);
                prop_assert_eq!(o.translation, t.translation);
            }
            if !spec.expression {
                prop_assert_eq!(&o.delta, &t.delta);
            }
            if !spec.gaze {
                prop_assert_eq!(o.gaze, t.gaze);
            }
            if !spec.identity_geometry {
                prop_assert_eq!(&o.alpha, &t.alpha);
            }
        }
    }
}
