use gesture_core::affect::{affective_distance, extract_affective, AffectTable};
use gesture_core::kinematics::forward_kinematics;
use gesture_core::quat::{euler_to_quat, quat_to_euler, EulerTriple, Quaternion};
use gesture_core::skeleton::{Pose, Skeleton};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat4 = [[f64; 4]; 4];

fn rodrigues(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|v| v / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn homogeneous(r: [[f64; 3]; 3], t: [f64; 3]) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Brute-force positions: chain of homogeneous transforms built from the
/// axis-angle pairs directly, never through quaternions.
fn oracle(skeleton: &Skeleton, rotations: &[([f64; 3], f64)]) -> Vec<[f64; 3]> {
    let mut world: Vec<Mat4> = Vec::new();
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let local = homogeneous(rodrigues(rotations[j].0, rotations[j].1), joint.offset);
        let m = match joint.parent {
            Some(p) => mat_mul(&world[p], &local),
            None => local,
        };
        world.push(m);
    }
    world.iter().map(|m| [m[0][3], m[1][3], m[2][3]]).collect()
}

fn random_axis_angles(rng: &mut ChaCha8Rng, n: usize) -> Vec<([f64; 3], f64)> {
    (0..n)
        .map(|_| {
            let axis = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0f64)];
            (axis, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        })
        .collect()
}

fn pose_of(aa: &[([f64; 3], f64)]) -> Pose {
    Pose::new(aa.iter().map(|(a, t)| Quaternion::from_axis_angle(*a, *t)).collect()).unwrap()
}

#[test]
fn forward_kinematics_matches_homogeneous_matrices() {
    let skeleton = Skeleton::canonical();
    assert_eq!(skeleton.len(), 23);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let aa = random_axis_angles(&mut rng, skeleton.len());
        let fk = forward_kinematics(&pose_of(&aa), &skeleton).unwrap();
        for (a, b) in fk.iter().zip(oracle(&skeleton, &aa)) {
            for k in 0..3 {
                worst = worst.max((a[k] - b[k]).abs());
            }
        }
    }
    assert!(worst <= 1e-9, "max position error {worst}");
}

#[test]
fn bone_lengths_are_preserved() {
    let skeleton = Skeleton::canonical();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let aa = random_axis_angles(&mut rng, skeleton.len());
    let fk = forward_kinematics(&pose_of(&aa), &skeleton).unwrap();
    for (j, joint) in skeleton.joints().iter().enumerate() {
        if let Some(p) = joint.parent {
            let d: f64 = (0..3).map(|k| (fk[j][k] - fk[p][k]).powi(2)).sum::<f64>().sqrt();
            let l: f64 = joint.offset.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((d - l).abs() < 1e-12, "joint {}", joint.name);
        }
    }
}

fn same_rotation(a: Quaternion, b: Quaternion) -> bool {
    a.dot(b).abs() > 1.0 - 1e-12
}

fn rotate_about_vertical(points: &[[f64; 3]], angle: f64) -> Vec<[f64; 3]> {
    let (s, c) = angle.sin_cos();
    points.iter().map(|p| [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]).collect()
}

fn features_close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn euler_round_trip_away_from_gimbal_lock(
        x in -3.1f64..3.1,
        y in -1.5f64..1.5,
        z in -3.1f64..3.1,
    ) {
        let q = euler_to_quat(EulerTriple::new(x, y, z)).unwrap();
        let e = quat_to_euler(q);
        prop_assert!((e.x - x).abs() < 1e-9 && (e.y - y).abs() < 1e-9 && (e.z - z).abs() < 1e-9, "{e:?}");
        prop_assert!(same_rotation(euler_to_quat(e).unwrap(), q));
    }

    #[test]
    fn quaternion_survives_euler_and_back(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aa = random_axis_angles(&mut rng, 1);
        let q = Quaternion::from_axis_angle(aa[0].0, aa[0].1);
        let back = euler_to_quat(quat_to_euler(q)).unwrap();
        prop_assert!(same_rotation(q, back), "{q:?} vs {back:?}");
        prop_assert!(same_rotation(q.neg(), back));
    }

    #[test]
    fn affect_features_ignore_scale_and_vertical_rotation(
        seed in 0u64..10_000,
        scale in 0.1f64..10.0,
        yaw in -3.1f64..3.1,
        shift in proptest::array::uniform3(-5.0f64..5.0),
    ) {
        let skeleton = Skeleton::canonical();
        let table = AffectTable::canonical().resolve(&skeleton).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aa: Vec<_> = random_axis_angles(&mut rng, skeleton.len())
            .into_iter()
            .map(|(a, t)| (a, 0.5 * t))
            .collect();
        let pos = forward_kinematics(&pose_of(&aa), &skeleton).unwrap();
        let base = extract_affective(&pos, &table);
        prop_assume!(!base.degenerate);

        let scaled: Vec<_> = pos.iter().map(|p| p.map(|v| v * scale)).collect();
        prop_assert!(features_close(&base.values, &extract_affective(&scaled, &table).values));

        let turned = rotate_about_vertical(&pos, yaw);
        prop_assert!(features_close(&base.values, &extract_affective(&turned, &table).values));

        let moved: Vec<_> = pos.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        prop_assert!(features_close(&base.values, &extract_affective(&moved, &table).values));
    }

    #[test]
    fn affective_distance_is_symmetric_and_zero_on_self(a in 0u64..5000, b in 0u64..5000) {
        let skeleton = Skeleton::canonical();
        let table = AffectTable::canonical().resolve(&skeleton).unwrap();
        let feats = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let aa = random_axis_angles(&mut rng, skeleton.len());
            extract_affective(&forward_kinematics(&pose_of(&aa), &skeleton).unwrap(), &table)
        };
        let (fa, fb) = (feats(a), feats(b));
        prop_assert_eq!(affective_distance(&fa, &fb), affective_distance(&fb, &fa));
        prop_assert_eq!(affective_distance(&fa, &fa), 0.0);
        prop_assert!(affective_distance(&fa, &fb) >= 0.0);
    }
}
