use crate::diff::Real;
use crate::error::{Error, Result};
use crate::motion::GestureSequence;
use crate::quat::{quat_mul, rotate};
use crate::skeleton::{Pose, Skeleton};

/// World positions of every joint. The root stays at its own offset (the
/// origin for the canonical skeleton); each child sits at its parent's
/// position plus the parent's world rotation applied to the child's offset.
pub fn forward_kinematics(pose: &Pose, skeleton: &Skeleton) -> Result<Vec<[f64; 3]>> {
    if pose.len() != skeleton.len() {
        return Err(Error::LengthMismatch(pose.len(), skeleton.len()));
    }
    let rots: Vec<[f64; 4]> = pose.rotations().iter().map(|q| q.to_array()).collect();
    Ok(fk(&skeleton.parents(), &skeleton.offsets(), &rots))
}

pub(crate) fn fk<T: Real>(parents: &[Option<usize>], offsets: &[[f64; 3]], rots: &[[T; 4]]) -> Vec<[T; 3]> {
    let n = parents.len();
    let mut world: Vec<[T; 4]> = Vec::with_capacity(n);
    let mut pos: Vec<[T; 3]> = Vec::with_capacity(n);
    for j in 0..n {
        match parents[j] {
            None => {
                let c = rots[j][0];
                pos.push(offsets[j].map(|o| c.lift(o)));
                world.push(rots[j]);
            }
            Some(p) => {
                let r = rotate(world[p], offsets[j]);
                let pp = pos[p];
                pos.push([pp[0] + r[0], pp[1] + r[1], pp[2] + r[2]]);
                world.push(quat_mul(world[p], rots[j]));
            }
        }
    }
    pos
}

/// Space diagonal of the axis-aligned box around a set of points.
pub fn box_diagonal(points: &[[f64; 3]]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
}

/// Mean over frames of the per-frame bounding-box diagonal of all joints.
pub fn bounding_box_diagonal(seq: &GestureSequence) -> Result<f64> {
    if seq.frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for f in &seq.frames {
        total += box_diagonal(&forward_kinematics(f, &seq.skeleton)?);
    }
    Ok(total / seq.frames.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quaternion;

    #[test]
    fn identity_pose_accumulates_offsets() {
        let s = Skeleton::canonical();
        let p = forward_kinematics(&Pose::identity(s.len()), &s).unwrap();
        for (j, joint) in s.joints().iter().enumerate() {
            let mut path = Vec::new();
            let mut k = Some(j);
            while let Some(i) = k {
                path.push(i);
                k = s.joints()[i].parent;
            }
            let mut want = [0.0; 3];
            for &i in path.iter().rev() {
                for d in 0..3 {
                    want[d] += s.joints()[i].offset[d];
                }
            }
            assert_eq!(p[j], want, "{}", joint.name);
        }
    }

    #[test]
    fn half_turn_about_vertical_negates_horizontal() {
        let s = Skeleton::canonical();
        let base = forward_kinematics(&Pose::identity(s.len()), &s).unwrap();
        let mut rots = vec![Quaternion::IDENTITY; s.len()];
        rots[0] = Quaternion::from_axis_angle([0.0, 1.0, 0.0], std::f64::consts::PI);
        let turned = forward_kinematics(&Pose::new(rots).unwrap(), &s).unwrap();
        for (a, b) in base.iter().zip(&turned) {
            assert!((a[0] + b[0]).abs() < 1e-12);
            assert!((a[1] - b[1]).abs() < 1e-12);
            assert!((a[2] + b[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn box_diagonal_cases() {
        assert_eq!(box_diagonal(&[[0.3, 0.1, -0.2]; 4]), 0.0);
        let mut cube = Vec::new();
        for i in 0..8 {
            cube.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        assert!((box_diagonal(&cube) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wrong_pose_length_is_rejected() {
        let s = Skeleton::canonical();
        assert!(forward_kinematics(&Pose::identity(3), &s).is_err());
    }
}
