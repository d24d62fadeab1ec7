//! Evaluation metrics and trajectory export.

use std::fmt::Write as _;

use crate::affect::{extract_affective, affective_distance, AffectTable};
use crate::error::{Error, Result};
use crate::kinematics::{bounding_box_diagonal, forward_kinematics};
use crate::motion::GestureSequence;

/// How joint distances within a frame are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JointReduction {
    /// Sum over joints.
    #[default]
    Sum,
    /// Mean over joints.
    Mean,
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Normalized joint error of one pair. `pred` is cut or EoS-padded to the
/// length of `gt`.
pub fn sequence_pose_error(gt: &GestureSequence, pred: &GestureSequence, reduction: JointReduction) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    if gt.joints() != pred.joints() {
        return Err(Error::LengthMismatch(pred.joints(), gt.joints()));
    }
    let diag = bounding_box_diagonal(gt)?;
    if diag <= 0.0 {
        return Err(Error::Degenerate("ground-truth bounding box has zero diagonal".into()));
    }
    let pred = pred.padded(gt.len());
    let mut total = 0.0;
    for (g, p) in gt.frames.iter().zip(&pred.frames) {
        let pg = forward_kinematics(g, &gt.skeleton)?;
        let pp = forward_kinematics(p, &pred.skeleton)?;
        let s: f64 = pg.iter().zip(&pp).map(|(a, b)| distance(*a, *b)).sum();
        total += match reduction {
            JointReduction::Sum => s,
            JointReduction::Mean => s / pg.len() as f64,
        };
    }
    Ok(total / gt.len() as f64 / diag)
}

/// Mean over sequence pairs of [`sequence_pose_error`].
pub fn mean_pose_error(gt: &[GestureSequence], pred: &[GestureSequence], reduction: JointReduction) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        total += sequence_pose_error(g, p, reduction)?;
    }
    Ok(total / gt.len() as f64)
}

/// Mean norm of the second difference of joint positions.
pub fn mean_jerk(seq: &GestureSequence) -> Result<f64> {
    if seq.len() < 3 {
        return Ok(0.0);
    }
    let pos: Vec<Vec<[f64; 3]>> = seq
        .frames
        .iter()
        .map(|f| forward_kinematics(f, &seq.skeleton))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..pos.len() - 1 {
        for j in 0..pos[t].len() {
            let mut d = [0.0; 3];
            for c in 0..3 {
                d[c] = pos[t + 1][j][c] - 2.0 * pos[t][j][c] + pos[t - 1][j][c];
            }
            total += distance(d, [0.0; 3]);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean over pairs of the per-frame mean squared affective-feature distance.
pub fn mean_affective_error(gt: &[GestureSequence], pred: &[GestureSequence], table: &AffectTable) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        if g.is_empty() {
            return Err(Error::EmptySequence);
        }
        let tg = table.resolve(&g.skeleton)?;
        let tp = table.resolve(&p.skeleton)?;
        let p = p.padded(g.len());
        let mut s = 0.0;
        for (fg, fp) in g.frames.iter().zip(&p.frames) {
            let a = extract_affective(&forward_kinematics(fg, &g.skeleton)?, &tg);
            let b = extract_affective(&forward_kinematics(fp, &p.skeleton)?, &tp);
            s += affective_distance(&a, &b);
        }
        total += s / g.len() as f64;
    }
    Ok(total / gt.len() as f64)
}

/// CSV `t,joint,x,y,z` rows, `t` being the frame index.
pub fn export_trajectories(seq: &GestureSequence, joints: &[&str]) -> Result<String> {
    let idx: Vec<usize> = joints
        .iter()
        .map(|n| seq.skeleton.index_of(n))
        .collect::<Result<_>>()?;
    let mut out = String::from("t,joint,x,y,z\n");
    for (t, f) in seq.frames.iter().enumerate() {
        let p = forward_kinematics(f, &seq.skeleton)?;
        for (&j, name) in idx.iter().zip(joints) {
            let _ = writeln!(out, "{t},{name},{},{},{}", p[j][0], p[j][1], p[j][2]);
        }
    }
    Ok(out)
}

/// End effectors traced by default.
pub const TRAJECTORY_JOINTS: [&str; 3] = ["head", "lwrist", "rwrist"];
