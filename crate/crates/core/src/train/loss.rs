//! Angle, pose and affective losses.
//!
//! The geometry is evaluated by the generic kernels from `quat`,
//! `kinematics` and `affect`. On the training path the raw network outputs
//! are lifted onto a [`ScalarTape`]; one reverse sweep per loss term gives the
//! Jacobian rows that back the [`LossOp`] node on the tensor graph.

use std::f64::consts::PI;

use crate::affect::{features, AffectTable, ResolvedTable};
use crate::diff::{CustomOp, Graph, NodeId, Real, ScalarTape, Tensor};
use crate::error::{Error, Result};
use crate::kinematics::fk;
use crate::motion::GestureSequence;
use crate::quat::{euler, normalize, Quaternion};
use crate::skeleton::{Pose, Skeleton};

/// Which data terms contribute to the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossSwitches {
    pub angle: bool,
    pub pose: bool,
    pub affective: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self {
            angle: true,
            pose: true,
            affective: true,
        }
    }
}

impl LossSwitches {
    pub fn none() -> Self {
        Self {
            angle: false,
            pose: false,
            affective: false,
        }
    }

    fn mask(self) -> [bool; 3] {
        [self.angle, self.pose, self.affective]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub ang: f64,
    pub pose: f64,
    pub aff: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_terms(data: [f64; 3], reg: f64) -> Self {
        Self {
            ang: data[0],
            pose: data[1],
            aff: data[2],
            reg,
            total: data[0] + data[1] + data[2] + reg,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.ang, self.pose, self.aff, self.reg, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `d − π·round(d/π)`: differences that are whole multiples of π vanish.
pub fn wrap_pi(d: f64) -> f64 {
    d - PI * (d / PI).round()
}

fn wrap<T: Real>(d: T) -> T {
    d - PI * (d.value() / PI).round()
}

/// Fixed ground-truth data for one sequence: Euler angles, FK positions and
/// affective features per frame.
pub struct Target {
    quats: Vec<Vec<Quaternion>>,
    euler: Vec<Vec<[f64; 3]>>,
    positions: Vec<Vec<[f64; 3]>>,
    affect: Vec<Vec<f64>>,
}

/// Skeleton and feature table shared by all loss evaluations.
pub struct LossContext {
    parents: Vec<Option<usize>>,
    offsets: Vec<[f64; 3]>,
    table: ResolvedTable,
}

impl LossContext {
    pub fn new(skeleton: &Skeleton, table: &AffectTable) -> Result<Self> {
        Ok(Self {
            parents: skeleton.parents(),
            offsets: skeleton.offsets(),
            table: table.resolve(skeleton)?,
        })
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn target(&self, frames: &[Pose]) -> Result<Target> {
        let mut t = Target {
            quats: Vec::with_capacity(frames.len()),
            euler: Vec::with_capacity(frames.len()),
            positions: Vec::with_capacity(frames.len()),
            affect: Vec::with_capacity(frames.len()),
        };
        for f in frames {
            if f.len() != self.joints() {
                return Err(Error::LengthMismatch(f.len(), self.joints()));
            }
            let rots: Vec<[f64; 4]> = f.rotations().iter().map(|q| q.to_array()).collect();
            let pos = fk(&self.parents, &self.offsets, &rots);
            t.affect.push(features(&pos, &self.table).0);
            t.positions.push(pos);
            t.euler.push(rots.iter().map(|q| euler(*q)).collect());
            t.quats.push(f.rotations().to_vec());
        }
        Ok(t)
    }
}

/// `[angle, pose, affective]` for unit predictions `pred[frame][joint]`
/// (already hemisphere-aligned or not; the geometry is sign-invariant).
fn terms<T: Real>(pred: &[Vec<[T; 4]>], target: &Target, ctx: &LossContext, on: [bool; 3]) -> [Option<T>; 3] {
    let mut ang: Option<T> = None;
    let mut pose: Option<T> = None;
    let mut aff: Option<T> = None;
    let acc = |slot: &mut Option<T>, v: T| {
        *slot = Some(match *slot {
            Some(s) => s + v,
            None => v,
        })
    };
    let mut prev: Option<Vec<[T; 3]>> = None;
    for (t, frame) in pred.iter().enumerate() {
        if on[0] {
            let e: Vec<[T; 3]> = frame.iter().map(|q| euler(*q)).collect();
            for j in 0..e.len() {
                for c in 0..3 {
                    let d = wrap(e[j][c] - target.euler[t][j][c]);
                    acc(&mut ang, d * d);
                    if t > 0 {
                        let dp = e[j][c] - prev.as_ref().expect("previous frame")[j][c];
                        let dg = target.euler[t][j][c] - target.euler[t - 1][j][c];
                        let dd = wrap(dp - dg);
                        acc(&mut ang, dd * dd);
                    }
                }
            }
            prev = Some(e);
        }
        if on[1] || on[2] {
            let pos = fk(&ctx.parents, &ctx.offsets, frame);
            if on[1] {
                for (p, g) in pos.iter().zip(&target.positions[t]) {
                    for c in 0..3 {
                        let d = p[c] - g[c];
                        acc(&mut pose, d * d);
                    }
                }
            }
            if on[2] {
                let (a, _) = features(&pos, &ctx.table);
                for (x, y) in a.iter().zip(&target.affect[t]) {
                    let d = *x - *y;
                    acc(&mut aff, d * d);
                }
            }
        }
    }
    [ang, pose, aff]
}

fn flip_to(q: [f64; 4], reference: Quaternion) -> [f64; 4] {
    let r = reference.to_array();
    let dot: f64 = (0..4).map(|k| q[k] * r[k]).sum();
    if dot < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

/// Loss terms between two unit pose sequences.
pub fn sequence_terms(pred: &[Pose], target: &Target, ctx: &LossContext, switches: LossSwitches) -> Result<[f64; 3]> {
    if pred.len() != target.quats.len() {
        return Err(Error::LengthMismatch(pred.len(), target.quats.len()));
    }
    let frames: Vec<Vec<[f64; 4]>> = pred
        .iter()
        .zip(&target.quats)
        .map(|(p, g)| {
            p.rotations()
                .iter()
                .zip(g)
                .map(|(q, r)| flip_to(q.to_array(), *r))
                .collect()
        })
        .collect();
    let t = terms(&frames, target, ctx, switches.mask());
    Ok(t.map(|v| v.unwrap_or(0.0)))
}

/// Per-term Jacobians of the loss with respect to raw outputs.
struct LossOp {
    jac: [Option<Vec<f64>>; 3],
}

impl CustomOp for LossOp {
    fn name(&self) -> &'static str {
        "pose_losses"
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Vec<Tensor> {
        let mut g = vec![0.0; inputs[0].len()];
        for (k, j) in self.jac.iter().enumerate() {
            if let Some(j) = j {
                let w = grad_out.data()[k];
                for (o, d) in g.iter_mut().zip(j) {
                    *o += w * d;
                }
            }
        }
        vec![Tensor::new(inputs[0].shape(), g).expect("input shape")]
    }
}

/// Append the `[angle, pose, affective]` loss vector of raw predictions
/// `raw` (`frames × 4J`) against `target`. Each joint's raw quaternion is
/// normalized (near-zero ones become identity) and hemisphere-aligned to the
/// target before the geometry is evaluated.
pub fn loss_node(
    g: &mut Graph,
    raw: NodeId,
    target: &Target,
    ctx: &LossContext,
    switches: LossSwitches,
) -> Result<NodeId> {
    let value = g.value(raw);
    let (frames, width) = value.dims2()?;
    let j = ctx.joints();
    if width != 4 * j || frames != target.quats.len() {
        return Err(Error::shape("pose_losses", value.shape(), &[target.quats.len(), 4 * j]));
    }
    let on = switches.mask();
    if !value.is_finite() {
        return Err(Error::NonFinite("network output"));
    }
    let tape = ScalarTape::with_capacity(frames * j * 400);
    let inputs: Vec<_> = value.data().iter().map(|&v| tape.var(v)).collect();
    let mut pred = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut row = Vec::with_capacity(j);
        for k in 0..j {
            let base = (t * j + k) * 4;
            let q = [inputs[base], inputs[base + 1], inputs[base + 2], inputs[base + 3]];
            let (mut q, _) = normalize(q);
            let r = target.quats[t][k].to_array();
            let dot: f64 = (0..4).map(|c| q[c].value() * r[c]).sum();
            if dot < 0.0 {
                q = q.map(|v| -v);
            }
            row.push(q);
        }
        pred.push(row);
    }
    let out = terms(&pred, target, ctx, on);
    let mut vals = [0.0; 3];
    let mut jac: [Option<Vec<f64>>; 3] = [None, None, None];
    for k in 0..3 {
        if let Some(v) = out[k] {
            vals[k] = v.value();
            let adj = tape.adjoints(&[(v, 1.0)]);
            jac[k] = Some(inputs.iter().map(|x| adj[x.index()]).collect());
        }
    }
    Ok(g.custom(&[raw], Tensor::vector(vals.to_vec()), Box::new(LossOp { jac })))
}

/// `λ · ‖W‖₂` over the given parameter leaves.
pub fn regularizer_node(g: &mut Graph, params: &[NodeId], lambda: f64) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for &p in params {
        let sq = g.square(p);
        let s = g.sum(sq);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.leaf(Tensor::scalar(0.0)),
    };
    let norm = g.sqrt(total);
    Ok(g.scale(norm, lambda))
}

fn check_pair(gt: &GestureSequence, pred: &GestureSequence) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if gt.joints() != pred.joints() {
        return Err(Error::LengthMismatch(pred.joints(), gt.joints()));
    }
    Ok(())
}

fn pair_terms(gt: &GestureSequence, pred: &GestureSequence, table: &AffectTable, on: LossSwitches) -> Result<[f64; 3]> {
    check_pair(gt, pred)?;
    let ctx_gt = LossContext::new(&gt.skeleton, table)?;
    let target = ctx_gt.target(&gt.frames)?;
    // Predictions are placed on their own skeleton, so a rescaled prediction
    // skeleton is seen by the pose and affective terms.
    let ctx_pred = LossContext::new(&pred.skeleton, table)?;
    let frames: Vec<Vec<[f64; 4]>> = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| {
            p.rotations()
                .iter()
                .zip(g.rotations())
                .map(|(q, r)| flip_to(q.to_array(), *r))
                .collect()
        })
        .collect();
    Ok(terms(&frames, &target, &ctx_pred, on.mask()).map(|v| v.unwrap_or(0.0)))
}

pub fn angle_loss(gt: &GestureSequence, pred: &GestureSequence) -> Result<f64> {
    let on = LossSwitches {
        angle: true,
        ..LossSwitches::none()
    };
    Ok(pair_terms(gt, pred, &AffectTable::for_skeleton(&gt.skeleton), on)?[0])
}

pub fn pose_loss(gt: &GestureSequence, pred: &GestureSequence) -> Result<f64> {
    let on = LossSwitches {
        pose: true,
        ..LossSwitches::none()
    };
    Ok(pair_terms(gt, pred, &AffectTable::for_skeleton(&gt.skeleton), on)?[1])
}

pub fn affective_loss(gt: &GestureSequence, pred: &GestureSequence, table: &AffectTable) -> Result<f64> {
    let on = LossSwitches {
        affective: true,
        ..LossSwitches::none()
    };
    Ok(pair_terms(gt, pred, table, on)?[2])
}

/// All terms plus `λ‖W‖` over `param_norm`, honoring `switches`.
pub fn total_loss(
    gt: &GestureSequence,
    pred: &GestureSequence,
    param_norm: f64,
    lambda: f64,
    switches: LossSwitches,
) -> Result<LossBreakdown> {
    let data = pair_terms(gt, pred, &AffectTable::for_skeleton(&gt.skeleton), switches)?;
    Ok(LossBreakdown::from_terms(data, lambda * param_norm))
}
