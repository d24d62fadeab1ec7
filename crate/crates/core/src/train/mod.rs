//! Losses, optimizer, training loop, dataset split and evaluation.

mod corpus;
mod loss;
mod metrics;

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use corpus::{
    fixture_attributes, read_corpus, synthesize_fixture_corpus, synthesize_sequence, write_corpus, FIXTURE_FPS,
    MANIFEST,
};
pub use loss::{
    affective_loss, angle_loss, loss_node, pose_loss, regularizer_node, sequence_terms, total_loss, wrap_pi,
    LossBreakdown, LossContext, LossSwitches, Target,
};
pub use metrics::{
    export_trajectories, mean_affective_error, mean_jerk, mean_pose_error, sequence_pose_error, JointReduction,
    TRAJECTORY_JOINTS,
};

use crate::affect::AffectTable;
use crate::diff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::{raw_to_pose, Bound, Model, ModelParams};
use crate::motion::GestureSequence;
use crate::skeleton::{Pose, Skeleton};
use crate::text::{embed_sentence, encode_attributes, tokenize, EmbeddingStore, SentenceEmbedding};

/// How the per-epoch decay factor is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayMode {
    /// Learning rate `lr · decay^epoch`.
    LearningRate,
    /// Parameters multiplied by `decay` after every epoch, constant rate.
    ParamShrink,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub switches: LossSwitches,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.999,
            decay_mode: DecayMode::LearningRate,
            batch_size: 16,
            epochs: 600,
            lambda: 1e-5,
            switches: LossSwitches::default(),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("learning rate and decay must be positive, decay ≤ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Train/validation/test indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `0..n` and cut 80/10/10; validation and test take `round(n/10)`
/// each, the remainder goes to training.
pub fn split(n: usize, seed: u64) -> Result<DataSplit> {
    if n < 10 {
        return Err(Error::Corpus(format!("need at least 10 items to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = (n as f64 / 10.0).round() as usize;
    let test = idx.split_off(n - tenth);
    let val = idx.split_off(n - 2 * tenth);
    Ok(DataSplit { train: idx, val, test })
}

/// A corpus item prepared for the model.
pub struct Example {
    pub sequence: GestureSequence,
    pub sentence: SentenceEmbedding,
    pub attrs: Vec<f64>,
    /// Frames padded with EoS to the model's `t_ges`.
    pub targets: Vec<Pose>,
    target: Target,
}

impl Example {
    pub fn new(
        sequence: GestureSequence,
        store: &EmbeddingStore,
        model: &Model,
        ctx: &LossContext,
    ) -> Result<Self> {
        let c = &model.config;
        if sequence.is_empty() {
            return Err(Error::EmptySequence);
        }
        if sequence.len() > c.t_ges {
            return Err(Error::Corpus(format!(
                "sequence of {} frames exceeds t_ges {}",
                sequence.len(),
                c.t_ges
            )));
        }
        let sentence = embed_sentence(&tokenize(&sequence.sentence)?, store, c.t_sen)?;
        let attrs = encode_attributes(&sequence.attributes).to_vec();
        let targets = sequence.padded(c.t_ges).frames;
        let target = ctx.target(&targets)?;
        Ok(Self {
            sequence,
            sentence,
            attrs,
            targets,
            target,
        })
    }
}

/// Prepare every sequence of `seqs` for `model`.
pub fn prepare(seqs: &[GestureSequence], store: &EmbeddingStore, model: &Model, ctx: &LossContext) -> Result<Vec<Example>> {
    seqs.iter().map(|s| Example::new(s.clone(), store, model, ctx)).collect()
}

/// Teacher-forced pass over one example: data terms, optional gradients of
/// their sum, and the raw predictions.
pub struct ItemPass {
    pub terms: [f64; 3],
    pub grads: Option<Vec<Tensor>>,
    pub raw: Tensor,
}

/// Teacher-forced forward pass of `ex` on `g` with parameters `b`; returns
/// the raw prediction node and the 3-vector of data terms.
pub fn item_graph(
    g: &mut Graph,
    b: &Bound,
    model: &Model,
    ex: &Example,
    skeleton: &Skeleton,
    ctx: &LossContext,
    switches: LossSwitches,
) -> Result<(NodeId, NodeId)> {
    let enc = model.encode(g, b, &ex.sentence, &ex.attrs)?;
    let raw = model.teacher_forced(g, b, enc, skeleton.sos(), &ex.targets)?;
    let terms = loss_node(g, raw, &ex.target, ctx, switches)?;
    Ok((raw, terms))
}

pub fn item_pass(
    model: &Model,
    ex: &Example,
    skeleton: &Skeleton,
    ctx: &LossContext,
    switches: LossSwitches,
    with_grads: bool,
) -> Result<ItemPass> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let (raw, terms_node) = item_graph(&mut g, &b, model, ex, skeleton, ctx, switches)?;
    let v = g.value(terms_node).data();
    let terms = [v[0], v[1], v[2]];
    let grads = if with_grads {
        let total = g.sum(terms_node);
        let gr = g.backward(total)?;
        Some(b.ids().iter().map(|&id| gr.wrt(id)).collect())
    } else {
        None
    };
    Ok(ItemPass {
        terms,
        grads,
        raw: g.value(raw).clone(),
    })
}

/// Value and gradient of `λ‖W‖`.
fn regularizer(params: &ModelParams, lambda: f64) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let ids: Vec<_> = params.tensors().iter().map(|t| g.leaf(t.clone())).collect();
    let r = regularizer_node(&mut g, &ids, lambda)?;
    let grads = g.backward(r)?;
    Ok((g.value(r).item(), ids.iter().map(|&i| grads.wrt(i)).collect()))
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    /// NaN without a validation set.
    pub val_total: f64,
    /// Teacher-forced normalized pose error on the validation set; NaN
    /// without one.
    pub mean_pose_error_val: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,lr,train_ang,train_pose,train_aff,train_reg,train_total,val_total,mean_pose_error_val";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let t = &self.train;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.lr, t.ang, t.pose, t.aff, t.reg, t.total, self.val_total, self.mean_pose_error_val
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_params: ModelParams,
}

fn diagnostic(batch: &[usize], data: &[Example], results: &[Result<ItemPass>]) -> String {
    let mut out = String::new();
    for (&i, r) in batch.iter().zip(results) {
        let state = match r {
            Ok(p) => format!("terms {:?}, finite grads {}", p.terms, p.grads.as_ref().is_some_and(|g| g.iter().all(Tensor::is_finite))),
            Err(e) => e.to_string(),
        };
        let _ = write!(out, "[item {i} {:?}: {state}] ", data[i].sequence.sentence);
    }
    out
}

/// Teacher-forced evaluation of `data`: mean data terms and the mean
/// normalized pose error of the (normalized) predictions.
pub fn evaluate_teacher_forced(
    model: &Model,
    data: &[Example],
    skeleton: &Arc<Skeleton>,
    ctx: &LossContext,
    switches: LossSwitches,
) -> Result<([f64; 3], f64)> {
    let passes: Vec<Result<ItemPass>> = data
        .par_iter()
        .map(|ex| item_pass(model, ex, skeleton, ctx, switches, false))
        .collect();
    let mut terms = [0.0; 3];
    let mut err = 0.0;
    for (ex, p) in data.iter().zip(passes) {
        let p = p?;
        for k in 0..3 {
            terms[k] += p.terms[k];
        }
        let frames = (0..ex.sequence.len())
            .map(|r| raw_to_pose(p.raw.row(r)))
            .collect::<Result<Vec<_>>>()?;
        let mut pred = ex.sequence.clone();
        pred.frames = frames;
        err += sequence_pose_error(&ex.sequence, &pred, JointReduction::Sum)?;
    }
    let n = data.len() as f64;
    Ok((terms.map(|t| t / n), err / n))
}

/// Adam training with per-epoch shuffling; the model ends with its final
/// parameters, the report carries the best-scoring ones (validation total,
/// or training total without a validation set).
pub fn train<F>(
    model: &mut Model,
    train_set: &[Example],
    val_set: &[Example],
    skeleton: &Arc<Skeleton>,
    table: &AffectTable,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(&EpochMetrics),
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Corpus("empty training set".into()));
    }
    let ctx = LossContext::new(skeleton, table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        metrics: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_params: model.params.clone(),
    };
    let mut best = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        let lr = match cfg.decay_mode {
            DecayMode::LearningRate => cfg.learning_rate * cfg.decay.powi(epoch as i32),
            DecayMode::ParamShrink => cfg.learning_rate,
        };
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut reg_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<ItemPass>> = batch
                .par_iter()
                .map(|&i| item_pass(model, &train_set[i], skeleton, &ctx, cfg.switches, true))
                .collect();
            let ok = results.iter().all(|r| {
                r.as_ref().is_ok_and(|p| {
                    p.terms.iter().all(|t| t.is_finite())
                        && p.grads.as_ref().is_some_and(|g| g.iter().all(Tensor::is_finite))
                })
            });
            if !ok {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    diagnostic: diagnostic(batch, train_set, &results),
                });
            }
            let (reg, mut grads) = regularizer(&model.params, cfg.lambda)?;
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let p = r?;
                for k in 0..3 {
                    sums[k] += p.terms[k];
                }
                for (acc, g) in grads.iter_mut().zip(p.grads.expect("requested")) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * v;
                    }
                }
            }
            reg_sum += reg;
            batches += 1;
            adam.update(model.params.tensors_mut(), &grads, lr);
        }
        if cfg.decay_mode == DecayMode::ParamShrink {
            for t in model.params.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= cfg.decay);
            }
        }
        let n = train_set.len() as f64;
        let train = LossBreakdown::from_terms(sums.map(|s| s / n), reg_sum / batches as f64);
        let (val_total, val_err) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let (terms, err) = evaluate_teacher_forced(model, val_set, skeleton, &ctx, cfg.switches)?;
            let reg = cfg.lambda * model.params.l2_norm();
            (terms.iter().sum::<f64>() + reg, err)
        };
        let m = EpochMetrics {
            epoch,
            lr,
            train,
            val_total,
            mean_pose_error_val: val_err,
        };
        let score = if val_set.is_empty() { train.total } else { val_total };
        if !score.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                diagnostic: format!("epoch score {score}"),
            });
        }
        if score < best {
            best = score;
            report.best_epoch = epoch;
            report.best_params = model.params.clone();
        }
        on_epoch(&m);
        report.metrics.push(m);
    }
    Ok(report)
}

/// Generate a sequence for each example with `model`, carrying over the
/// example's skeleton, fps and annotations.
pub fn generate_for(model: &Model, data: &[Example], skeleton: &Arc<Skeleton>) -> Result<Vec<GestureSequence>> {
    data.par_iter()
        .map(|ex| {
            let gen = model.generate(skeleton, &ex.sentence, &ex.attrs, model.config.t_ges)?;
            GestureSequence::new(
                skeleton.clone(),
                ex.sequence.fps,
                gen.frames,
                ex.sequence.attributes.clone(),
                ex.sequence.sentence.clone(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arithmetic() {
        let s = split(10, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let s = split(1447, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1157, 145, 145));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1447).collect::<Vec<_>>());
        assert_eq!(split(1447, 7).unwrap(), s);
        assert_ne!(split(1447, 8).unwrap(), s);
        assert!(split(9, 0).is_err());
    }

    #[test]
    fn metrics_header_has_nine_columns() {
        assert_eq!(METRICS_HEADER.split(',').count(), 9);
    }
}
