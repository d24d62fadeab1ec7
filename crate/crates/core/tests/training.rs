use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::sync::Arc;

use gesture_core::affect::{AffectTable, EmotionLexicon};
use gesture_core::model::{Model, ModelConfig};
use gesture_core::motion::GestureSequence;
use gesture_core::quat::{euler_to_quat, quat_to_euler, EulerTriple, Quaternion};
use gesture_core::skeleton::{Pose, Skeleton};
use gesture_core::text::{AgentAttributes, EmbeddingStore};
use gesture_core::train::{
    affective_loss, angle_loss, mean_pose_error, metrics_csv, pose_loss, prepare, synthesize_fixture_corpus,
    synthesize_sequence, train, JointReduction, LossContext, TrainConfig,
};

fn fixture(n: usize) -> Vec<GestureSequence> {
    synthesize_fixture_corpus(n, 7, Arc::new(Skeleton::canonical()), &EmotionLexicon::builtin()).unwrap()
}

fn with_frames(seq: &GestureSequence, frames: Vec<Pose>) -> GestureSequence {
    GestureSequence { frames, ..seq.clone() }
}

fn on_skeleton(seq: &GestureSequence, skeleton: Arc<Skeleton>) -> GestureSequence {
    GestureSequence { skeleton, ..seq.clone() }
}

#[test]
fn identical_sequences_have_zero_loss() {
    let table = AffectTable::canonical();
    for s in fixture(4) {
        assert!(angle_loss(&s, &s).unwrap().abs() <= 1e-9);
        assert!(pose_loss(&s, &s).unwrap().abs() <= 1e-9);
        assert!(affective_loss(&s, &s, &table).unwrap().abs() <= 1e-9);
    }
}

#[test]
fn antipodal_quaternions_have_zero_loss() {
    let table = AffectTable::canonical();
    let s = &fixture(1)[0];
    let flipped: Vec<Pose> = s
        .frames
        .iter()
        .map(|f| Pose::new(f.rotations().iter().map(|q| q.neg()).collect()).unwrap())
        .collect();
    let p = with_frames(s, flipped);
    assert!(angle_loss(s, &p).unwrap() <= 1e-9);
    assert!(pose_loss(s, &p).unwrap() <= 1e-9);
    assert!(affective_loss(s, &p, &table).unwrap() <= 1e-9);
}

#[test]
fn pi_offset_in_one_euler_component_adds_no_angle_loss() {
    let s = &fixture(1)[0];
    let elbow = s.skeleton.index_of("lelbow").unwrap();
    for t in [1, s.len() / 2] {
        let mut frames = s.frames.clone();
        let mut rots = frames[t].rotations().to_vec();
        let e = quat_to_euler(rots[elbow]);
        rots[elbow] = euler_to_quat(EulerTriple::new(e.x + PI, e.y, e.z)).unwrap();
        frames[t] = Pose::new(rots).unwrap();
        let p = with_frames(s, frames);
        assert!(angle_loss(s, &p).unwrap() <= 1e-9, "frame {t}: {}", angle_loss(s, &p).unwrap());
        assert!(pose_loss(s, &p).unwrap() > 1e-6, "the offset is a real rotation");
    }
}

#[test]
fn uniform_skeleton_scaling_leaves_affective_loss_unchanged() {
    let table = AffectTable::canonical();
    let seqs = fixture(2);
    let (gt, other) = (&seqs[0], &seqs[1]);
    let n = gt.len().min(other.len());
    let gt = with_frames(gt, gt.frames[..n].to_vec());
    let pred = with_frames(&gt, other.frames[..n].to_vec());
    let base = affective_loss(&gt, &pred, &table).unwrap();
    assert!(base > 1e-6);
    for c in [0.5, 1.7, 3.0] {
        let big = Arc::new(gt.skeleton.scaled(c));
        let scaled_pred = on_skeleton(&pred, big.clone());
        assert!((affective_loss(&gt, &scaled_pred, &table).unwrap() - base).abs() <= 1e-9);
        let both = affective_loss(&on_skeleton(&gt, big.clone()), &scaled_pred, &table).unwrap();
        assert!((both - base).abs() <= 1e-9);
        assert!(affective_loss(&gt, &on_skeleton(&gt, big), &table).unwrap() <= 1e-9);
    }
}

fn two_joint(frames: Vec<Pose>) -> GestureSequence {
    let skeleton = Arc::new(Skeleton::chain(&[[0.0; 3], [0.0, 1.0, 0.0]]).unwrap());
    GestureSequence::new(skeleton, 30.0, frames, AgentAttributes::default(), String::new()).unwrap()
}

#[test]
fn mean_pose_error_by_hand() {
    let rest = Pose::identity(2);
    let turned = Pose::new(vec![Quaternion::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2), Quaternion::IDENTITY]).unwrap();
    let gt = two_joint(vec![rest.clone(), rest.clone()]);
    let pred = two_joint(vec![turned.clone(), rest.clone()]);
    // Frame 0: child at (−1, 0, 0) instead of (0, 1, 0); frame 1 exact; diagonal 1.
    let sum = mean_pose_error(&[gt.clone()], &[pred.clone()], JointReduction::Sum).unwrap();
    assert!((sum - SQRT_2 / 2.0).abs() < 1e-12, "{sum}");
    let mean = mean_pose_error(&[gt.clone()], &[pred], JointReduction::Mean).unwrap();
    assert!((mean - SQRT_2 / 4.0).abs() < 1e-12, "{mean}");

    let short = two_joint(vec![turned]);
    let padded = mean_pose_error(&[gt.clone()], &[short], JointReduction::Sum).unwrap();
    assert!((padded - SQRT_2 / 2.0).abs() < 1e-12, "short predictions are padded with the end pose");

    let both = mean_pose_error(&[gt.clone(), gt.clone()], &[gt.clone(), two_joint(vec![rest.clone(), rest])], JointReduction::Sum)
        .unwrap();
    assert_eq!(both, 0.0);
}

fn toy_setup(items: usize) -> (Model, Vec<gesture_core::train::Example>, Arc<Skeleton>, AffectTable) {
    let skeleton = Arc::new(Skeleton::canonical());
    let table = AffectTable::canonical();
    let lex = EmotionLexicon::builtin();
    let attrs = gesture_core::train::fixture_attributes(0, &lex).unwrap();
    let seqs: Vec<GestureSequence> = (0..items)
        .map(|i| synthesize_sequence(skeleton.clone(), attrs.clone(), "one small step", 12, i as f64).unwrap())
        .collect();
    let cfg = ModelConfig { d_model: 16, d_word: 8, t_sen: 5, t_ges: 12, window: 4, ..ModelConfig::default() };
    let model = Model::for_skeleton(cfg, 2, &skeleton).unwrap();
    let ctx = LossContext::new(&skeleton, &table).unwrap();
    let data = prepare(&seqs, &EmbeddingStore::empty(8).unwrap(), &model, &ctx).unwrap();
    (model, data, skeleton, table)
}

#[test]
fn single_item_loss_decreases_over_each_fifty_epoch_span() {
    let (mut model, data, skeleton, table) = toy_setup(1);
    let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
    let report = train(&mut model, &data, &[], &skeleton, &table, &cfg, |_| {}).unwrap();
    let totals: Vec<f64> = report.metrics.iter().map(|m| m.train.total).collect();
    for start in (0..150).step_by(50) {
        assert!(totals[start + 50] < totals[start], "epoch {start}: {} -> {}", totals[start], totals[start + 50]);
    }
    assert!(totals[199] < 0.5 * totals[0]);
}

#[test]
fn fixed_seed_gives_bitwise_identical_metrics() {
    let run = || {
        let (mut model, data, skeleton, table) = toy_setup(3);
        let cfg = TrainConfig { epochs: 15, batch_size: 2, seed: 42, ..TrainConfig::default() };
        let report = train(&mut model, &data, &data[..1], &skeleton, &table, &cfg, |_| {}).unwrap();
        let bits: Vec<u64> = report.best_params.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect();
        (metrics_csv(&report.metrics), bits)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!(a.lines().count(), 16);
}

#[test]
fn huge_regularizer_shrinks_parameters_every_epoch() {
    let (mut model, data, skeleton, table) = toy_setup(1);
    let cfg = TrainConfig { epochs: 30, lambda: 1e6, ..TrainConfig::default() };
    let before = model.params.l2_norm();
    let report = train(&mut model, &data, &[], &skeleton, &table, &cfg, |_| {}).unwrap();
    let norms: Vec<f64> = report.metrics.iter().map(|m| m.train.reg / cfg.lambda).collect();
    assert!((norms[0] - before).abs() < 1e-9 * before);
    for w in norms.windows(2) {
        assert!(w[1] < w[0], "{} -> {}", w[0], w[1]);
    }
    assert!(model.params.l2_norm() < norms[norms.len() - 1]);
}
