use std::f64::consts::E;

use gesture_core::diff::{Graph, Tensor};
use gesture_core::model::{attention, band_mask, raw_to_pose, Model, ModelConfig};
use gesture_core::quat::Quaternion;
use gesture_core::skeleton::{Pose, Skeleton};
use gesture_core::text::{embed_sentence, encode_attributes, tokenize, AgentAttributes, EmbeddingStore, SentenceEmbedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        d_word: 8,
        t_sen: 6,
        t_ges: 14,
        window: 4,
        ..ModelConfig::default()
    }
}

fn sentence(cfg: &ModelConfig, text: &str) -> SentenceEmbedding {
    let store = EmbeddingStore::empty(cfg.d_word).unwrap();
    embed_sentence(&tokenize(text).unwrap(), &store, cfg.t_sen).unwrap()
}

fn random_poses(seed: u64, n: usize, joints: usize) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let rots = (0..joints)
                .map(|_| {
                    let axis = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                    Quaternion::from_axis_angle(axis, rng.gen_range(-1.0..1.0))
                })
                .collect();
            Pose::new(rots).unwrap()
        })
        .collect()
}

fn teacher_rows(model: &Model, skeleton: &Skeleton, text: &str, targets: &[Pose]) -> Vec<Vec<u64>> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let attrs = encode_attributes(&AgentAttributes::default());
    let enc = model.encode(&mut g, &b, &sentence(&model.config, text), &attrs).unwrap();
    let out = model.teacher_forced(&mut g, &b, enc, skeleton.sos(), targets).unwrap();
    let v = g.value(out);
    (0..targets.len()).map(|r| v.row(r).iter().map(|x| x.to_bits()).collect()).collect()
}

#[test]
fn attention_two_by_two_by_hand() {
    let mut g = Graph::new();
    let q = g.leaf(Tensor::eye(2));
    let k = g.leaf(Tensor::eye(2));
    let v = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let open = attention(&mut g, q, k, v, None, 1.0).unwrap();
    let want = [(E + 3.0) / (E + 1.0), (2.0 * E + 4.0) / (E + 1.0), (1.0 + 3.0 * E) / (1.0 + E), (2.0 + 4.0 * E) / (1.0 + E)];
    for (a, b) in g.value(open).data().iter().zip(want) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
    let causal = attention(&mut g, q, k, v, Some(&band_mask(2, 2)), 1.0).unwrap();
    let want = [1.0, 2.0, (1.0 + 3.0 * E) / (1.0 + E), (2.0 + 4.0 * E) / (1.0 + E)];
    for (a, b) in g.value(causal).data().iter().zip(want) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
    let halved = attention(&mut g, q, k, v, Some(&band_mask(2, 1)), 2.0).unwrap();
    assert_eq!(g.value(halved).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn future_frames_never_reach_earlier_outputs() {
    let cfg = small_config();
    let skeleton = Skeleton::canonical();
    let model = Model::new(cfg.clone(), 21).unwrap();
    let targets = random_poses(1, cfg.t_ges, cfg.joints);
    let base = teacher_rows(&model, &skeleton, "we sat by the fire", &targets);
    for k in 0..cfg.t_ges - 1 {
        let mut changed = targets.clone();
        let noise = random_poses(100 + k as u64, cfg.t_ges - k, cfg.joints);
        changed[k..].clone_from_slice(&noise);
        let rows = teacher_rows(&model, &skeleton, "we sat by the fire", &changed);
        for r in 0..=k {
            assert_eq!(rows[r], base[r], "row {r} changed after perturbing frames {k}..");
        }
        assert_ne!(rows[k + 1], base[k + 1], "row {} should see frame {k}", k + 1);
    }
}

#[test]
fn generation_is_deterministic_and_reproducible_from_seed() {
    let cfg = small_config();
    let skeleton = Skeleton::canonical();
    let sent = sentence(&cfg, "hello there friend");
    let attrs = encode_attributes(&AgentAttributes::default());
    let a = Model::new(cfg.clone(), 4).unwrap();
    let b = Model::new(cfg.clone(), 4).unwrap();
    let ga = a.generate(&skeleton, &sent, &attrs, cfg.t_ges).unwrap();
    let gb = a.generate(&skeleton, &sent, &attrs, cfg.t_ges).unwrap();
    let gc = b.generate(&skeleton, &sent, &attrs, cfg.t_ges).unwrap();
    assert!(!ga.frames.is_empty());
    assert_eq!(ga.frames, gb.frames);
    assert_eq!(ga.frames, gc.frames);
    let other = Model::new(cfg.clone(), 5).unwrap().generate(&skeleton, &sent, &attrs, cfg.t_ges).unwrap();
    assert_ne!(ga.frames, other.frames);
}

#[test]
fn generation_agrees_with_teacher_forcing_on_its_own_output() {
    let cfg = ModelConfig { t_ges: 24, ..small_config() };
    let skeleton = Skeleton::canonical();
    let model = Model::new(cfg.clone(), 8).unwrap();
    let text = "a long story about the sea";
    let attrs = encode_attributes(&AgentAttributes::default());
    let generated = model.generate(&skeleton, &sentence(&cfg, text), &attrs, cfg.t_ges).unwrap();
    assert!(generated.frames.len() > cfg.history_len(), "history window never slides");

    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let enc = model.encode(&mut g, &b, &sentence(&cfg, text), &attrs).unwrap();
    let out = model.teacher_forced(&mut g, &b, enc, skeleton.sos(), &generated.frames).unwrap();
    for (t, want) in generated.frames.iter().enumerate() {
        let pose = raw_to_pose(g.value(out).row(t)).unwrap();
        assert!(pose.max_geodesic(want) < 1e-9, "frame {t}");
    }
}

#[test]
fn generation_respects_frame_limit_and_reports_last_frame() {
    let cfg = small_config();
    let skeleton = Skeleton::canonical();
    let model = Model::new(cfg.clone(), 9).unwrap();
    let attrs = encode_attributes(&AgentAttributes::default());
    let mut seen = Vec::new();
    let out = model
        .generate_with(&skeleton, &sentence(&cfg, "hi"), &attrs, 5, |t, _, _, last| {
            seen.push((t, last));
            Ok(())
        })
        .unwrap();
    assert_eq!(out.frames.len(), 5);
    assert_eq!(out.latencies.len(), 5);
    assert_eq!(seen, vec![(0, false), (1, false), (2, false), (3, false), (4, true)]);
}

#[test]
fn generation_rejects_mismatched_skeleton() {
    let cfg = small_config();
    let model = Model::new(cfg.clone(), 9).unwrap();
    let attrs = encode_attributes(&AgentAttributes::default());
    let chain = Skeleton::chain(&[[0.0; 3], [0.0, 1.0, 0.0]]).unwrap();
    assert!(model.generate(&chain, &sentence(&cfg, "hi"), &attrs, 3).is_err());
}
