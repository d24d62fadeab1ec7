//! Encoder–decoder transformer mapping a sentence and agent attributes to a
//! pose sequence.
//!
//! The decoder is seeded with `window` SoS poses. During training the input
//! is `[SoS × window, gt_1 … gt_{T−1}]` and output row `window − 1 + t`
//! predicts `gt_{t+1}`. Self-attention is restricted to a causal band of
//! `window` rows, so a prediction depends on at most
//! [`ModelConfig::history_len`] input rows and generation can replay exactly
//! the same computation from a bounded history.

mod config;
mod params;

use std::sync::Arc;
use std::time::{Duration, Instant};

pub use config::{AttentionScale, ModelConfig};
pub use params::{count_parameters, expected_parameter_count, layout, ModelParams};

use crate::diff::{load_checkpoint, save_checkpoint, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::quat::{normalize_quaternion, Quaternion};
use crate::skeleton::{Pose, Skeleton};
use crate::text::SentenceEmbedding;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Frames within this geodesic distance of the EoS pose count towards
/// stopping.
pub const EOS_TOLERANCE: f64 = 1e-3;
/// Consecutive near-EoS frames that end generation.
pub const EOS_RUN: usize = 12;

/// Factor applied to the output head's initial weights by [`Model::for_skeleton`].
pub const HEAD_INIT_SCALE: f64 = 0.01;

/// Sinusoidal table for positions `start .. start + rows`.
pub fn positional_rows(start: usize, rows: usize, d_model: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * d_model);
    for t in start..start + rows {
        for c in 0..d_model {
            let i2 = (c - c % 2) as f64;
            let angle = t as f64 / 10000f64.powf(i2 / d_model as f64);
            data.push(if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(rows, d_model, data).expect("consistent shape")
}

pub fn positional_encoding(t: usize, d_model: usize) -> Tensor {
    positional_rows(0, t, d_model)
}

/// `mask[i·cols + j]` is true where query `i` may not see key `j`: keys after
/// the query, or `window` or more rows before it.
pub fn band_mask(rows: usize, window: usize) -> Arc<[bool]> {
    (0..rows * rows)
        .map(|k| {
            let (i, j) = (k / rows, k % rows);
            j > i || i - j >= window
        })
        .collect()
}

/// `softmax(Q Kᵀ / divisor) V`; masked scores are set to −∞.
pub fn attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: Option<&Arc<[bool]>>,
    divisor: f64,
) -> Result<NodeId> {
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let mut scores = g.scale(scores, 1.0 / divisor);
    if let Some(m) = mask {
        scores = g.masked_fill(scores, m.clone(), f64::NEG_INFINITY)?;
    }
    let w = g.softmax(scores, 1)?;
    g.matmul(w, v)
}

/// Model parameters placed on a graph as leaves.
pub struct Bound<'m> {
    params: &'m ModelParams,
    ids: Vec<NodeId>,
}

impl<'m> Bound<'m> {
    pub fn new(g: &mut Graph, params: &'m ModelParams) -> Self {
        let ids = params.tensors().iter().map(|t| g.leaf(t.clone())).collect();
        Self { params, ids }
    }

    /// Bind to existing nodes, one per parameter tensor in layout order.
    pub fn from_ids(params: &'m ModelParams, ids: Vec<NodeId>) -> Result<Self> {
        if ids.len() != params.tensors().len() {
            return Err(Error::shape("bind", &[ids.len()], &[params.tensors().len()]));
        }
        Ok(Self { params, ids })
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.params
            .position(name)
            .map(|i| self.ids[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    fn linear(&self, g: &mut Graph, x: NodeId, name: &str) -> Result<NodeId> {
        let y = g.matmul(x, self.get(&format!("{name}.w"))?)?;
        g.add_row(y, self.get(&format!("{name}.b"))?)
    }
}

/// Heads of `name` attending from `xq` to `xkv`, concatenated and projected.
pub fn multi_head(
    g: &mut Graph,
    b: &Bound,
    name: &str,
    heads: usize,
    xq: NodeId,
    xkv: NodeId,
    mask: Option<&Arc<[bool]>>,
    scale: AttentionScale,
) -> Result<NodeId> {
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.matmul(xq, b.get(&format!("{name}.h{h}.wq"))?)?;
        let k = g.matmul(xkv, b.get(&format!("{name}.h{h}.wk"))?)?;
        let v = g.matmul(xkv, b.get(&format!("{name}.h{h}.wv"))?)?;
        let key_dim = g.value(k).dims2()?.1;
        outs.push(attention(g, q, k, v, mask, scale.divisor(key_dim))?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
    g.matmul(cat, b.get(&format!("{name}.wo"))?)
}

/// A trained or freshly initialized model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Output of [`Model::generate`].
#[derive(Clone, Debug)]
pub struct Generated {
    /// Emitted frames, seed excluded.
    pub frames: Vec<Pose>,
    /// Wall-clock decode time of each frame.
    pub latencies: Vec<Duration>,
    /// Some raw output had a near-zero quaternion that was replaced by identity.
    pub degenerate: bool,
    pub stopped_at_eos: bool,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    /// [`Model::new`] with the output head anchored at `skeleton`'s SoS pose:
    /// head bias set to the flattened pose, head weights scaled by
    /// [`HEAD_INIT_SCALE`], so initial predictions sit near the rest pose.
    pub fn for_skeleton(config: ModelConfig, seed: u64, skeleton: &Skeleton) -> Result<Self> {
        if skeleton.len() != config.joints {
            return Err(Error::LengthMismatch(skeleton.len(), config.joints));
        }
        let mut model = Self::new(config, seed)?;
        let sos = skeleton.sos().flatten();
        let bias = model.params.get_mut("head.b").expect("layout has head.b");
        bias.data_mut().copy_from_slice(&sos);
        let w = model.params.get_mut("head.w").expect("layout has head.w");
        w.data_mut().iter_mut().for_each(|v| *v *= HEAD_INIT_SCALE);
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (config, params) = ModelParams::from_checkpoint(&load_checkpoint(path)?)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_checkpoint(path, &self.params.to_checkpoint(&self.config))
    }

    pub fn bind<'m>(&'m self, g: &mut Graph) -> Bound<'m> {
        Bound::new(g, &self.params)
    }

    fn residual(&self, g: &mut Graph, x: NodeId, y: NodeId) -> Result<NodeId> {
        let s = g.add(x, y)?;
        if self.config.layer_norm {
            g.layer_norm(s, LAYER_NORM_EPS)
        } else {
            Ok(s)
        }
    }

    fn feed_forward(&self, g: &mut Graph, b: &Bound, name: &str, x: NodeId) -> Result<NodeId> {
        let h = b.linear(g, x, &format!("{name}.fc1"))?;
        let h = g.relu(h);
        b.linear(g, h, &format!("{name}.fc2"))
    }

    /// Encoded sentence fused with the attributes, `t_sen × d_model`.
    pub fn encode(&self, g: &mut Graph, b: &Bound, sent: &SentenceEmbedding, attrs: &[f64]) -> Result<NodeId> {
        let c = &self.config;
        if sent.dim != c.d_word {
            return Err(Error::shape("encode", &[sent.rows, sent.dim], &[c.t_sen, c.d_word]));
        }
        if attrs.len() != c.attr_dim {
            return Err(Error::shape("encode", &[attrs.len()], &[c.attr_dim]));
        }
        let words = g.leaf(Tensor::matrix(sent.rows, sent.dim, sent.data.clone())?);
        let x = b.linear(g, words, "word_proj")?;
        let pe = g.leaf(positional_rows(0, sent.rows, c.d_model));
        let mut x = g.add(x, pe)?;
        for blk in 0..c.blocks {
            let a = multi_head(g, b, &format!("enc{blk}.self"), c.heads, x, x, None, c.scale)?;
            x = self.residual(g, x, a)?;
            let f = self.feed_forward(g, b, &format!("enc{blk}"), x)?;
            x = self.residual(g, x, f)?;
        }
        let attrs = g.leaf(Tensor::vector(attrs.to_vec()));
        let attrs = g.broadcast_rows(attrs, sent.rows)?;
        let fused = g.concat(&[x, attrs], 1)?;
        let h = b.linear(g, fused, "fusion.fc1")?;
        let h = g.relu(h);
        b.linear(g, h, "fusion.fc2")
    }

    /// Raw head outputs for every row of `poses` (`rows × 4J`), whose first
    /// row sits at absolute position `start`.
    pub fn decode(&self, g: &mut Graph, b: &Bound, poses: NodeId, start: usize, encoded: NodeId) -> Result<NodeId> {
        let c = &self.config;
        let rows = g.value(poses).dims2()?.0;
        let y = b.linear(g, poses, "pose_proj")?;
        let pe = g.leaf(positional_rows(start, rows, c.d_model));
        let mut y = g.add(y, pe)?;
        let mask = band_mask(rows, c.window);
        for blk in 0..c.blocks {
            let a = multi_head(g, b, &format!("dec{blk}.self"), c.heads, y, y, Some(&mask), c.scale)?;
            y = self.residual(g, y, a)?;
            let x = multi_head(g, b, &format!("dec{blk}.cross"), c.heads, y, encoded, None, c.scale)?;
            y = self.residual(g, y, x)?;
            let f = self.feed_forward(g, b, &format!("dec{blk}"), y)?;
            y = self.residual(g, y, f)?;
        }
        b.linear(g, y, "head")
    }

    /// Decoder input rows for teacher forcing towards `targets`:
    /// `window` SoS rows followed by all targets but the last.
    pub fn teacher_input(&self, sos: &Pose, targets: &[Pose]) -> Result<Tensor> {
        let w = self.config.window;
        let p = self.config.pose_dim();
        let rows = w + targets.len().saturating_sub(1);
        let mut data = Vec::with_capacity(rows * p);
        for _ in 0..w {
            data.extend(sos.flatten());
        }
        for t in targets.iter().take(targets.len().saturating_sub(1)) {
            data.extend(t.flatten());
        }
        Tensor::matrix(rows, p, data)
    }

    /// Raw predictions for each target frame (`targets.len() × 4J`) under
    /// teacher forcing.
    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        b: &Bound,
        encoded: NodeId,
        sos: &Pose,
        targets: &[Pose],
    ) -> Result<NodeId> {
        if targets.is_empty() {
            return Err(Error::EmptySequence);
        }
        let input = g.leaf(self.teacher_input(sos, targets)?);
        let out = self.decode(g, b, input, 0, encoded)?;
        let w = self.config.window;
        g.slice(out, 0, w - 1..w - 1 + targets.len())
    }

    /// Raw output for the frame following `history`, where `history[0]` sits
    /// at absolute position `start`. Only the final row is returned.
    pub fn decode_step(&self, history: &[Vec<f64>], start: usize, encoded: &Tensor) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::EmptySequence);
        }
        let p = self.config.pose_dim();
        if let Some(h) = history.iter().find(|h| h.len() != p) {
            return Err(Error::shape("decode_step", &[h.len()], &[p]));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let enc = g.leaf(encoded.clone());
        let data = history.iter().flatten().copied().collect();
        let input = g.leaf(Tensor::matrix(history.len(), p, data)?);
        let out = self.decode(&mut g, &b, input, start, enc)?;
        Ok(g.value(out).row(history.len() - 1).to_vec())
    }

    /// Fused sentence encoding as a plain tensor.
    pub fn encode_tensor(&self, sent: &SentenceEmbedding, attrs: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let e = self.encode(&mut g, &b, sent, attrs)?;
        Ok(g.value(e).clone())
    }

    /// Autoregressive generation of at most `max_frames` frames.
    pub fn generate(
        &self,
        skeleton: &Skeleton,
        sent: &SentenceEmbedding,
        attrs: &[f64],
        max_frames: usize,
    ) -> Result<Generated> {
        self.generate_with(skeleton, sent, attrs, max_frames, |_, _, _, _| Ok(()))
    }

    /// As [`Model::generate`], calling `on_frame(index, pose, latency, last)`
    /// as soon as each frame exists; `last` marks the final frame.
    pub fn generate_with<F>(
        &self,
        skeleton: &Skeleton,
        sent: &SentenceEmbedding,
        attrs: &[f64],
        max_frames: usize,
        mut on_frame: F,
    ) -> Result<Generated>
    where
        F: FnMut(usize, &Pose, Duration, bool) -> Result<()>,
    {
        let c = &self.config;
        if skeleton.len() != c.joints {
            return Err(Error::LengthMismatch(skeleton.len(), c.joints));
        }
        let encoded = self.encode_tensor(sent, attrs)?;
        let mut rows: Vec<Vec<f64>> = vec![skeleton.sos().flatten(); c.window];
        let mut out = Generated {
            frames: Vec::new(),
            latencies: Vec::new(),
            degenerate: false,
            stopped_at_eos: false,
        };
        let keep = c.history_len();
        let mut near_eos = 0;
        for t in 0..max_frames {
            let started = Instant::now();
            let start = rows.len().saturating_sub(keep);
            let raw = self.decode_step(&rows[start..], start, &encoded)?;
            let mut rots = Vec::with_capacity(c.joints);
            for q in raw.chunks_exact(4) {
                let n = normalize_quaternion([q[0], q[1], q[2], q[3]])?;
                out.degenerate |= n.degenerate;
                rots.push(n.q);
            }
            let pose = Pose::new(rots)?;
            let latency = started.elapsed();
            near_eos = if pose.max_geodesic(skeleton.eos()) <= EOS_TOLERANCE {
                near_eos + 1
            } else {
                0
            };
            let at_eos = near_eos >= EOS_RUN;
            on_frame(t, &pose, latency, at_eos || t + 1 == max_frames)?;
            rows.push(pose.flatten());
            out.frames.push(pose);
            out.latencies.push(latency);
            if at_eos {
                out.stopped_at_eos = true;
                break;
            }
        }
        Ok(out)
    }
}

/// Quaternions per joint of a raw output row.
pub fn raw_to_pose(raw: &[f64]) -> Result<Pose> {
    let rots = raw
        .chunks_exact(4)
        .map(|q| normalize_quaternion([q[0], q[1], q[2], q[3]]).map(|n| n.q))
        .collect::<Result<Vec<Quaternion>>>()?;
    Pose::new(rots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_rows_spot_values() {
        let pe = positional_encoding(5, 6);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let want = (3.0 / 10000f64.powf(2.0 / 6.0)).sin();
        assert_eq!(pe.at(3, 2), want);
        assert_eq!(positional_rows(3, 2, 6).row(0), pe.row(3));
    }

    #[test]
    fn band_mask_shape() {
        let m = band_mask(4, 2);
        let rows: Vec<Vec<bool>> = m.chunks(4).map(|r| r.to_vec()).collect();
        assert_eq!(rows[0], [false, true, true, true]);
        assert_eq!(rows[1], [false, false, true, true]);
        assert_eq!(rows[3], [true, true, false, false]);
    }
}
