use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::diff::{Checkpoint, Tensor};
use crate::error::{Error, Result};

/// Named trainable tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// `(name, shape, is_bias)` for every tensor of `cfg`, in order.
pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let d = cfg.d_model;
    let dk = cfg.head_dim();
    let mut out = Vec::new();
    let linear = |out: &mut Vec<(String, Vec<usize>, bool)>, name: &str, i: usize, o: usize| {
        out.push((format!("{name}.w"), vec![i, o], false));
        out.push((format!("{name}.b"), vec![o], true));
    };
    let attention = |out: &mut Vec<(String, Vec<usize>, bool)>, name: &str| {
        for h in 0..cfg.heads {
            for m in ["wq", "wk", "wv"] {
                out.push((format!("{name}.h{h}.{m}"), vec![d, dk], false));
            }
        }
        out.push((format!("{name}.wo"), vec![d, d], false));
    };
    linear(&mut out, "word_proj", cfg.d_word, d);
    for b in 0..cfg.blocks {
        attention(&mut out, &format!("enc{b}.self"));
        linear(&mut out, &format!("enc{b}.fc1"), d, d);
        linear(&mut out, &format!("enc{b}.fc2"), d, d);
    }
    linear(&mut out, "fusion.fc1", d + cfg.attr_dim, d);
    linear(&mut out, "fusion.fc2", d, d);
    linear(&mut out, "pose_proj", cfg.pose_dim(), d);
    for b in 0..cfg.blocks {
        attention(&mut out, &format!("dec{b}.self"));
        attention(&mut out, &format!("dec{b}.cross"));
        linear(&mut out, &format!("dec{b}.fc1"), d, d);
        linear(&mut out, &format!("dec{b}.fc2"), d, d);
    }
    linear(&mut out, "head", d, cfg.pose_dim());
    out
}

/// Closed-form parameter count of `cfg`.
pub fn expected_parameter_count(cfg: &ModelConfig) -> usize {
    let (d, w, p, a, n) = (cfg.d_model, cfg.d_word, cfg.pose_dim(), cfg.attr_dim, cfg.blocks);
    let attention = 4 * d * d;
    let fc_pair = 2 * (d * d + d);
    let projections = (w * d + d) + (p * d + d) + (d * p + p);
    let fusion = ((d + a) * d + d) + (d * d + d);
    projections + fusion + n * (attention + fc_pair) + n * (2 * attention + fc_pair)
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, bias) in layout(cfg) {
            let t = if bias {
                Tensor::zeros(&shape)
            } else {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = (0..shape[0] * shape[1]).map(|_| rng.gen_range(-limit..=limit)).collect();
                Tensor::new(&shape, data)?
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self::from_parts(names, tensors))
    }

    fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    /// L2 norm over every trainable value.
    pub fn l2_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn to_checkpoint(&self, cfg: &ModelConfig) -> Checkpoint {
        Checkpoint {
            config: cfg.to_text(),
            tensors: self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect(),
        }
    }

    /// Rebuild from a checkpoint, checking every tensor against the layout
    /// of its embedded config.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(ModelConfig, Self)> {
        let cfg = ModelConfig::parse(&ckpt.config)?;
        let want = layout(&cfg);
        if want.len() != ckpt.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                want.len(),
                ckpt.tensors.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in want.iter().zip(&ckpt.tensors) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {got_name:?} {:?} does not match expected {name:?} {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {name:?} has non-finite values")));
            }
        }
        let (names, tensors) = ckpt.tensors.iter().cloned().unzip();
        Ok((cfg, Self::from_parts(names, tensors)))
    }
}

pub fn count_parameters(params: &ModelParams) -> usize {
    params.tensors.iter().map(Tensor::len).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelConfig {
        ModelConfig {
            blocks: 1,
            heads: 2,
            d_model: 8,
            d_word: 6,
            t_sen: 4,
            t_ges: 6,
            window: 3,
            joints: 2,
            ..Default::default()
        }
    }

    #[test]
    fn toy_count_by_hand() {
        // word 6·8+8=56, pose 8·8+8=72, head 8·8+8=72, fusion (17·8+8)+(64+8)=216,
        // encoder block 4·64 + 2·72 = 400, decoder block 8·64 + 2·72 = 656.
        let p = ModelParams::init(&toy(), 1).unwrap();
        assert_eq!(count_parameters(&p), 56 + 72 + 72 + 216 + 400 + 656);
        assert_eq!(count_parameters(&p), expected_parameter_count(&toy()));
    }

    #[test]
    fn zero_blocks_leaves_projections_fusion_and_head() {
        let cfg = ModelConfig { blocks: 0, ..toy() };
        assert_eq!(count_parameters(&ModelParams::init(&cfg, 0).unwrap()), 56 + 72 + 72 + 216);
    }

    #[test]
    fn biases_zero_and_weights_bounded() {
        let p = ModelParams::init(&toy(), 3).unwrap();
        assert!(p.get("head.b").unwrap().data().iter().all(|v| *v == 0.0));
        let w = p.get("word_proj.w").unwrap();
        let limit = (6.0f64 / 14.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(w.max_abs() > 0.0);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let cfg = toy();
        let p = ModelParams::init(&cfg, 9).unwrap();
        let ck = p.to_checkpoint(&cfg);
        let (c2, p2) = ModelParams::from_checkpoint(&ck).unwrap();
        assert_eq!((c2, p2), (cfg.clone(), p));
        let mut bad = ck.clone();
        bad.config = ModelConfig { d_model: 4, ..cfg }.to_text();
        assert!(ModelParams::from_checkpoint(&bad).is_err());
    }
}
